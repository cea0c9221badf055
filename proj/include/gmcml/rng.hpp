#pragma once

// Deterministic RNG used everywhere. Distributions are implemented by hand
// so stream state serializes exactly and draws are reproducible.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace gmcml {

class Rng {
public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    double uniform(double a, double b) { return a + (b - a) * unit(); }

    // uniform in [0,1)
    double unit() {
        return static_cast<double>(eng_() >> 11) * (1.0 / 9007199254740992.0);
    }

    // standard normal via Box-Muller (no cached second draw)
    double normal() {
        double u1 = unit();
        while (u1 <= 0.0) u1 = unit();
        const double u2 = unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        return eng_() % n;
    }

    uint64_t raw() { return eng_(); }

    std::string save_state() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }
    void load_state(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
        if (is.fail()) throw std::runtime_error("Rng::load_state: malformed state string");
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace gmcml
