#pragma once

// Dense tensors with reverse-mode automatic differentiation.
// Tensors are shared handles; ops record backward closures on the
// currently active Tape (RAII-scoped, single use).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gmcml {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

struct TensorData {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily
    bool requires_grad = false;
};

class Tensor {
public:
    Tensor() : d_(std::make_shared<TensorData>()) {}

    explicit Tensor(Shape shape, double fill = 0.0) : d_(std::make_shared<TensorData>()) {
        for (int e : shape)
            if (e <= 0) throw std::invalid_argument("Tensor: non-positive extent in " + shape_str(shape));
        d_->shape = std::move(shape);
        d_->data.assign(static_cast<size_t>(numel(d_->shape)), fill);
    }

    Tensor(Shape shape, std::vector<double> values) : d_(std::make_shared<TensorData>()) {
        if (static_cast<int64_t>(values.size()) != numel(shape))
            throw std::invalid_argument("Tensor: value count does not match shape " + shape_str(shape));
        d_->shape = std::move(shape);
        d_->data = std::move(values);
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const Shape& shape() const { return d_->shape; }
    int64_t size() const { return static_cast<int64_t>(d_->data.size()); }
    std::vector<double>& data() { return d_->data; }
    const std::vector<double>& data() const { return d_->data; }
    double item() const {
        if (size() != 1) throw std::invalid_argument("Tensor::item: not a scalar, shape " + shape_str(shape()));
        return d_->data[0];
    }

    void set_requires_grad(bool b) { d_->requires_grad = b; }
    bool requires_grad() const { return d_->requires_grad; }

    std::vector<double>& grad() {
        if (d_->grad.size() != d_->data.size()) d_->grad.assign(d_->data.size(), 0.0);
        return d_->grad;
    }
    const std::vector<double>& grad() const { return d_->grad; }
    bool has_grad() const { return d_->grad.size() == d_->data.size(); }
    void zero_grad() { d_->grad.assign(d_->data.size(), 0.0); }

    bool all_finite() const {
        for (double v : d_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::shared_ptr<TensorData> ptr() const { return d_; }

private:
    std::shared_ptr<TensorData> d_;
};

namespace detail {
inline void ensure_grad(TensorData* t) {
    if (t->grad.size() != t->data.size()) t->grad.assign(t->data.size(), 0.0);
}
}  // namespace detail

// Single-use tape of backward closures. Activating a Tape makes every
// subsequent op record onto it until the Tape is destroyed.
class Tape {
public:
    Tape() : prev_(active_ref()) { active_ref() = this; }
    ~Tape() { active_ref() = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_ref(); }

    void record(std::function<void()> back) { ops_.push_back(std::move(back)); }

    void backward(const Tensor& loss) {
        if (consumed_) throw std::logic_error("Tape::backward: tape already consumed");
        if (loss.size() != 1)
            throw std::invalid_argument("Tape::backward: loss must be scalar, got " + shape_str(loss.shape()));
        consumed_ = true;
        detail::ensure_grad(loss.ptr().get());
        loss.ptr()->grad[0] = 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    bool consumed() const { return consumed_; }
    size_t op_count() const { return ops_.size(); }

private:
    static Tape*& active_ref() {
        thread_local Tape* t = nullptr;
        return t;
    }
    std::vector<std::function<void()>> ops_;
    Tape* prev_ = nullptr;
    bool consumed_ = false;
};

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

// C[m,n] = A[m,k] * B[k,n]
inline void matmul_raw(const double* A, const double* B, double* C, int m, int k, int n) {
    std::fill(C, C + static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        double* crow = C + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double a = A[static_cast<size_t>(i) * k + p];
            if (a == 0.0) continue;
            const double* brow = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// C[m,k] += A[m,n] * B[k,n]^T
inline void matmul_abt_acc(const double* A, const double* B, double* C, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const double* arow = A + static_cast<size_t>(i) * n;
        double* crow = C + static_cast<size_t>(i) * k;
        for (int r = 0; r < k; ++r) {
            const double* brow = B + static_cast<size_t>(r) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
            crow[r] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
inline void matmul_atb_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int p = 0; p < m; ++p) {
        const double* arow = A + static_cast<size_t>(p) * k;
        const double* brow = B + static_cast<size_t>(p) * n;
        for (int r = 0; r < k; ++r) {
            const double a = arow[r];
            if (a == 0.0) continue;
            double* crow = C + static_cast<size_t>(r) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, Fwd f, Bwd dfdx) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = f(a.data()[i]);
    if (Tape* t = Tape::active()) {
        auto ap = a.ptr();
        auto op = out.ptr();
        t->record([ap, op, dfdx]() {
            if (op->grad.empty()) return;  // branch never reached the loss
            ensure_grad(ap.get());
            for (size_t i = 0; i < ap->data.size(); ++i)
                ap->grad[i] += op->grad[i] * dfdx(ap->data[i], op->data[i]);
        });
    }
    return out;
}

}  // namespace detail

// ---- elementwise ----

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (Tape* t = Tape::active()) {
        auto ap = a.ptr(), bp = b.ptr(), op = out.ptr();
        t->record([ap, bp, op]() {
            if (op->grad.empty()) return;  // branch never reached the loss
            detail::ensure_grad(ap.get());
            detail::ensure_grad(bp.get());
            for (size_t i = 0; i < op->grad.size(); ++i) {
                ap->grad[i] += op->grad[i];
                bp->grad[i] += op->grad[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (Tape* t = Tape::active()) {
        auto ap = a.ptr(), bp = b.ptr(), op = out.ptr();
        t->record([ap, bp, op]() {
            if (op->grad.empty()) return;  // branch never reached the loss
            detail::ensure_grad(ap.get());
            detail::ensure_grad(bp.get());
            for (size_t i = 0; i < op->grad.size(); ++i) {
                ap->grad[i] += op->grad[i];
                bp->grad[i] -= op->grad[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (Tape* t = Tape::active()) {
        auto ap = a.ptr(), bp = b.ptr(), op = out.ptr();
        t->record([ap, bp, op]() {
            if (op->grad.empty()) return;  // branch never reached the loss
            detail::ensure_grad(ap.get());
            detail::ensure_grad(bp.get());
            for (size_t i = 0; i < op->grad.size(); ++i) {
                ap->grad[i] += op->grad[i] * bp->data[i];
                bp->grad[i] += op->grad[i] * ap->data[i];
            }
        });
    }
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "div");
    for (double v : b.data())
        if (v == 0.0) throw std::domain_error("div: division by zero");
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] / b.data()[i];
    if (Tape* t = Tape::active()) {
        auto ap = a.ptr(), bp = b.ptr(), op = out.ptr();
        t->record([ap, bp, op]() {
            if (op->grad.empty()) return;  // branch never reached the loss
            detail::ensure_grad(ap.get());
            detail::ensure_grad(bp.get());
            for (size_t i = 0; i < op->grad.size(); ++i) {
                ap->grad[i] += op->grad[i] / bp->data[i];
                bp->grad[i] -= op->grad[i] * ap->data[i] / (bp->data[i] * bp->data[i]);
            }
        });
    }
    return out;
}

// single element of a rank-1 tensor as a scalar tensor
inline Tensor pick(const Tensor& a, int index) {
    if (index < 0 || index >= a.size())
        throw std::out_of_range("pick: index " + std::to_string(index) + " out of range for " +
                                shape_str(a.shape()));
    Tensor out = Tensor::scalar(a.data()[index]);
    if (Tape* t = Tape::active()) {
        auto ap = a.ptr();
        auto op = out.ptr();
        t->record([ap, op, index]() {
            if (op->grad.empty()) return;  // branch never reached the loss
            detail::ensure_grad(ap.get());
            ap->grad[index] += op->grad[0];
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    return detail::unary_op(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
    return detail::unary_op(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor tanh_t(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return std::tanh(x); },
                            [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid_t(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                            [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu_t(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                            [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor exp_t(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log_t(const Tensor& a) {
    for (double v : a.data())
        if (v <= 0.0) throw std::domain_error("log_t: non-positive input " + std::to_string(v));
    return detail::unary_op(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor square_t(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// max(a, lo); subgradient at the kink is 0 (gradient flows only where x > lo)
inline Tensor clamp_min(const Tensor& a, double lo) {
    return detail::unary_op(a, [lo](double x) { return x > lo ? x : lo; },
                            [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

// clamp into [lo, hi]; gradient zero outside the open interval
inline Tensor clamp_t(const Tensor& a, double lo, double hi) {
    return detail::unary_op(a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
                            [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---- reductions ----

inline Tensor sum_t(const Tensor& a) {
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    Tensor out = Tensor::scalar(s);
    if (Tape* t = Tape::active()) {
        auto ap = a.ptr(), op = out.ptr();
        t->record([ap, op]() {
            if (op->grad.empty()) return;  // branch never reached the loss
            detail::ensure_grad(ap.get());
            const double g = op->grad[0];
            for (double& v : ap->grad) v += g;
        });
    }
    return out;
}

inline Tensor mean_t(const Tensor& a) { return scale(sum_t(a), 1.0 / static_cast<double>(a.size())); }

// ---- shape ops ----

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                                    shape_str(shape));
    Tensor out(std::move(shape), a.data());
    if (Tape* t = Tape::active()) {
        auto ap = a.ptr(), op = out.ptr();
        t->record([ap, op]() {
            if (op->grad.empty()) return;  // branch never reached the loss
            detail::ensure_grad(ap.get());
            for (size_t i = 0; i < ap->grad.size(); ++i) ap->grad[i] += op->grad[i];
        });
    }
    return out;
}

// concat along the channel axis of [c,h,w] tensors
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 3 || b.shape().size() != 3 || a.shape()[1] != b.shape()[1] ||
        a.shape()[2] != b.shape()[2])
        throw std::invalid_argument("concat_channels: incompatible shapes " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    const int ca = a.shape()[0], cb = b.shape()[0], h = a.shape()[1], w = a.shape()[2];
    Tensor out({ca + cb, h, w});
    std::copy(a.data().begin(), a.data().end(), out.data().begin());
    std::copy(b.data().begin(), b.data().end(), out.data().begin() + a.size());
    if (Tape* t = Tape::active()) {
        auto ap = a.ptr(), bp = b.ptr(), op = out.ptr();
        const size_t na = a.data().size();
        t->record([ap, bp, op, na]() {
            if (op->grad.empty()) return;  // branch never reached the loss
            detail::ensure_grad(ap.get());
            detail::ensure_grad(bp.get());
            for (size_t i = 0; i < na; ++i) ap->grad[i] += op->grad[i];
            for (size_t i = 0; i < bp->grad.size(); ++i) bp->grad[i] += op->grad[na + i];
        });
    }
    return out;
}

// ---- linear algebra ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw std::invalid_argument("matmul: dimension mismatch " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out({m, n});
    detail::matmul_raw(a.data().data(), b.data().data(), out.data().data(), m, k, n);
    if (Tape* t = Tape::active()) {
        auto ap = a.ptr(), bp = b.ptr(), op = out.ptr();
        t->record([ap, bp, op, m, k, n]() {
            if (op->grad.empty()) return;  // branch never reached the loss
            detail::ensure_grad(ap.get());
            detail::ensure_grad(bp.get());
            // dA += dY * B^T ; dB += A^T * dY
            detail::matmul_abt_acc(op->grad.data(), bp->data.data(), ap->grad.data(), m, n, k);
            detail::matmul_atb_acc(ap->data.data(), op->grad.data(), bp->grad.data(), m, k, n);
        });
    }
    return out;
}

// y = W x + b with x:[in], W:[out,in], b:[out]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.shape().size() != 1 || w.shape().size() != 2 || w.shape()[1] != x.shape()[0] ||
        b.shape() != Shape{w.shape()[0]})
        throw std::invalid_argument("linear: incompatible shapes x=" + shape_str(x.shape()) +
                                    " w=" + shape_str(w.shape()) + " b=" + shape_str(b.shape()));
    const int in = x.shape()[0], out_n = w.shape()[0];
    Tensor out({out_n});
    for (int o = 0; o < out_n; ++o) {
        const double* wrow = w.data().data() + static_cast<size_t>(o) * in;
        double acc = b.data()[o];
        for (int i = 0; i < in; ++i) acc += wrow[i] * x.data()[i];
        out.data()[o] = acc;
    }
    if (Tape* t = Tape::active()) {
        auto xp = x.ptr(), wp = w.ptr(), bp = b.ptr(), op = out.ptr();
        t->record([xp, wp, bp, op, in, out_n]() {
            if (op->grad.empty()) return;  // branch never reached the loss
            detail::ensure_grad(xp.get());
            detail::ensure_grad(wp.get());
            detail::ensure_grad(bp.get());
            for (int o = 0; o < out_n; ++o) {
                const double g = op->grad[o];
                if (g == 0.0) continue;
                bp->grad[o] += g;
                const double* wrow = wp->data.data() + static_cast<size_t>(o) * in;
                double* dwrow = wp->grad.data() + static_cast<size_t>(o) * in;
                for (int i = 0; i < in; ++i) {
                    dwrow[i] += g * xp->data[i];
                    xp->grad[i] += g * wrow[i];
                }
            }
        });
    }
    return out;
}

// ---- convolution (cross-correlation), kernels 1x1 or 3x3 ----

inline Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad) {
    if (x.shape().size() != 3 || k.shape().size() != 4)
        throw std::invalid_argument("conv2d: expected x[c,h,w], k[co,ci,kh,kw]");
    const int ci = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const int co = k.shape()[0], kci = k.shape()[1], kh = k.shape()[2], kw = k.shape()[3];
    if (kci != ci)
        throw std::invalid_argument("conv2d: channel mismatch x=" + shape_str(x.shape()) +
                                    " k=" + shape_str(k.shape()));
    if (!((kh == 1 && kw == 1) || (kh == 3 && kw == 3)))
        throw std::invalid_argument("conv2d: only 1x1 and 3x3 kernels supported, got " + shape_str(k.shape()));
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
    const int oh = (h + 2 * pad - kh) / stride + 1;  // floor semantics
    const int ow = (w + 2 * pad - kw) / stride + 1;
    if (oh < 1 || ow < 1)
        throw std::invalid_argument("conv2d: empty output for " + shape_str(x.shape()) + " kernel " +
                                    shape_str(k.shape()) + " stride " + std::to_string(stride) + " pad " +
                                    std::to_string(pad));
    const int krows = ci * kh * kw;
    const int ncols = oh * ow;

    // im2col
    std::vector<double> col(static_cast<size_t>(krows) * ncols, 0.0);
    for (int c = 0; c < ci; ++c)
        for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx) {
                const int r = (c * kh + dy) * kw + dx;
                double* crow = col.data() + static_cast<size_t>(r) * ncols;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + dy - pad;
                    if (iy < 0 || iy >= h) continue;
                    const double* xrow = x.data().data() + (static_cast<size_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + dx - pad;
                        if (ix < 0 || ix >= w) continue;
                        crow[oy * ow + ox] = xrow[ix];
                    }
                }
            }

    Tensor out({co, oh, ow});
    detail::matmul_raw(k.data().data(), col.data(), out.data().data(), co, krows, ncols);

    if (Tape* t = Tape::active()) {
        auto xp = x.ptr(), kp = k.ptr(), op = out.ptr();
        t->record([xp, kp, op, col = std::move(col), ci, h, w, co, kh, kw, oh, ow, stride, pad, krows,
                   ncols]() {
                       if (op->grad.empty()) return;  // branch never reached the loss
            detail::ensure_grad(xp.get());
            detail::ensure_grad(kp.get());
            // dK += dY * col^T
            detail::matmul_abt_acc(op->grad.data(), col.data(), kp->grad.data(), co, ncols, krows);
            // dcol = K^T * dY, then scatter back (col2im)
            std::vector<double> dcol(static_cast<size_t>(krows) * ncols, 0.0);
            detail::matmul_atb_acc(kp->data.data(), op->grad.data(), dcol.data(), co, krows, ncols);
            for (int c = 0; c < ci; ++c)
                for (int dy = 0; dy < kh; ++dy)
                    for (int dx = 0; dx < kw; ++dx) {
                        const int r = (c * kh + dy) * kw + dx;
                        const double* drow = dcol.data() + static_cast<size_t>(r) * ncols;
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride + dy - pad;
                            if (iy < 0 || iy >= h) continue;
                            double* gxrow = xp->grad.data() + (static_cast<size_t>(c) * h + iy) * w;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride + dx - pad;
                                if (ix < 0 || ix >= w) continue;
                                gxrow[ix] += drow[oy * ow + ox];
                            }
                        }
                    }
        });
    }
    return out;
}

// ---- pooling (fixed 2x2 windows, stride 2) ----

inline Tensor maxpool2(const Tensor& x) {
    if (x.shape().size() != 3 || x.shape()[1] % 2 != 0 || x.shape()[2] % 2 != 0)
        throw std::invalid_argument("maxpool2: need [c,2m,2n], got " + shape_str(x.shape()));
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2], oh = h / 2, ow = w / 2;
    Tensor out({c, oh, ow});
    std::vector<int> argmax(static_cast<size_t>(c) * oh * ow);
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                int best = ((ch * h + 2 * oy) * w + 2 * ox);
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const int idx = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                        if (x.data()[idx] > x.data()[best]) best = idx;
                    }
                const int o = (ch * oh + oy) * ow + ox;
                out.data()[o] = x.data()[best];
                argmax[o] = best;
            }
    if (Tape* t = Tape::active()) {
        auto xp = x.ptr(), op = out.ptr();
        t->record([xp, op, argmax = std::move(argmax)]() {
            if (op->grad.empty()) return;  // branch never reached the loss
            detail::ensure_grad(xp.get());
            for (size_t i = 0; i < op->grad.size(); ++i) xp->grad[argmax[i]] += op->grad[i];
        });
    }
    return out;
}

inline Tensor avgpool2(const Tensor& x) {
    if (x.shape().size() != 3 || x.shape()[1] % 2 != 0 || x.shape()[2] % 2 != 0)
        throw std::invalid_argument("avgpool2: need [c,2m,2n], got " + shape_str(x.shape()));
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2], oh = h / 2, ow = w / 2;
    Tensor out({c, oh, ow});
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double s = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) s += x.data()[(ch * h + 2 * oy + dy) * w + 2 * ox + dx];
                out.data()[(ch * oh + oy) * ow + ox] = 0.25 * s;
            }
    if (Tape* t = Tape::active()) {
        auto xp = x.ptr(), op = out.ptr();
        t->record([xp, op, c, h, w, oh, ow]() {
            if (op->grad.empty()) return;  // branch never reached the loss
            detail::ensure_grad(xp.get());
            for (int ch = 0; ch < c; ++ch)
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        const double g = 0.25 * op->grad[(ch * oh + oy) * ow + ox];
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                xp->grad[(ch * h + 2 * oy + dy) * w + 2 * ox + dx] += g;
                    }
        });
    }
    return out;
}

inline Tensor global_avg_pool(const Tensor& x) {
    if (x.shape().size() != 3) throw std::invalid_argument("global_avg_pool: need [c,h,w]");
    const int c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    Tensor out({c});
    for (int ch = 0; ch < c; ++ch) {
        double s = 0;
        for (int i = 0; i < hw; ++i) s += x.data()[ch * hw + i];
        out.data()[ch] = s / hw;
    }
    if (Tape* t = Tape::active()) {
        auto xp = x.ptr(), op = out.ptr();
        t->record([xp, op, c, hw]() {
            if (op->grad.empty()) return;  // branch never reached the loss
            detail::ensure_grad(xp.get());
            for (int ch = 0; ch < c; ++ch) {
                const double g = op->grad[ch] / hw;
                for (int i = 0; i < hw; ++i) xp->grad[ch * hw + i] += g;
            }
        });
    }
    return out;
}

// nearest-neighbor 2x upsampling of [c,h,w]
inline Tensor upsample2(const Tensor& x) {
    if (x.shape().size() != 3) throw std::invalid_argument("upsample2: need [c,h,w]");
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    Tensor out({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx)
                out.data()[(ch * 2 * h + y) * 2 * w + xx] = x.data()[(ch * h + y / 2) * w + xx / 2];
    if (Tape* t = Tape::active()) {
        auto xp = x.ptr(), op = out.ptr();
        t->record([xp, op, c, h, w]() {
            if (op->grad.empty()) return;  // branch never reached the loss
            detail::ensure_grad(xp.get());
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < 2 * h; ++y)
                    for (int xx = 0; xx < 2 * w; ++xx)
                        xp->grad[(ch * h + y / 2) * w + xx / 2] += op->grad[(ch * 2 * h + y) * 2 * w + xx];
        });
    }
    return out;
}

// per-channel bias add on [c,h,w]
inline Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
    if (x.shape().size() != 3 || b.shape() != Shape{x.shape()[0]})
        throw std::invalid_argument("add_channel_bias: incompatible shapes " + shape_str(x.shape()) + " vs " +
                                    shape_str(b.shape()));
    const int c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    Tensor out(x.shape());
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < hw; ++i) out.data()[ch * hw + i] = x.data()[ch * hw + i] + b.data()[ch];
    if (Tape* t = Tape::active()) {
        auto xp = x.ptr(), bp = b.ptr(), op = out.ptr();
        t->record([xp, bp, op, c, hw]() {
            if (op->grad.empty()) return;  // branch never reached the loss
            detail::ensure_grad(xp.get());
            detail::ensure_grad(bp.get());
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i < hw; ++i) {
                    xp->grad[ch * hw + i] += op->grad[ch * hw + i];
                    bp->grad[ch] += op->grad[ch * hw + i];
                }
        });
    }
    return out;
}

// squared Euclidean distance as a differentiable scalar
inline Tensor sq_dist(const Tensor& a, const Tensor& b) { return sum_t(square_t(sub(a, b))); }

// ---- finite-difference gradient oracle ----

// Max relative error between the analytic gradient of fn at `at` and a
// central-difference estimate, denominator max(|analytic|,|numeric|,1e-8).
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& fn, Tensor at, double step) {
    if (step <= 0.0) throw std::invalid_argument("finite_diff_check: step must be positive");
    at.zero_grad();
    {
        Tape tape;
        Tensor loss = fn(at);
        if (loss.size() != 1) throw std::invalid_argument("finite_diff_check: fn must return a scalar");
        if (!std::isfinite(loss.item())) throw std::domain_error("finite_diff_check: fn returned non-finite value");
        tape.backward(loss);
    }
    std::vector<double> analytic = at.grad();
    double max_rel = 0.0;
    for (int64_t i = 0; i < at.size(); ++i) {
        const double orig = at.data()[i];
        at.data()[i] = orig + step;
        const double fp = fn(at).item();
        at.data()[i] = orig - step;
        const double fm = fn(at).item();
        at.data()[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::domain_error("finite_diff_check: fn returned non-finite value");
        const double numeric = (fp - fm) / (2.0 * step);
        const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::fabs(analytic[i] - numeric) / denom);
    }
    return max_rel;
}

}  // namespace gmcml
