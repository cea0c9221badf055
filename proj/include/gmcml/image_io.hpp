#pragma once

// 8-bit RGB PNG read/write on top of libpng, converting to and from
// [3,h,w] tensors with values in [0,1].

#include <png.h>

#include <cstdio>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmcml/tensor.hpp"

namespace gmcml {

inline void write_png_rgb(const std::string& path, const Tensor& img) {
    if (img.shape().size() != 3 || img.shape()[0] != 3)
        throw std::invalid_argument("write_png_rgb: expected [3,h,w], got " + shape_str(img.shape()));
    const int h = img.shape()[1], w = img.shape()[2];

    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("write_png_rgb: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("write_png_rgb: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("write_png_rgb: libpng error writing " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    const auto& d = img.data();
    const size_t plane = static_cast<size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = d[c * plane + static_cast<size_t>(y) * w + x];
                v = std::min(1.0, std::max(0.0, v));
                row[static_cast<size_t>(x) * 3 + c] = static_cast<uint8_t>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline Tensor read_png_rgb(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("read_png_rgb: missing image file " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("read_png_rgb: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("read_png_rgb: libpng error reading " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    std::vector<std::vector<uint8_t>> rows(h, std::vector<uint8_t>(static_cast<size_t>(w) * 3));
    std::vector<png_bytep> rowptrs(h);
    for (int y = 0; y < h; ++y) rowptrs[y] = rows[y].data();
    png_read_image(png, rowptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);

    Tensor img({3, h, w});
    const size_t plane = static_cast<size_t>(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.data()[c * plane + static_cast<size_t>(y) * w + x] =
                    rows[y][static_cast<size_t>(x) * 3 + c] / 255.0;
    return img;
}

}  // namespace gmcml
