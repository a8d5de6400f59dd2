#pragma once

// 8-bit grayscale PNG I/O through libpng's simplified API.

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crl/types.hpp"

namespace crl {

using Gray8 = Grid<std::uint8_t>;

inline Gray8 read_png_gray(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw DataError("cannot read PNG '" + path.string() + "': " + img.message);
    img.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw DataError("cannot decode PNG '" + path.string() + "': " + img.message);
    }
    return Gray8(static_cast<int>(img.height), static_cast<int>(img.width), std::move(buf));
}

inline void write_png_gray(const std::filesystem::path& path, const Gray8& pixels) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(pixels.width());
    img.height = static_cast<png_uint_32>(pixels.height());
    img.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.c_str(), 0, pixels.data(), 0, nullptr))
        throw DataError("cannot write PNG '" + path.string() + "': " + img.message);
}

// Masks on disk: foreground stored as 255, read back with threshold 128.
inline BinaryMask mask_from_gray(const Gray8& g) {
    BinaryMask m(g.height(), g.width());
    for (std::size_t i = 0; i < g.size(); ++i) m[i] = g[i] >= 128 ? 1 : 0;
    return m;
}

inline Gray8 mask_to_gray(const BinaryMask& m) {
    Gray8 g(m.height(), m.width());
    for (std::size_t i = 0; i < m.size(); ++i) g[i] = m[i] ? 255 : 0;
    return g;
}

}  // namespace crl
