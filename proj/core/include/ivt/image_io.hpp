#pragma once

#include <string>

#include "ivt/image.hpp"

namespace ivt {

// 8-bit RGB PNG. Values are quantized with round(v * 255) on save.
void write_png(const ImageRaster& image, const std::string& path);
ImageRaster read_png(const std::string& path);

// Raw exchange format: 8-byte header (two little-endian 32-bit integers,
// height then width) followed by H*W*3 little-endian 32-bit floats in
// row-major order with interleaved RGB.
void write_raw_image(const ImageRaster& image, const std::string& path);
ImageRaster read_raw_image(const std::string& path);

}  // namespace ivt
