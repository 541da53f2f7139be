#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ivt/common.hpp"

namespace ivt {

// H x W x 3 raster, values in [0, 1], row-major with interleaved RGB.
struct ImageRaster {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // size height * width * 3

  ImageRaster() = default;
  ImageRaster(int h, int w, float fill = 0.0f)
      : height(h), width(w), data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3, fill) {}

  float& at(int row, int col, int channel) {
    return data[(static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
                 static_cast<std::size_t>(col)) * 3 + static_cast<std::size_t>(channel)];
  }
  float at(int row, int col, int channel) const {
    return data[(static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
                 static_cast<std::size_t>(col)) * 3 + static_cast<std::size_t>(channel)];
  }
  bool same_shape(const ImageRaster& other) const {
    return height == other.height && width == other.width;
  }
};

// K flattened P*P*3 patches in row-major patch order (top-left to bottom-right).
struct PatchSequence {
  Mat patches;  // [K, P*P*3]
  int patch_size = 0;
  int grid_rows = 0;  // H / P
  int grid_cols = 0;  // W / P

  int count() const { return static_cast<int>(patches.rows()); }
};

// Throws ConfigError unless H and W are divisible by patch_size.
PatchSequence patchify(const ImageRaster& image, int patch_size);

// Exact inverse of patchify.
ImageRaster unpatchify(const PatchSequence& patches);

enum class AugmentKind { kIdentity, kHorizontalFlip, kRandomCrop };

const char* augment_kind_name(AugmentKind kind);
AugmentKind augment_kind_from_name(const std::string& name);

// identity: input unchanged. hflip: mirrored columns. random_crop: crop of
// uniform [0.8, 1.0] area scale at the original aspect ratio, resized back to
// H x W with bilinear interpolation. Deterministic given rng_seed.
ImageRaster augment(const ImageRaster& image, AugmentKind kind, std::uint64_t rng_seed);

ImageRaster resize_bilinear(const ImageRaster& image, int out_height, int out_width);

}  // namespace ivt
