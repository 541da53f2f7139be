#include "ivt/image.hpp"

#include <algorithm>
#include <cmath>

namespace ivt {

PatchSequence patchify(const ImageRaster& image, int patch_size) {
  if (patch_size <= 0) throw ConfigError("patch size must be positive");
  if (image.height % patch_size != 0 || image.width % patch_size != 0) {
    throw ConfigError("image not divisible by patch size");
  }
  PatchSequence out;
  out.patch_size = patch_size;
  out.grid_rows = image.height / patch_size;
  out.grid_cols = image.width / patch_size;
  const int k = out.grid_rows * out.grid_cols;
  const int dim = patch_size * patch_size * 3;
  out.patches.resize(k, dim);
  for (int pr = 0; pr < out.grid_rows; ++pr) {
    for (int pc = 0; pc < out.grid_cols; ++pc) {
      const int patch_index = pr * out.grid_cols + pc;
      int d = 0;
      for (int r = 0; r < patch_size; ++r) {
        for (int c = 0; c < patch_size; ++c) {
          for (int ch = 0; ch < 3; ++ch) {
            out.patches(patch_index, d++) =
                image.at(pr * patch_size + r, pc * patch_size + c, ch);
          }
        }
      }
    }
  }
  return out;
}

ImageRaster unpatchify(const PatchSequence& patches) {
  const int p = patches.patch_size;
  ImageRaster image(patches.grid_rows * p, patches.grid_cols * p);
  for (int pr = 0; pr < patches.grid_rows; ++pr) {
    for (int pc = 0; pc < patches.grid_cols; ++pc) {
      const int patch_index = pr * patches.grid_cols + pc;
      int d = 0;
      for (int r = 0; r < p; ++r) {
        for (int c = 0; c < p; ++c) {
          for (int ch = 0; ch < 3; ++ch) {
            image.at(pr * p + r, pc * p + c, ch) =
                static_cast<float>(patches.patches(patch_index, d++));
          }
        }
      }
    }
  }
  return image;
}

const char* augment_kind_name(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::kIdentity: return "identity";
    case AugmentKind::kHorizontalFlip: return "hflip";
    case AugmentKind::kRandomCrop: return "random_crop";
  }
  throw std::logic_error("unknown augmentation kind");
}

AugmentKind augment_kind_from_name(const std::string& name) {
  if (name == "identity") return AugmentKind::kIdentity;
  if (name == "hflip") return AugmentKind::kHorizontalFlip;
  if (name == "random_crop") return AugmentKind::kRandomCrop;
  throw ConfigError("unknown augmentation kind: " + name);
}

ImageRaster resize_bilinear(const ImageRaster& image, int out_height, int out_width) {
  if (out_height <= 0 || out_width <= 0) throw ConfigError("resize target must be positive");
  ImageRaster out(out_height, out_width);
  // Half-pixel-center sampling with edge clamping.
  const double sy = static_cast<double>(image.height) / out_height;
  const double sx = static_cast<double>(image.width) / out_width;
  for (int r = 0; r < out_height; ++r) {
    double src_y = (r + 0.5) * sy - 0.5;
    src_y = std::clamp(src_y, 0.0, static_cast<double>(image.height - 1));
    const int y0 = static_cast<int>(std::floor(src_y));
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double fy = src_y - y0;
    for (int c = 0; c < out_width; ++c) {
      double src_x = (c + 0.5) * sx - 0.5;
      src_x = std::clamp(src_x, 0.0, static_cast<double>(image.width - 1));
      const int x0 = static_cast<int>(std::floor(src_x));
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double fx = src_x - x0;
      for (int ch = 0; ch < 3; ++ch) {
        const double top = (1.0 - fx) * image.at(y0, x0, ch) + fx * image.at(y0, x1, ch);
        const double bottom = (1.0 - fx) * image.at(y1, x0, ch) + fx * image.at(y1, x1, ch);
        out.at(r, c, ch) = static_cast<float>((1.0 - fy) * top + fy * bottom);
      }
    }
  }
  return out;
}

namespace {

ImageRaster hflip(const ImageRaster& image) {
  ImageRaster out(image.height, image.width);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        out.at(r, c, ch) = image.at(r, image.width - 1 - c, ch);
      }
    }
  }
  return out;
}

ImageRaster random_crop(const ImageRaster& image, std::uint64_t seed) {
  Rng rng(seed);
  const double area_scale = rng.uniform(0.8, 1.0);
  const double side_scale = std::sqrt(area_scale);
  int crop_h = std::max(1, static_cast<int>(std::lround(image.height * side_scale)));
  int crop_w = std::max(1, static_cast<int>(std::lround(image.width * side_scale)));
  crop_h = std::min(crop_h, image.height);
  crop_w = std::min(crop_w, image.width);
  const int off_r = (image.height - crop_h > 0) ? rng.uniform_int(image.height - crop_h + 1) : 0;
  const int off_c = (image.width - crop_w > 0) ? rng.uniform_int(image.width - crop_w + 1) : 0;
  ImageRaster crop(crop_h, crop_w);
  for (int r = 0; r < crop_h; ++r) {
    for (int c = 0; c < crop_w; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        crop.at(r, c, ch) = image.at(off_r + r, off_c + c, ch);
      }
    }
  }
  return resize_bilinear(crop, image.height, image.width);
}

}  // namespace

ImageRaster augment(const ImageRaster& image, AugmentKind kind, std::uint64_t rng_seed) {
  switch (kind) {
    case AugmentKind::kIdentity: return image;
    case AugmentKind::kHorizontalFlip: return hflip(image);
    case AugmentKind::kRandomCrop: return random_crop(image, rng_seed);
  }
  throw std::logic_error("unknown augmentation kind");
}

}  // namespace ivt
