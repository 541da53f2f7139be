#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ivt/image.hpp"
#include "ivt/image_io.hpp"

using namespace ivt;

namespace {

ImageRaster random_raster(int h, int w, std::uint64_t seed) {
  ImageRaster img(h, w);
  Rng rng(seed);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

// Quantized to the 8-bit grid, so PNG round trips are exact.
ImageRaster random_quantized_raster(int h, int w, std::uint64_t seed) {
  ImageRaster img = random_raster(h, w, seed);
  for (auto& v : img.data) v = std::round(v * 255.0f) / 255.0f;
  return img;
}

}  // namespace

TEST_CASE("patchify counts") {
  CHECK(patchify(ImageRaster(384, 128), 16).count() == 192);
  CHECK(patchify(ImageRaster(32, 16), 8).count() == 8);
  CHECK_THROWS_WITH_AS(patchify(ImageRaster(30, 16), 8), "image not divisible by patch size",
                       ConfigError);
}

TEST_CASE("patchify then unpatchify is the identity") {
  const ImageRaster img = random_raster(16, 24, 3);
  const ImageRaster back = unpatchify(patchify(img, 4));
  REQUIRE(back.same_shape(img));
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(back.data[i] == img.data[i]);
}

TEST_CASE("patchify is row-major top-left first") {
  ImageRaster img(4, 4);
  img.at(0, 0, 0) = 1.0f;  // patch 0
  img.at(0, 2, 1) = 1.0f;  // patch 1
  img.at(2, 0, 2) = 1.0f;  // patch 2
  const PatchSequence ps = patchify(img, 2);
  CHECK(ps.patches(0, 0) == 1.0);
  CHECK(ps.patches(1, 1) == 1.0);   // (r0,c0,ch1) of patch 1
  CHECK(ps.patches(2, 2) == 1.0);   // (r0,c0,ch2) of patch 2
  CHECK(ps.patches(3, 0) == 0.0);
}

TEST_CASE("augment preserves shape") {
  const ImageRaster img = random_raster(32, 16, 5);
  for (const AugmentKind kind :
       {AugmentKind::kIdentity, AugmentKind::kHorizontalFlip, AugmentKind::kRandomCrop}) {
    const ImageRaster out = augment(img, kind, 9);
    CHECK(out.height == img.height);
    CHECK(out.width == img.width);
  }
}

TEST_CASE("hflip is an involution and identity returns the input") {
  const ImageRaster img = random_raster(8, 6, 7);
  const ImageRaster flipped = augment(img, AugmentKind::kHorizontalFlip, 0);
  const ImageRaster twice = augment(flipped, AugmentKind::kHorizontalFlip, 0);
  CHECK(twice.data == img.data);
  CHECK(augment(img, AugmentKind::kIdentity, 0).data == img.data);
  CHECK(flipped.at(0, 0, 0) == img.at(0, 5, 0));
}

TEST_CASE("random_crop is deterministic per seed") {
  const ImageRaster img = random_raster(32, 16, 1);
  const ImageRaster a = augment(img, AugmentKind::kRandomCrop, 42);
  const ImageRaster b = augment(img, AugmentKind::kRandomCrop, 42);
  const ImageRaster c = augment(img, AugmentKind::kRandomCrop, 43);
  CHECK(a.data == b.data);
  CHECK(a.data != c.data);
}

TEST_CASE("hflip permutes patches within each row and mirrors their columns") {
  const int p = 4;
  const ImageRaster img = random_raster(2 * p, 2 * p, 17);  // 2x2 patch grid
  const PatchSequence plain = patchify(img, p);
  const PatchSequence flipped = patchify(augment(img, AugmentKind::kHorizontalFlip, 0), p);
  const auto mirrored = [&](int patch, int r, int c, int ch) {
    return plain.patches(patch, (r * p + (p - 1 - c)) * 3 + ch);
  };
  for (int pr = 0; pr < 2; ++pr) {
    for (int pc = 0; pc < 2; ++pc) {
      const int src = pr * 2 + (1 - pc);  // horizontally opposite patch
      const int dst = pr * 2 + pc;
      for (int r = 0; r < p; ++r) {
        for (int c = 0; c < p; ++c) {
          for (int ch = 0; ch < 3; ++ch) {
            CHECK(flipped.patches(dst, (r * p + c) * 3 + ch) == mirrored(src, r, c, ch));
          }
        }
      }
    }
  }
}

TEST_CASE("png round trip is exact on quantized rasters") {
  const auto path = std::filesystem::temp_directory_path() / "ivt_png_test.png";
  const ImageRaster img = random_quantized_raster(20, 12, 23);
  write_png(img, path.string());
  const ImageRaster back = read_png(path.string());
  REQUIRE(back.same_shape(img));
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-9));
  }
  std::filesystem::remove(path);
}

TEST_CASE("png writing is byte deterministic") {
  const auto dir = std::filesystem::temp_directory_path();
  const ImageRaster img = random_quantized_raster(16, 8, 29);
  write_png(img, (dir / "ivt_png_a.png").string());
  write_png(img, (dir / "ivt_png_b.png").string());
  std::ifstream a(dir / "ivt_png_a.png", std::ios::binary);
  std::ifstream b(dir / "ivt_png_b.png", std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(a)), {});
  const std::string bytes_b((std::istreambuf_iterator<char>(b)), {});
  CHECK(bytes_a == bytes_b);
  std::filesystem::remove(dir / "ivt_png_a.png");
  std::filesystem::remove(dir / "ivt_png_b.png");
}

TEST_CASE("raw image round trip is bit exact") {
  const auto path = std::filesystem::temp_directory_path() / "ivt_raw_test.bin";
  const ImageRaster img = random_raster(9, 7, 31);
  write_raw_image(img, path.string());
  const ImageRaster back = read_raw_image(path.string());
  REQUIRE(back.same_shape(img));
  CHECK(back.data == img.data);
  CHECK(std::filesystem::file_size(path) == 8 + img.data.size() * sizeof(float));
  std::filesystem::remove(path);
}

TEST_CASE("resize_bilinear to the same size is near identity") {
  const ImageRaster img = random_raster(10, 10, 37);
  const ImageRaster out = resize_bilinear(img, 10, 10);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    CHECK(out.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));
  }
}
