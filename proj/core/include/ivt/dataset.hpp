#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ivt/image.hpp"
#include "ivt/text.hpp"

namespace ivt {

inline constexpr int kNumColors = 8;
inline constexpr std::array<const char*, kNumColors> kColorNames = {
    "black", "blue", "green", "grey", "orange", "purple", "red", "white"};

// Slot order: hair, top, pants, shoes; the bag is optional.
inline constexpr int kNumBandSlots = 4;
inline constexpr int kBagSlot = 4;
inline constexpr std::array<const char*, 5> kSlotNouns = {"hair", "top", "pants", "shoes", "bag"};

struct AttributeSpec {
  std::array<int, kNumBandSlots> band_color = {0, 0, 0, 0};
  bool has_bag = false;
  int bag_color = 0;

  bool operator==(const AttributeSpec&) const = default;
};

struct ImageTextPair {
  std::shared_ptr<const ImageRaster> image;
  std::string caption;
  int label = 0;
  std::string image_path;  // relative to the corpus root when loaded from disk
};

struct DatasetSplit {
  std::vector<ImageTextPair> pairs;
  std::string split;

  int size() const { return static_cast<int>(pairs.size()); }
};

struct GeneratorParams {
  int n_identities = 64;
  int images_per_id = 4;
  int captions_per_image = 2;
  int image_height = 32;
  int image_width = 16;
  int patch_size = 8;  // sizes must stay compatible with patchify
};

struct Corpus {
  DatasetSplit train, val, test;
  std::vector<AttributeSpec> specs;  // indexed by identity id
  GeneratorParams params;
  std::uint64_t seed = 0;

  const DatasetSplit& split(const std::string& name) const;
};

// Deterministic per seed. Identities receive distinct attribute assignments;
// identity sets are split 70/10/20 across train/val/test (each non-empty).
Corpus generate_corpus(const GeneratorParams& params, std::uint64_t seed);

// Writes images/<id>_<k>.png, annotations.json and ground_truth.json.
void save_corpus(const Corpus& corpus, const std::string& dir);

// Renders one identity's image: one horizontal color band per slot (quarters
// of the height, boundaries jittered by +-1 px) plus an optional bag patch,
// with per-pixel Gaussian color noise (sigma 0.02).
ImageRaster render_identity_image(const AttributeSpec& spec, int height, int width,
                                  std::uint64_t rng_seed);

// Caption templates mention every attribute as a "<color> <noun>" pair
// ("no bag" when absent), so captions identify their identity exactly.
int caption_template_count();
std::string render_caption(const AttributeSpec& spec, int template_index);

// Nominal pixel region of one attribute (jitter ignored); half-open bounds.
struct PixelRect {
  int row0 = 0, row1 = 0, col0 = 0, col1 = 0;
  bool contains(int r, int c) const { return r >= row0 && r < row1 && c >= col0 && c < col1; }
};
PixelRect attribute_region(int slot, int height, int width);

// Count of attribute mentions in the caption that match the spec, one point
// per slot. Exact-match retrieval with this score validates the generator.
double oracle_similarity(const std::string& caption, const AttributeSpec& spec);

struct LoadReport {
  std::vector<std::string> missing_files;
  int skipped_records = 0;
};

struct LoadedCorpus {
  DatasetSplit train, val, test;
  LoadReport report;
  std::map<int, int> id_map;  // original id -> contiguous label

  const DatasetSplit& split(const std::string& name) const;
};

// Reads a corpus in the annotations.json schema: a JSON array of records
// {file_path, id, captions: [string...], split}. One pair per (image, caption);
// records with no captions are skipped and counted; missing image files are
// listed in the report; ids are remapped to contiguous integers in order of
// first appearance. Malformed records raise ConfigError naming the index.
LoadedCorpus load_external(const std::string& root_dir);

std::map<int, AttributeSpec> load_ground_truth(const std::string& path);

}  // namespace ivt
