#include "ivt/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ivt/image_io.hpp"

namespace ivt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSeedSpecs = 21;
constexpr std::uint64_t kSeedSplit = 22;
constexpr std::uint64_t kSeedImage = 23;
constexpr std::uint64_t kSeedCaption = 24;

// sRGB-ish anchors for the eight color words.
constexpr double kColorRgb[kNumColors][3] = {
    {0.10, 0.10, 0.10},  // black
    {0.10, 0.20, 0.85},  // blue
    {0.10, 0.75, 0.15},  // green
    {0.50, 0.50, 0.50},  // grey
    {0.95, 0.55, 0.10},  // orange
    {0.55, 0.15, 0.75},  // purple
    {0.85, 0.10, 0.10},  // red
    {0.95, 0.95, 0.95},  // white
};

AttributeSpec spec_from_code(std::uint64_t code) {
  AttributeSpec spec;
  for (int s = 0; s < kNumBandSlots; ++s) {
    spec.band_color[static_cast<std::size_t>(s)] = static_cast<int>(code % kNumColors);
    code /= kNumColors;
  }
  const std::uint64_t bag = code % (kNumColors + 1);
  spec.has_bag = bag != kNumColors;
  spec.bag_color = spec.has_bag ? static_cast<int>(bag) : 0;
  return spec;
}

constexpr std::uint64_t kSpecCodeCount = 8ULL * 8 * 8 * 8 * 9;

}  // namespace

const DatasetSplit& Corpus::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ConfigError("unknown split: " + name);
}

const DatasetSplit& LoadedCorpus::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ConfigError("unknown split: " + name);
}

PixelRect attribute_region(int slot, int height, int width) {
  if (slot < 0 || slot > kBagSlot) throw ConfigError("attribute slot out of range");
  PixelRect rect;
  if (slot < kNumBandSlots) {
    rect.row0 = slot * height / 4;
    rect.row1 = (slot + 1) * height / 4;
    rect.col0 = 0;
    rect.col1 = width;
  } else {
    rect.row0 = 3 * height / 8;
    rect.row1 = 5 * height / 8;
    rect.col0 = 5 * width / 8;
    rect.col1 = width;
  }
  return rect;
}

ImageRaster render_identity_image(const AttributeSpec& spec, int height, int width,
                                  std::uint64_t rng_seed) {
  if (height < 8 || width < 8) throw ConfigError("image size too small to render bands");
  Rng rng(rng_seed);
  // Jitter the three internal band boundaries by -1/0/+1 pixels.
  std::array<int, 5> bounds = {0, height / 4, height / 2, 3 * height / 4, height};
  for (int b = 1; b <= 3; ++b) {
    bounds[static_cast<std::size_t>(b)] += rng.uniform_int(3) - 1;
  }
  ImageRaster image(height, width);
  for (int slot = 0; slot < kNumBandSlots; ++slot) {
    const double* rgb = kColorRgb[spec.band_color[static_cast<std::size_t>(slot)]];
    for (int r = bounds[static_cast<std::size_t>(slot)]; r < bounds[static_cast<std::size_t>(slot) + 1]; ++r) {
      for (int c = 0; c < width; ++c) {
        for (int ch = 0; ch < 3; ++ch) image.at(r, c, ch) = static_cast<float>(rgb[ch]);
      }
    }
  }
  if (spec.has_bag) {
    const PixelRect bag = attribute_region(kBagSlot, height, width);
    const double* rgb = kColorRgb[spec.bag_color];
    for (int r = bag.row0; r < bag.row1; ++r) {
      for (int c = bag.col0; c < bag.col1; ++c) {
        for (int ch = 0; ch < 3; ++ch) image.at(r, c, ch) = static_cast<float>(rgb[ch]);
      }
    }
  }
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        const double noisy = image.at(r, c, ch) + rng.normal() * 0.02;
        image.at(r, c, ch) = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
      }
    }
  }
  return image;
}

int caption_template_count() { return 3; }

std::string render_caption(const AttributeSpec& spec, int template_index) {
  const auto color = [&](int slot) {
    return std::string(kColorNames[static_cast<std::size_t>(spec.band_color[static_cast<std::size_t>(slot)])]);
  };
  const std::string bag =
      spec.has_bag ? std::string(kColorNames[static_cast<std::size_t>(spec.bag_color)]) + " bag"
                   : std::string("no bag");
  switch (template_index % caption_template_count()) {
    case 0:
      return "person with " + color(0) + " hair, " + color(1) + " top, " + color(2) + " pants, " +
             color(3) + " shoes, " + bag + ".";
    case 1:
      return "a person has " + color(0) + " hair, " + color(1) + " top, " + color(2) + " pants, " +
             color(3) + " shoes, " + bag + ".";
    default:
      return "this person shows " + color(1) + " top, " + color(2) + " pants, " + color(3) +
             " shoes, " + color(0) + " hair, " + bag + ".";
  }
}

double oracle_similarity(const std::string& caption, const AttributeSpec& spec) {
  const std::vector<std::string> tokens = normalize_tokens(caption);
  const auto has_bigram = [&](const std::string& first, const std::string& second) {
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
      if (tokens[i] == first && tokens[i + 1] == second) return true;
    }
    return false;
  };
  double score = 0.0;
  for (int slot = 0; slot < kNumBandSlots; ++slot) {
    const std::string color = kColorNames[static_cast<std::size_t>(spec.band_color[static_cast<std::size_t>(slot)])];
    if (has_bigram(color, kSlotNouns[static_cast<std::size_t>(slot)])) score += 1.0;
  }
  if (spec.has_bag) {
    if (has_bigram(kColorNames[static_cast<std::size_t>(spec.bag_color)], "bag")) score += 1.0;
  } else if (has_bigram("no", "bag")) {
    score += 1.0;
  }
  return score;
}

Corpus generate_corpus(const GeneratorParams& params, std::uint64_t seed) {
  if (params.n_identities < 4) throw ConfigError("n_identities must be >= 4");
  if (params.images_per_id < 2) throw ConfigError("images_per_id must be >= 2");
  if (params.captions_per_image < 1) throw ConfigError("captions_per_image must be >= 1");
  if (params.image_height < 8 || params.image_width < 8) throw ConfigError("image size too small");
  if (params.patch_size <= 0 || params.image_height % params.patch_size != 0 ||
      params.image_width % params.patch_size != 0) {
    throw ConfigError("image size must be divisible by the patch size");
  }
  if (static_cast<std::uint64_t>(params.n_identities) > kSpecCodeCount) {
    throw ConfigError("n_identities exceeds the number of distinct attribute assignments");
  }

  Corpus corpus;
  corpus.params = params;
  corpus.seed = seed;

  // Distinct attribute assignments, one per identity.
  Rng spec_rng(derive_seed(seed, kSeedSpecs));
  std::vector<std::uint64_t> codes;
  codes.reserve(static_cast<std::size_t>(params.n_identities));
  while (static_cast<int>(codes.size()) < params.n_identities) {
    const std::uint64_t code = spec_rng.next_u64() % kSpecCodeCount;
    if (std::find(codes.begin(), codes.end(), code) == codes.end()) codes.push_back(code);
  }
  corpus.specs.reserve(codes.size());
  for (const std::uint64_t code : codes) corpus.specs.push_back(spec_from_code(code));

  // 70/10/20 identity split, every split non-empty.
  const int n = params.n_identities;
  int n_val = std::max(1, static_cast<int>(std::lround(0.1 * n)));
  int n_test = std::max(1, static_cast<int>(std::lround(0.2 * n)));
  int n_train = n - n_val - n_test;
  if (n_train < 2) throw ConfigError("n_identities too small to fill all splits");
  Rng split_rng(derive_seed(seed, kSeedSplit));
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    const int j = split_rng.uniform_int(i + 1);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }

  corpus.train.split = "train";
  corpus.val.split = "val";
  corpus.test.split = "test";
  for (int rank = 0; rank < n; ++rank) {
    const int id = order[static_cast<std::size_t>(rank)];
    DatasetSplit& target = rank < n_train ? corpus.train : rank < n_train + n_val ? corpus.val : corpus.test;
    const AttributeSpec& spec = corpus.specs[static_cast<std::size_t>(id)];
    for (int k = 0; k < params.images_per_id; ++k) {
      auto raster = std::make_shared<ImageRaster>(render_identity_image(
          spec, params.image_height, params.image_width,
          derive_seed(seed, kSeedImage, static_cast<std::uint64_t>(id) * 1000003ULL + static_cast<std::uint64_t>(k))));
      const std::string path = "images/" + std::to_string(id) + "_" + std::to_string(k) + ".png";
      for (int j = 0; j < params.captions_per_image; ++j) {
        Rng caption_rng(derive_seed(seed, kSeedCaption,
                                    (static_cast<std::uint64_t>(id) * 1000003ULL +
                                     static_cast<std::uint64_t>(k)) * 97ULL + static_cast<std::uint64_t>(j)));
        ImageTextPair pair;
        pair.image = raster;
        pair.caption = render_caption(spec, caption_rng.uniform_int(caption_template_count()));
        pair.label = id;
        pair.image_path = path;
        target.pairs.push_back(std::move(pair));
      }
    }
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");

  json annotations = json::array();
  const auto emit_split = [&](const DatasetSplit& split) {
    // One record per image; consecutive pairs of one image share the raster.
    for (std::size_t i = 0; i < split.pairs.size();) {
      const ImageTextPair& first = split.pairs[i];
      json record;
      record["file_path"] = first.image_path;
      record["id"] = first.label;
      record["split"] = split.split;
      json captions = json::array();
      std::size_t j = i;
      for (; j < split.pairs.size() && split.pairs[j].image_path == first.image_path; ++j) {
        captions.push_back(split.pairs[j].caption);
      }
      record["captions"] = captions;
      annotations.push_back(record);
      write_png(*first.image, (fs::path(dir) / first.image_path).string());
      i = j;
    }
  };
  emit_split(corpus.train);
  emit_split(corpus.val);
  emit_split(corpus.test);

  std::ofstream ann(fs::path(dir) / "annotations.json", std::ios::binary);
  if (!ann) throw std::runtime_error("cannot write annotations.json");
  ann << annotations.dump(2) << '\n';

  json truth = json::object();
  for (std::size_t id = 0; id < corpus.specs.size(); ++id) {
    const AttributeSpec& spec = corpus.specs[id];
    json entry;
    for (int slot = 0; slot < kNumBandSlots; ++slot) {
      entry[kSlotNouns[static_cast<std::size_t>(slot)]] =
          kColorNames[static_cast<std::size_t>(spec.band_color[static_cast<std::size_t>(slot)])];
    }
    entry["bag"] = spec.has_bag ? kColorNames[static_cast<std::size_t>(spec.bag_color)] : "none";
    truth[std::to_string(id)] = entry;
  }
  std::ofstream gt(fs::path(dir) / "ground_truth.json", std::ios::binary);
  if (!gt) throw std::runtime_error("cannot write ground_truth.json");
  gt << truth.dump(2) << '\n';
}

LoadedCorpus load_external(const std::string& root_dir) {
  const fs::path root(root_dir);
  const fs::path ann_path = root / "annotations.json";
  std::ifstream in(ann_path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + ann_path.string());
  json annotations;
  try {
    in >> annotations;
  } catch (const json::exception& e) {
    throw ConfigError("malformed annotations.json: " + std::string(e.what()));
  }
  if (!annotations.is_array()) throw ConfigError("annotations.json must be a JSON array");

  LoadedCorpus corpus;
  corpus.train.split = "train";
  corpus.val.split = "val";
  corpus.test.split = "test";

  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const json& record = annotations[i];
    const std::string where = "record " + std::to_string(i);
    if (!record.is_object()) throw ConfigError(where + ": not an object");
    for (const char* key : {"file_path", "id", "captions", "split"}) {
      if (!record.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
    }
    if (!record["file_path"].is_string() || !record["id"].is_number_integer() ||
        !record["captions"].is_array() || !record["split"].is_string()) {
      throw ConfigError(where + ": wrong field type");
    }
    const std::string file_path = record["file_path"].get<std::string>();
    const int original_id = record["id"].get<int>();
    const std::string split_name = record["split"].get<std::string>();
    if (split_name != "train" && split_name != "val" && split_name != "test") {
      throw ConfigError(where + ": unknown split '" + split_name + "'");
    }
    if (record["captions"].empty()) {
      ++corpus.report.skipped_records;
      continue;
    }
    const fs::path image_path = root / file_path;
    if (!fs::exists(image_path)) {
      corpus.report.missing_files.push_back(file_path);
      continue;
    }
    auto raster = std::make_shared<ImageRaster>(read_png(image_path.string()));
    auto [it, inserted] = corpus.id_map.emplace(original_id, static_cast<int>(corpus.id_map.size()));
    const int label = it->second;
    DatasetSplit& target =
        split_name == "train" ? corpus.train : split_name == "val" ? corpus.val : corpus.test;
    for (const json& caption : record["captions"]) {
      if (!caption.is_string()) throw ConfigError(where + ": captions must be strings");
      ImageTextPair pair;
      pair.image = raster;
      pair.caption = caption.get<std::string>();
      pair.label = label;
      pair.image_path = file_path;
      target.pairs.push_back(std::move(pair));
    }
  }
  return corpus;
}

std::map<int, AttributeSpec> load_ground_truth(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  json truth;
  try {
    in >> truth;
  } catch (const json::exception& e) {
    throw ConfigError("malformed ground truth: " + std::string(e.what()));
  }
  std::map<int, AttributeSpec> out;
  const auto color_index = [](const std::string& name) {
    for (int i = 0; i < kNumColors; ++i) {
      if (name == kColorNames[static_cast<std::size_t>(i)]) return i;
    }
    throw ConfigError("unknown color in ground truth: " + name);
  };
  for (const auto& [key, entry] : truth.items()) {
    AttributeSpec spec;
    for (int slot = 0; slot < kNumBandSlots; ++slot) {
      spec.band_color[static_cast<std::size_t>(slot)] =
          color_index(entry.at(kSlotNouns[static_cast<std::size_t>(slot)]).get<std::string>());
    }
    const std::string bag = entry.at("bag").get<std::string>();
    spec.has_bag = bag != "none";
    spec.bag_color = spec.has_bag ? color_index(bag) : 0;
    out[std::stoi(key)] = spec;
  }
  return out;
}

}  // namespace ivt
