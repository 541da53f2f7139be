#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "ivt/dataset.hpp"
#include "ivt/evaluation.hpp"
#include "ivt/image_io.hpp"

using namespace ivt;
namespace fs = std::filesystem;

namespace {

GeneratorParams small_params() {
  GeneratorParams p;
  p.n_identities = 10;
  p.images_per_id = 2;
  p.captions_per_image = 2;
  p.image_height = 32;
  p.image_width = 16;
  return p;
}

int count_pairs(const Corpus& corpus) {
  return corpus.train.size() + corpus.val.size() + corpus.test.size();
}

std::set<std::string> image_paths(const DatasetSplit& split) {
  std::set<std::string> out;
  for (const auto& pair : split.pairs) out.insert(pair.image_path);
  return out;
}

std::set<int> identity_set(const DatasetSplit& split) {
  std::set<int> out;
  for (const auto& pair : split.pairs) out.insert(pair.label);
  return out;
}

}  // namespace

TEST_CASE("generator arithmetic: images and captions") {
  const Corpus corpus = generate_corpus(small_params(), 3);
  CHECK(count_pairs(corpus) == 40);  // 10 ids * 2 images * 2 captions
  std::set<std::string> paths;
  for (const auto* split : {&corpus.train, &corpus.val, &corpus.test}) {
    for (const auto& path : image_paths(*split)) paths.insert(path);
  }
  CHECK(paths.size() == 20);
  CHECK(corpus.specs.size() == 10);
}

TEST_CASE("generator validates its inputs") {
  GeneratorParams p = small_params();
  p.n_identities = 2;
  CHECK_THROWS_AS(generate_corpus(p, 1), ConfigError);
  p = small_params();
  p.image_height = 30;  // not divisible by patch size 8
  CHECK_THROWS_AS(generate_corpus(p, 1), ConfigError);
}

TEST_CASE("generation is deterministic per seed") {
  const Corpus a = generate_corpus(small_params(), 11);
  const Corpus b = generate_corpus(small_params(), 11);
  const Corpus c = generate_corpus(small_params(), 12);
  REQUIRE(a.train.size() == b.train.size());
  for (int i = 0; i < a.train.size(); ++i) {
    const auto& pa = a.train.pairs[static_cast<std::size_t>(i)];
    const auto& pb = b.train.pairs[static_cast<std::size_t>(i)];
    CHECK(pa.caption == pb.caption);
    CHECK(pa.label == pb.label);
    CHECK(pa.image->data == pb.image->data);
  }
  bool any_difference = false;
  for (int i = 0; i < std::min(a.train.size(), c.train.size()); ++i) {
    if (a.train.pairs[static_cast<std::size_t>(i)].caption !=
        c.train.pairs[static_cast<std::size_t>(i)].caption) {
      any_difference = true;
    }
  }
  CHECK(any_difference);
}

TEST_CASE("identity splits are disjoint for many seeds") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    GeneratorParams p = small_params();
    p.n_identities = 4 + static_cast<int>(seed % 13);
    const Corpus corpus = generate_corpus(p, seed);
    const std::set<int> train_ids = identity_set(corpus.train);
    const std::set<int> val_ids = identity_set(corpus.val);
    const std::set<int> test_ids = identity_set(corpus.test);
    CHECK_FALSE(train_ids.empty());
    CHECK_FALSE(val_ids.empty());
    CHECK_FALSE(test_ids.empty());
    for (int id : val_ids) CHECK(train_ids.count(id) == 0);
    for (int id : test_ids) {
      CHECK(train_ids.count(id) == 0);
      CHECK(val_ids.count(id) == 0);
    }
    CHECK(train_ids.size() + val_ids.size() + test_ids.size() ==
          static_cast<std::size_t>(p.n_identities));
  }
}

TEST_CASE("captions differ in exactly the changed color word") {
  AttributeSpec a;
  a.band_color = {6, 1, 2, 0};  // red hair, blue top, green pants, black shoes
  a.has_bag = true;
  a.bag_color = 5;
  AttributeSpec b = a;
  b.band_color[1] = 4;  // orange top
  for (int t = 0; t < caption_template_count(); ++t) {
    const auto words_a = normalize_tokens(render_caption(a, t));
    const auto words_b = normalize_tokens(render_caption(b, t));
    REQUIRE(words_a.size() == words_b.size());
    int differing = 0;
    for (std::size_t i = 0; i < words_a.size(); ++i) {
      if (words_a[i] != words_b[i]) {
        ++differing;
        CHECK(words_a[i] == "blue");
        CHECK(words_b[i] == "orange");
      }
    }
    CHECK(differing == 1);
  }
}

TEST_CASE("captions fit the default text budget") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    AttributeSpec spec;
    spec.band_color = {rng.uniform_int(8), rng.uniform_int(8), rng.uniform_int(8),
                       rng.uniform_int(8)};
    spec.has_bag = rng.uniform() < 0.5;
    spec.bag_color = rng.uniform_int(8);
    for (int t = 0; t < caption_template_count(); ++t) {
      CHECK(normalize_tokens(render_caption(spec, t)).size() <= 14);  // max_text_len 16 - CLS - SEP
    }
  }
}

TEST_CASE("oracle similarity ranks the true identity first on the test split") {
  GeneratorParams p = small_params();
  p.n_identities = 16;
  const Corpus corpus = generate_corpus(p, 7);

  // Gallery: one entry per test image; queries: every test caption.
  std::vector<int> gallery_labels;
  std::vector<const AttributeSpec*> gallery_specs;
  std::set<std::string> seen;
  for (const auto& pair : corpus.test.pairs) {
    if (seen.insert(pair.image_path).second) {
      gallery_labels.push_back(pair.label);
      gallery_specs.push_back(&corpus.specs[static_cast<std::size_t>(pair.label)]);
    }
  }
  Mat scores(corpus.test.size(), static_cast<int>(gallery_labels.size()));
  std::vector<int> query_labels;
  for (int q = 0; q < corpus.test.size(); ++q) {
    const auto& pair = corpus.test.pairs[static_cast<std::size_t>(q)];
    query_labels.push_back(pair.label);
    for (std::size_t g = 0; g < gallery_specs.size(); ++g) {
      scores(q, static_cast<int>(g)) = oracle_similarity(pair.caption, *gallery_specs[g]);
    }
  }
  SimilarityMatrix sim;
  sim.scores = scores;
  sim.query_labels = query_labels;
  sim.gallery_labels = gallery_labels;
  const auto rates = cmc(sim, {1});
  CHECK(rates.at(1) == 1.0);
}

TEST_CASE("attribute regions line up with the rendered bands") {
  AttributeSpec spec;
  spec.band_color = {6, 1, 2, 7};  // red, blue, green, white
  spec.has_bag = false;
  const ImageRaster img = render_identity_image(spec, 32, 16, 5);
  const PixelRect hair = attribute_region(0, 32, 16);
  CHECK(hair.row0 == 0);
  CHECK(hair.row1 == 8);
  // Red dominates the hair band center.
  CHECK(img.at(4, 8, 0) > 0.6f);
  CHECK(img.at(4, 8, 2) < 0.3f);
  const PixelRect shoes = attribute_region(3, 32, 16);
  CHECK(shoes.row0 == 24);
  // White shoes: all channels high.
  CHECK(img.at(28, 8, 0) > 0.7f);
  CHECK(img.at(28, 8, 1) > 0.7f);
  CHECK(img.at(28, 8, 2) > 0.7f);
  const PixelRect bag = attribute_region(kBagSlot, 32, 16);
  CHECK(bag.row0 == 12);
  CHECK(bag.row1 == 20);
  CHECK(bag.col0 == 10);
  CHECK(bag.col1 == 16);
}

TEST_CASE("save and load round trip through the annotation schema") {
  const auto dir = fs::temp_directory_path() / "ivt_corpus_roundtrip";
  fs::remove_all(dir);
  GeneratorParams p = small_params();
  p.n_identities = 6;
  const Corpus corpus = generate_corpus(p, 9);
  save_corpus(corpus, dir.string());

  CHECK(fs::exists(dir / "annotations.json"));
  CHECK(fs::exists(dir / "ground_truth.json"));

  const LoadedCorpus loaded = load_external(dir.string());
  CHECK(loaded.report.missing_files.empty());
  CHECK(loaded.report.skipped_records == 0);
  CHECK(loaded.train.size() == corpus.train.size());
  CHECK(loaded.val.size() == corpus.val.size());
  CHECK(loaded.test.size() == corpus.test.size());

  const auto truth = load_ground_truth((dir / "ground_truth.json").string());
  CHECK(truth.size() == 6);
  CHECK(truth.at(0) == corpus.specs[0]);
  fs::remove_all(dir);
}

TEST_CASE("loader fans out captions, skips empties, remaps ids") {
  const auto dir = fs::temp_directory_path() / "ivt_loader_test";
  fs::remove_all(dir);
  fs::create_directories(dir / "images");
  write_png(ImageRaster(8, 8, 0.5f), (dir / "images" / "a.png").string());
  write_png(ImageRaster(8, 8, 0.25f), (dir / "images" / "b.png").string());
  std::ofstream ann(dir / "annotations.json");
  ann << R"([
    {"file_path": "images/a.png", "id": 3, "captions": ["one", "two"], "split": "train"},
    {"file_path": "images/b.png", "id": 900, "captions": [], "split": "train"},
    {"file_path": "images/b.png", "id": 900, "captions": ["three"], "split": "test"},
    {"file_path": "images/missing.png", "id": 7, "captions": ["four"], "split": "val"}
  ])";
  ann.close();

  const LoadedCorpus corpus = load_external(dir.string());
  REQUIRE(corpus.train.size() == 2);  // fan-out: 2 captions, 1 raster
  CHECK(corpus.train.pairs[0].image == corpus.train.pairs[1].image);
  CHECK(corpus.train.pairs[0].label == 0);  // 3 -> 0
  REQUIRE(corpus.test.size() == 1);
  CHECK(corpus.test.pairs[0].label == 1);  // 900 -> 1
  CHECK(corpus.report.skipped_records == 1);
  REQUIRE(corpus.report.missing_files.size() == 1);
  CHECK(corpus.report.missing_files[0] == "images/missing.png");
  fs::remove_all(dir);
}

TEST_CASE("loader names the offending record") {
  const auto dir = fs::temp_directory_path() / "ivt_loader_bad";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream ann(dir / "annotations.json");
  ann << R"([
    {"file_path": "x.png", "id": 1, "captions": ["ok"], "split": "train"},
    {"file_path": "y.png", "id": 2, "split": "train"}
  ])";
  ann.close();
  try {
    load_external(dir.string());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    CHECK(what.find("record 1") != std::string::npos);
    CHECK(what.find("captions") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("saved corpora are byte-identical per seed") {
  const auto dir_a = fs::temp_directory_path() / "ivt_corpus_det_a";
  const auto dir_b = fs::temp_directory_path() / "ivt_corpus_det_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  GeneratorParams p = small_params();
  p.n_identities = 5;
  Corpus corpus_a = generate_corpus(p, 21);
  Corpus corpus_b = generate_corpus(p, 21);
  save_corpus(corpus_a, dir_a.string());
  save_corpus(corpus_b, dir_b.string());

  for (const auto& entry : fs::recursive_directory_iterator(dir_a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir_a);
    std::ifstream fa(entry.path(), std::ios::binary);
    std::ifstream fb(dir_b / rel, std::ios::binary);
    REQUIRE(fb.good());
    const std::string bytes_a((std::istreambuf_iterator<char>(fa)), {});
    const std::string bytes_b((std::istreambuf_iterator<char>(fb)), {});
    CHECK(bytes_a == bytes_b);
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}
