#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>

#include "ivt/evaluation.hpp"
#include "oracles.hpp"

using namespace ivt;
namespace fs = std::filesystem;

namespace {

Mat random_features(int rows, int cols, std::uint64_t seed) {
  Mat m(rows, cols);
  Rng rng(seed);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.normal();
  }
  return m;
}

// Integer-grid scores force plenty of exact ties.
SimilarityMatrix random_tied_instance(std::uint64_t seed) {
  Rng rng(seed);
  const int q = 1 + rng.uniform_int(20);
  const int g = 1 + rng.uniform_int(50);
  const int n_ids = 1 + rng.uniform_int(8);
  SimilarityMatrix sim;
  sim.scores.resize(q, g);
  for (int i = 0; i < q; ++i) {
    for (int j = 0; j < g; ++j) sim.scores(i, j) = rng.uniform_int(5) / 4.0;
  }
  sim.gallery_labels.resize(static_cast<std::size_t>(g));
  for (int j = 0; j < g; ++j) sim.gallery_labels[static_cast<std::size_t>(j)] = rng.uniform_int(n_ids);
  sim.query_labels.resize(static_cast<std::size_t>(q));
  for (int i = 0; i < q; ++i) {
    // Guarantee presence by picking an existing gallery label.
    sim.query_labels[static_cast<std::size_t>(i)] =
        sim.gallery_labels[static_cast<std::size_t>(rng.uniform_int(g))];
  }
  return sim;
}

}  // namespace

TEST_CASE("similarity metric basics") {
  Mat one(1, 3);
  one << 1.0, 2.0, 2.0;
  const SimilarityMatrix self = similarity_matrix(one, one, SimilarityMetric::kCosine, {0}, {0});
  CHECK(self.scores(0, 0) == doctest::Approx(1.0).epsilon(1e-12));

  Mat a(1, 2), b(1, 2);
  a << 1.0, 0.0;
  b << 0.0, 5.0;
  CHECK(similarity_matrix(a, b, SimilarityMetric::kCosine, {0}, {0}).scores(0, 0) ==
        doctest::Approx(0.0));
  CHECK(similarity_matrix(a, b, SimilarityMetric::kDot, {0}, {0}).scores(0, 0) ==
        doctest::Approx(0.0));

  Mat c(1, 2);
  c << 3.0, 4.0;
  CHECK(similarity_matrix(a, c, SimilarityMetric::kDot, {0}, {0}).scores(0, 0) ==
        doctest::Approx(3.0));
}

TEST_CASE("similarity matrix matches a double-loop recomputation") {
  const Mat q = random_features(2, 5, 3);
  const Mat g = random_features(3, 5, 4);
  const SimilarityMatrix dot = similarity_matrix(q, g, SimilarityMetric::kDot, {0, 1}, {0, 1, 2});
  const SimilarityMatrix cos =
      similarity_matrix(q, g, SimilarityMetric::kCosine, {0, 1}, {0, 1, 2});
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot_ref = 0.0, qq = 0.0, gg = 0.0;
      for (int c = 0; c < 5; ++c) {
        dot_ref += q(i, c) * g(j, c);
        qq += q(i, c) * q(i, c);
        gg += g(j, c) * g(j, c);
      }
      CHECK(dot.scores(i, j) == doctest::Approx(dot_ref).epsilon(1e-9));
      CHECK(cos.scores(i, j) ==
            doctest::Approx(dot_ref / (std::sqrt(qq) * std::sqrt(gg))).epsilon(1e-9));
    }
  }
  CHECK_THROWS_AS(similarity_matrix(random_features(2, 4, 5), g, SimilarityMetric::kDot, {0, 1},
                                    {0, 1, 2}),
                  ConfigError);
}

TEST_CASE("cmc basics") {
  SimilarityMatrix sim;
  sim.scores.resize(1, 3);
  sim.scores << 0.9, 0.2, 0.1;
  sim.query_labels = {7};
  sim.gallery_labels = {7, 1, 2};
  CHECK(cmc(sim, {1}).at(1) == 1.0);

  // True match ranked exactly 6th of 10.
  SimilarityMatrix sixth;
  sixth.scores.resize(1, 10);
  for (int j = 0; j < 10; ++j) sixth.scores(0, j) = 1.0 - 0.1 * j;
  sixth.query_labels = {42};
  sixth.gallery_labels = {0, 1, 2, 3, 4, 42, 6, 7, 8, 9};
  const auto rates = cmc(sixth, {1, 5, 10});
  CHECK(rates.at(5) == 0.0);
  CHECK(rates.at(10) == 1.0);
}

TEST_CASE("cmc reports queries whose label is missing") {
  SimilarityMatrix sim;
  sim.scores.resize(2, 2);
  sim.scores.setZero();
  sim.query_labels = {0, 99};
  sim.gallery_labels = {0, 1};
  try {
    cmc(sim, {1});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
}

TEST_CASE("mAP hand cases") {
  SimilarityMatrix sim;
  sim.scores.resize(1, 3);
  sim.scores << 0.9, 0.5, 0.1;
  sim.query_labels = {1};
  sim.gallery_labels = {1, 0, 0};
  CHECK(mean_average_precision(sim) == doctest::Approx(1.0));

  // Relevant at ranks 1 and 3: AP = (1/1 + 2/3) / 2.
  SimilarityMatrix two;
  two.scores.resize(1, 3);
  two.scores << 0.9, 0.5, 0.1;
  two.query_labels = {1};
  two.gallery_labels = {1, 0, 1};
  CHECK(mean_average_precision(two) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("metrics agree exactly with brute force on random tied instances") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SimilarityMatrix sim = random_tied_instance(seed);
    const auto rates = cmc(sim, {1, 5, 10});
    const auto ref = oracle::cmc(sim.scores, sim.query_labels, sim.gallery_labels, {1, 5, 10});
    CHECK(rates.at(1) == ref.at(1));
    CHECK(rates.at(5) == ref.at(5));
    CHECK(rates.at(10) == ref.at(10));
    CHECK(mean_average_precision(sim) ==
          oracle::mean_average_precision(sim.scores, sim.query_labels, sim.gallery_labels));
    // Monotonicity along k.
    CHECK(rates.at(1) <= rates.at(5));
    CHECK(rates.at(5) <= rates.at(10));
    CHECK(mean_average_precision(sim) >= 0.0);
    CHECK(mean_average_precision(sim) <= 1.0);
  }
}

TEST_CASE("mAP is exactly one iff all relevant items rank on top") {
  SimilarityMatrix sim;
  sim.scores.resize(2, 4);
  sim.scores << 0.9, 0.8, 0.2, 0.1,
                 0.1, 0.9, 0.2, 0.8;
  sim.query_labels = {5, 6};
  sim.gallery_labels = {5, 5, 6, 6};
  // Query 0: relevant at ranks 1,2 -> AP 1. Query 1: relevant at ranks 2,3
  // -> AP (1/2 + 2/3)/2 = 7/12. Mean: 19/24.
  CHECK(mean_average_precision(sim) == doctest::Approx(19.0 / 24.0).epsilon(1e-12));

  SimilarityMatrix perfect = sim;
  perfect.scores << 0.9, 0.8, 0.2, 0.1,
                     0.1, 0.2, 0.9, 0.8;
  CHECK(mean_average_precision(perfect) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("permuting an untied gallery leaves metrics unchanged") {
  Rng rng(9);
  SimilarityMatrix sim;
  const int g = 12;
  sim.scores.resize(3, g);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < g; ++j) sim.scores(i, j) = rng.uniform();  // untied w.p. 1
  }
  sim.query_labels = {0, 1, 2};
  sim.gallery_labels.resize(g);
  for (int j = 0; j < g; ++j) sim.gallery_labels[static_cast<std::size_t>(j)] = j % 3;

  SimilarityMatrix permuted = sim;
  std::vector<int> perm(g);
  for (int j = 0; j < g; ++j) perm[static_cast<std::size_t>(j)] = (j * 5 + 3) % g;
  for (int j = 0; j < g; ++j) {
    permuted.scores.col(j) = sim.scores.col(perm[static_cast<std::size_t>(j)]);
    permuted.gallery_labels[static_cast<std::size_t>(j)] =
        sim.gallery_labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])];
  }
  const auto a = cmc(sim, {1, 5});
  const auto b = cmc(permuted, {1, 5});
  CHECK(a.at(1) == b.at(1));
  CHECK(a.at(5) == b.at(5));
  CHECK(mean_average_precision(sim) ==
        doctest::Approx(mean_average_precision(permuted)).epsilon(1e-12));

  // With ties the documented index rule keeps results reproducible.
  SimilarityMatrix tied;
  tied.scores = Mat::Zero(1, 4);
  tied.query_labels = {1};
  tied.gallery_labels = {0, 1, 0, 1};
  CHECK(cmc(tied, {1}).at(1) == 0.0);  // index 0 (label 0) wins the tie
  CHECK(cmc(tied, {2}).at(2) == 1.0);
  CHECK(cmc(tied, {1}).at(1) == cmc(tied, {1}).at(1));
}

TEST_CASE("heatmap grid shape and degenerate normalization") {
  EncoderConfig cfg;
  cfg.depth = 1;
  cfg.width = 8;
  cfg.heads = 2;
  cfg.patch_size = 4;
  cfg.image_height = 16;
  cfg.image_width = 8;
  cfg.max_text_len = 8;
  cfg.vocab_size = 8;
  cfg.mlp_ratio = 2.0;
  const Vocab vocab({"[CLS]", "[SEP]", "[PAD]", "[UNK]", "[MASK]", "red", "blue", "bag"});

  ParamStore params(make_encoder_layout(cfg));
  init_encoder_params(params, 5);
  const ImageRaster img(16, 8, 0.5f);
  const HeatMap heat = word_heatmap("red", img, params, cfg, vocab);
  CHECK(heat.grid.rows() == 4);
  CHECK(heat.grid.cols() == 2);
  CHECK_FALSE(heat.used_unknown_token);
  CHECK(heat.grid.minCoeff() >= 0.0);
  CHECK(heat.grid.maxCoeff() <= 1.0);

  const HeatMap unk = word_heatmap("zebra", img, params, cfg, vocab);
  CHECK(unk.used_unknown_token);

  // All-zero parameters produce a constant similarity field -> all zeros.
  ParamStore zeros(make_encoder_layout(cfg));
  const HeatMap flat = word_heatmap("red", img, zeros, cfg, vocab);
  CHECK(flat.grid.cwiseAbs().maxCoeff() == 0.0);

  const ImageRaster overlay = render_heatmap_overlay(heat, img);
  CHECK(overlay.height == img.height);
  CHECK(overlay.width == img.width);
}

TEST_CASE("rank report clamps k and counts entries") {
  SimilarityMatrix sim;
  sim.scores.resize(2, 3);
  sim.scores << 0.9, 0.5, 0.1,
                 0.1, 0.5, 0.9;
  sim.query_labels = {0, 1};
  sim.gallery_labels = {0, 0, 1};
  const std::vector<std::string> captions = {"first", "second"};
  const std::vector<std::string> paths = {"a.png", "b.png", "c.png"};

  const RankReport big = rank_report(sim, captions, paths, 10);
  CHECK(big.k == 3);
  int entries = 0;
  for (const auto& q : big.queries) entries += static_cast<int>(q.entries.size());
  CHECK(entries == 2 * 3);  // Q * min(k, G)

  const RankReport top1 = rank_report(sim, captions, paths, 1);
  REQUIRE(top1.queries.size() == 2);
  CHECK(top1.queries[0].entries[0].correct);
  CHECK(top1.queries[0].entries[0].image_path == "a.png");
  CHECK(top1.queries[1].entries[0].correct);

  // All-correct query renders k true flags.
  SimilarityMatrix all;
  all.scores.resize(1, 2);
  all.scores << 0.6, 0.4;
  all.query_labels = {3};
  all.gallery_labels = {3, 3};
  const RankReport flags = rank_report(all, {"q"}, {"x.png", "y.png"}, 2);
  CHECK(flags.queries[0].entries[0].correct);
  CHECK(flags.queries[0].entries[1].correct);

  const auto dir = fs::temp_directory_path();
  write_rank_report_json(big, (dir / "ivt_report.json").string());
  write_rank_report_html(big, (dir / "ivt_report.html").string());
  std::ifstream jf(dir / "ivt_report.json");
  nlohmann::json parsed;
  jf >> parsed;
  CHECK(parsed.at("k").get<int>() == 3);
  CHECK(parsed.at("queries").size() == 2);
  fs::remove(dir / "ivt_report.json");
  fs::remove(dir / "ivt_report.html");
}

TEST_CASE("metrics json carries exactly the documented keys") {
  const auto path = fs::temp_directory_path() / "ivt_metrics.json";
  write_metrics_json({{1, 0.5}, {5, 0.75}, {10, 1.0}}, 0.6, 12, 34, "deadbeef", path.string());
  std::ifstream f(path);
  nlohmann::json parsed;
  f >> parsed;
  std::vector<std::string> keys;
  for (const auto& [key, value] : parsed.items()) keys.push_back(key);
  CHECK(keys == std::vector<std::string>{"G", "Q", "R1", "R10", "R5", "config_hash", "mAP"});
  CHECK(parsed.at("R1").get<double>() == 0.5);
  CHECK(parsed.at("Q").get<int>() == 12);
  fs::remove(path);
}
