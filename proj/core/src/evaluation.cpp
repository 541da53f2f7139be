#include "ivt/evaluation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ivt {

using nlohmann::json;

SimilarityMetric similarity_metric_from_name(const std::string& name) {
  if (name == "dot") return SimilarityMetric::kDot;
  if (name == "cosine") return SimilarityMetric::kCosine;
  throw ConfigError("unknown similarity metric: " + name);
}

const char* similarity_metric_name(SimilarityMetric metric) {
  return metric == SimilarityMetric::kDot ? "dot" : "cosine";
}

SimilarityMatrix similarity_matrix(const Mat& query_features, const Mat& gallery_features,
                                   SimilarityMetric metric, std::vector<int> query_labels,
                                   std::vector<int> gallery_labels) {
  if (query_features.cols() != gallery_features.cols()) {
    throw ConfigError("feature dimension mismatch between queries and gallery");
  }
  if (static_cast<int>(query_labels.size()) != query_features.rows() ||
      static_cast<int>(gallery_labels.size()) != gallery_features.rows()) {
    throw ConfigError("label count does not match feature count");
  }
  SimilarityMatrix sim;
  sim.query_labels = std::move(query_labels);
  sim.gallery_labels = std::move(gallery_labels);
  if (metric == SimilarityMetric::kDot) {
    sim.scores = query_features * gallery_features.transpose();
  } else {
    Mat q = query_features;
    Mat g = gallery_features;
    for (Eigen::Index i = 0; i < q.rows(); ++i) q.row(i) /= std::max(q.row(i).norm(), 1e-12);
    for (Eigen::Index i = 0; i < g.rows(); ++i) g.row(i) /= std::max(g.row(i).norm(), 1e-12);
    sim.scores = q * g.transpose();
  }
  return sim;
}

std::vector<int> ranked_gallery(const SimilarityMatrix& sim, int query) {
  std::vector<int> order(static_cast<std::size_t>(sim.gallery()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const double sa = sim.scores(query, a);
    const double sb = sim.scores(query, b);
    if (sa != sb) return sa > sb;
    return a < b;
  });
  return order;
}

namespace {

void check_labels_present(const SimilarityMatrix& sim) {
  std::vector<int> offending;
  for (int q = 0; q < sim.queries(); ++q) {
    const int label = sim.query_labels[static_cast<std::size_t>(q)];
    if (std::find(sim.gallery_labels.begin(), sim.gallery_labels.end(), label) ==
        sim.gallery_labels.end()) {
      offending.push_back(q);
    }
  }
  if (!offending.empty()) {
    std::ostringstream msg;
    msg << "query labels absent from gallery for queries:";
    for (int q : offending) msg << ' ' << q;
    throw ConfigError(msg.str());
  }
}

}  // namespace

std::map<int, double> cmc(const SimilarityMatrix& sim, const std::vector<int>& ks) {
  check_labels_present(sim);
  std::map<int, double> rates;
  if (sim.queries() == 0) throw ConfigError("CMC needs at least one query");
  std::vector<int> hit_rank(static_cast<std::size_t>(sim.queries()), 0);
  for (int q = 0; q < sim.queries(); ++q) {
    const std::vector<int> order = ranked_gallery(sim, q);
    const int label = sim.query_labels[static_cast<std::size_t>(q)];
    for (int r = 0; r < static_cast<int>(order.size()); ++r) {
      if (sim.gallery_labels[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] == label) {
        hit_rank[static_cast<std::size_t>(q)] = r + 1;  // first relevant position, 1-based
        break;
      }
    }
  }
  for (int k : ks) {
    if (k < 1) throw ConfigError("CMC rank must be >= 1");
    int hits = 0;
    for (int rank : hit_rank) {
      if (rank >= 1 && rank <= k) ++hits;
    }
    rates[k] = static_cast<double>(hits) / static_cast<double>(sim.queries());
  }
  return rates;
}

double mean_average_precision(const SimilarityMatrix& sim) {
  check_labels_present(sim);
  if (sim.queries() == 0) throw ConfigError("mAP needs at least one query");
  double total = 0.0;
  for (int q = 0; q < sim.queries(); ++q) {
    const std::vector<int> order = ranked_gallery(sim, q);
    const int label = sim.query_labels[static_cast<std::size_t>(q)];
    int relevant_seen = 0;
    double ap = 0.0;
    for (int r = 0; r < static_cast<int>(order.size()); ++r) {
      if (sim.gallery_labels[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] == label) {
        ++relevant_seen;
        ap += static_cast<double>(relevant_seen) / static_cast<double>(r + 1);
      }
    }
    total += ap / static_cast<double>(relevant_seen);
  }
  return total / static_cast<double>(sim.queries());
}

HeatMap word_heatmap(const std::string& word, const ImageRaster& image, const ParamStore& params,
                     const EncoderConfig& cfg, const Vocab& vocab) {
  HeatMap heat;
  const TokenSequence tokens = tokenize(word, vocab, cfg.max_text_len);
  for (std::size_t i = 1; i < tokens.ids.size(); ++i) {
    if (tokens.ids[i] == kUnkId) heat.used_unknown_token = true;
  }
  const GlobalFeature text_feature = encode(tokens, params, cfg);

  EncodeCache cache;
  const PatchSequence patches = patchify(image, cfg.patch_size);
  encode_image_batch({patches}, {}, params, cfg, &cache);
  const int k = cfg.patch_count();
  const int grid_rows = cfg.image_height / cfg.patch_size;
  const int grid_cols = cfg.image_width / cfg.patch_size;

  Vec sims(k);
  const double text_norm = std::max(text_feature.values.norm(), 1e-12);
  for (int i = 0; i < k; ++i) {
    const auto state = cache.final_out.row(1 + i);
    const double denom = text_norm * std::max(state.norm(), 1e-12);
    sims(i) = state.dot(text_feature.values) / denom;
  }

  heat.raw_min = sims.minCoeff();
  heat.raw_max = sims.maxCoeff();
  heat.grid.resize(grid_rows, grid_cols);
  const double span = heat.raw_max - heat.raw_min;
  for (int i = 0; i < k; ++i) {
    const double v = span > 0.0 ? (sims(i) - heat.raw_min) / span : 0.0;
    heat.grid(i / grid_cols, i % grid_cols) = v;
  }
  return heat;
}

ImageRaster render_heatmap_overlay(const HeatMap& heat, const ImageRaster& image) {
  ImageRaster out(image.height, image.width);
  const int grid_rows = static_cast<int>(heat.grid.rows());
  const int grid_cols = static_cast<int>(heat.grid.cols());
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      const int gr = std::min(r * grid_rows / image.height, grid_rows - 1);
      const int gc = std::min(c * grid_cols / image.width, grid_cols - 1);
      const float h = static_cast<float>(heat.grid(gr, gc));
      // Blend toward a red/blue ramp: high heat red, low heat blue.
      const float ramp_r = h;
      const float ramp_b = 1.0f - h;
      out.at(r, c, 0) = 0.5f * image.at(r, c, 0) + 0.5f * ramp_r;
      out.at(r, c, 1) = 0.5f * image.at(r, c, 1);
      out.at(r, c, 2) = 0.5f * image.at(r, c, 2) + 0.5f * ramp_b;
    }
  }
  return out;
}

void write_heatmap_json(const HeatMap& heat, const std::string& word, const std::string& path) {
  json grid = json::array();
  for (Eigen::Index r = 0; r < heat.grid.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < heat.grid.cols(); ++c) row.push_back(heat.grid(r, c));
    grid.push_back(row);
  }
  const json out = {{"word", word},
                    {"grid", grid},
                    {"raw_min", heat.raw_min},
                    {"raw_max", heat.raw_max},
                    {"used_unknown_token", heat.used_unknown_token}};
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << out.dump(2) << '\n';
}

RankReport rank_report(const SimilarityMatrix& sim, const std::vector<std::string>& captions,
                       const std::vector<std::string>& gallery_paths, int k) {
  if (k < 1) throw ConfigError("rank report k must be >= 1");
  if (static_cast<int>(captions.size()) != sim.queries()) {
    throw ConfigError("caption count does not match the query count");
  }
  if (static_cast<int>(gallery_paths.size()) != sim.gallery()) {
    throw ConfigError("gallery path count does not match the gallery size");
  }
  RankReport report;
  report.k = std::min(k, sim.gallery());
  for (int q = 0; q < sim.queries(); ++q) {
    RankReport::Query query;
    query.query_index = q;
    query.caption = captions[static_cast<std::size_t>(q)];
    query.label = sim.query_labels[static_cast<std::size_t>(q)];
    const std::vector<int> order = ranked_gallery(sim, q);
    for (int r = 0; r < report.k; ++r) {
      const int g = order[static_cast<std::size_t>(r)];
      RankReportEntry entry;
      entry.gallery_index = g;
      entry.image_path = gallery_paths[static_cast<std::size_t>(g)];
      entry.label = sim.gallery_labels[static_cast<std::size_t>(g)];
      entry.correct = entry.label == query.label;
      query.entries.push_back(std::move(entry));
    }
    report.queries.push_back(std::move(query));
  }
  return report;
}

void write_rank_report_json(const RankReport& report, const std::string& path) {
  json queries = json::array();
  for (const auto& q : report.queries) {
    json entries = json::array();
    for (const auto& e : q.entries) {
      entries.push_back({{"gallery_index", e.gallery_index},
                         {"image_path", e.image_path},
                         {"label", e.label},
                         {"correct", e.correct}});
    }
    queries.push_back({{"query_index", q.query_index},
                       {"caption", q.caption},
                       {"label", q.label},
                       {"entries", entries}});
  }
  const json out = {{"k", report.k}, {"queries", queries}};
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << out.dump(2) << '\n';
}

void write_rank_report_html(const RankReport& report, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>retrieval report</title>\n"
    << "<style>body{font-family:sans-serif} .q{margin-bottom:1em} "
    << "img{height:96px;image-rendering:pixelated;margin-right:4px;border:3px solid}"
    << ".ok{border-color:#2a2} .bad{border-color:#c33}</style></head><body>\n"
    << "<h1>Top-" << report.k << " retrieval results</h1>\n";
  for (const auto& q : report.queries) {
    f << "<div class=\"q\"><p>#" << q.query_index << " [" << q.label << "] " << q.caption
      << "</p>\n";
    for (const auto& e : q.entries) {
      f << "<img class=\"" << (e.correct ? "ok" : "bad") << "\" src=\"" << e.image_path
        << "\" title=\"" << e.label << "\">";
    }
    f << "\n</div>\n";
  }
  f << "</body></html>\n";
}

SplitFeatures encode_split(const DatasetSplit& split, const ParamStore& params,
                           const EncoderConfig& cfg, const Vocab& vocab) {
  if (split.size() == 0) throw ConfigError("cannot encode an empty split");
  SplitFeatures out;

  std::vector<PatchSequence> gallery_patches;
  std::map<std::string, int> seen_paths;
  std::vector<TokenSequence> query_tokens;
  for (const ImageTextPair& pair : split.pairs) {
    if (seen_paths.emplace(pair.image_path, static_cast<int>(out.gallery_paths.size())).second) {
      gallery_patches.push_back(patchify(*pair.image, cfg.patch_size));
      out.gallery_labels.push_back(pair.label);
      out.gallery_paths.push_back(pair.image_path);
    }
    query_tokens.push_back(tokenize(pair.caption, vocab, cfg.max_text_len));
    out.query_labels.push_back(pair.label);
    out.captions.push_back(pair.caption);
  }
  out.gallery_features = encode_image_batch(gallery_patches, {}, params, cfg, nullptr);
  out.query_features = encode_text_batch(query_tokens, params, cfg, nullptr);
  return out;
}

void write_metrics_json(const std::map<int, double>& cmc_rates, double map_value, int queries,
                        int gallery, const std::string& config_hash, const std::string& path) {
  json out;
  for (const auto& [k, rate] : cmc_rates) out["R" + std::to_string(k)] = rate;
  out["mAP"] = map_value;
  out["Q"] = queries;
  out["G"] = gallery;
  out["config_hash"] = config_hash;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << out.dump(2) << '\n';
}

}  // namespace ivt
