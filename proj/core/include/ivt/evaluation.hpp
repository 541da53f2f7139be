#pragma once

#include <map>
#include <string>
#include <vector>

#include "ivt/dataset.hpp"
#include "ivt/encoder.hpp"
#include "ivt/image.hpp"
#include "ivt/text.hpp"

namespace ivt {

struct SimilarityMatrix {
  Mat scores;  // queries x gallery
  std::vector<int> query_labels;
  std::vector<int> gallery_labels;

  int queries() const { return static_cast<int>(scores.rows()); }
  int gallery() const { return static_cast<int>(scores.cols()); }
};

enum class SimilarityMetric { kDot, kCosine };

SimilarityMetric similarity_metric_from_name(const std::string& name);
const char* similarity_metric_name(SimilarityMetric metric);

SimilarityMatrix similarity_matrix(const Mat& query_features, const Mat& gallery_features,
                                   SimilarityMetric metric, std::vector<int> query_labels,
                                   std::vector<int> gallery_labels);

// Gallery order for one query: descending score, ties by ascending index.
std::vector<int> ranked_gallery(const SimilarityMatrix& sim, int query);

// Fraction of queries whose top-k ranked gallery contains the query's label.
// Throws when a query label is absent from the gallery, listing the queries.
std::map<int, double> cmc(const SimilarityMatrix& sim, const std::vector<int>& ks);

double mean_average_precision(const SimilarityMatrix& sim);

struct HeatMap {
  Mat grid;  // (H/P) x (W/P), min-max normalized to [0, 1]
  double raw_min = 0.0;
  double raw_max = 0.0;
  bool used_unknown_token = false;
};

// Similarity of a single word's text feature against every patch token state
// of the final block (after the output layer norm), cosine per patch,
// min-max normalized; a constant field normalizes to all zeros.
HeatMap word_heatmap(const std::string& word, const ImageRaster& image, const ParamStore& params,
                     const EncoderConfig& config, const Vocab& vocab);

// Nearest-neighbor upsample of the grid blended over the image.
ImageRaster render_heatmap_overlay(const HeatMap& heat, const ImageRaster& image);

void write_heatmap_json(const HeatMap& heat, const std::string& word, const std::string& path);

struct RankReportEntry {
  int gallery_index = 0;
  std::string image_path;
  int label = 0;
  bool correct = false;
};

struct RankReport {
  struct Query {
    int query_index = 0;
    std::string caption;
    int label = 0;
    std::vector<RankReportEntry> entries;
  };
  std::vector<Query> queries;
  int k = 0;  // clamped to the gallery size
};

RankReport rank_report(const SimilarityMatrix& sim, const std::vector<std::string>& captions,
                       const std::vector<std::string>& gallery_paths, int k);

void write_rank_report_json(const RankReport& report, const std::string& path);
void write_rank_report_html(const RankReport& report, const std::string& path);

// metrics.json with exactly {R1, R5, R10, mAP, Q, G, config_hash}.
void write_metrics_json(const std::map<int, double>& cmc_rates, double map_value, int queries,
                        int gallery, const std::string& config_hash, const std::string& path);

// Features for retrieval over one split: every caption is a query, every
// distinct image (by path) a gallery entry.
struct SplitFeatures {
  Mat query_features;
  std::vector<int> query_labels;
  std::vector<std::string> captions;
  Mat gallery_features;
  std::vector<int> gallery_labels;
  std::vector<std::string> gallery_paths;
};

SplitFeatures encode_split(const DatasetSplit& split, const ParamStore& params,
                           const EncoderConfig& config, const Vocab& vocab);

}  // namespace ivt
