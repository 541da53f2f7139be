// Command-line front end: corpus generation, training, evaluation, the
// masking-ratio ablation, retrieval timing and word heat maps.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ivt/alignment.hpp"
#include "ivt/checkpoint.hpp"
#include "ivt/dataset.hpp"
#include "ivt/evaluation.hpp"
#include "ivt/image_io.hpp"
#include "ivt/runconfig.hpp"
#include "ivt/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ivt;

namespace {

constexpr const char* kVersion = "ivt 0.1.0";

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntimeAbort = 3;

void write_run_info(const std::string& dir, const std::string& command,
                    const std::string& config_hash) {
  json info = {{"version", kVersion}, {"command", command}, {"config_hash", config_hash}};
  std::ofstream out(fs::path(dir) / "run_info.json", std::ios::binary);
  out << info.dump(2) << '\n';
}

RunConfig load_run_config(const std::string& config_path, const std::vector<std::string>& sets) {
  RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::from_file(config_path);
  for (const std::string& assignment : sets) cfg.apply_override(assignment);
  return cfg;
}

Vocab vocab_from_split(const DatasetSplit& split) {
  std::vector<std::string> captions;
  captions.reserve(split.pairs.size());
  for (const auto& pair : split.pairs) captions.push_back(pair.caption);
  return build_vocab(captions, 1);
}

struct EvalOutput {
  std::map<int, double> rates;
  double map_value = 0.0;
  int queries = 0;
  int gallery = 0;
};

EvalOutput evaluate_with_params(const DatasetSplit& split, const ParamStore& params,
                                const EncoderConfig& model, const Vocab& vocab,
                                SimilarityMetric metric, const std::vector<int>& ks,
                                SimilarityMatrix* sim_out = nullptr,
                                SplitFeatures* features_out = nullptr) {
  const SplitFeatures features = encode_split(split, params, model, vocab);
  const SimilarityMatrix sim =
      similarity_matrix(features.query_features, features.gallery_features, metric,
                        features.query_labels, features.gallery_labels);
  EvalOutput out;
  out.rates = cmc(sim, ks);
  out.map_value = mean_average_precision(sim);
  out.queries = sim.queries();
  out.gallery = sim.gallery();
  if (sim_out) *sim_out = sim;
  if (features_out) *features_out = features;
  return out;
}

int cmd_generate_corpus(int ids, int images_per_id, int captions_per_image, int height, int width,
                        std::uint64_t seed, const std::string& out_dir) {
  GeneratorParams params;
  params.n_identities = ids;
  params.images_per_id = images_per_id;
  params.captions_per_image = captions_per_image;
  params.image_height = height;
  params.image_width = width;
  const Corpus corpus = generate_corpus(params, seed);
  save_corpus(corpus, out_dir);
  std::cout << "corpus written to " << out_dir << ": train " << corpus.train.size()
            << " pairs, val " << corpus.val.size() << ", test " << corpus.test.size()
            << " pairs\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& resume) {
  const RunConfig cfg = load_run_config(config_path, sets);
  cfg.require({"data.corpus_dir", "output_dir"});
  const std::string out_dir = cfg.get_string("output_dir");
  fs::create_directories(out_dir);

  const LoadedCorpus corpus = load_external(cfg.get_string("data.corpus_dir"));
  if (!corpus.report.missing_files.empty()) {
    std::cerr << "warning: " << corpus.report.missing_files.size()
              << " annotation records point at missing files\n";
  }
  if (corpus.train.size() == 0) throw ConfigError("training split is empty");

  Vocab vocab = vocab_from_split(corpus.train);
  const EncoderConfig model = cfg.encoder_config(vocab.size());
  const TrainConfig train_cfg = cfg.train_config();
  const AlignmentConfig alignment = cfg.alignment_config();

  cfg.save((fs::path(out_dir) / "config.resolved").string());
  vocab.save((fs::path(out_dir) / "vocab.txt").string());
  write_run_info(out_dir, "train", cfg.hash());

  const TrainResult result = train(corpus.train, model, train_cfg, alignment, vocab,
                                   PosLexicon::builtin(), out_dir, &corpus.val, resume);
  std::cout << "trained " << result.steps_run << " steps; final checkpoint "
            << result.final_checkpoint << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& corpus_dir,
                 const std::string& split_name, const std::string& out_dir,
                 const std::string& metric_name, const std::string& ks_text, bool oracle,
                 int report_k) {
  fs::create_directories(out_dir);
  const LoadedCorpus corpus = load_external(corpus_dir);
  const DatasetSplit& split = corpus.split(split_name);
  if (split.size() == 0) throw ConfigError("split '" + split_name + "' is empty");

  std::vector<int> ks;
  {
    std::stringstream ss(ks_text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) ks.push_back(std::stoi(item));
    }
    if (ks.empty()) throw ConfigError("eval.ks must not be empty");
  }
  const SimilarityMetric metric = similarity_metric_from_name(metric_name);

  SimilarityMatrix sim;
  std::vector<std::string> captions, gallery_paths;
  std::string hash_source;

  if (oracle) {
    // Ground-truth attribute matching instead of a model: validates the corpus.
    const auto truth = load_ground_truth((fs::path(corpus_dir) / "ground_truth.json").string());
    std::map<int, int> label_to_original;
    for (const auto& [original, label] : corpus.id_map) label_to_original[label] = original;
    std::map<std::string, int> seen;
    std::vector<int> gallery_labels;
    std::vector<const AttributeSpec*> specs;
    for (const auto& pair : split.pairs) {
      if (seen.emplace(pair.image_path, 0).second) {
        gallery_labels.push_back(pair.label);
        gallery_paths.push_back(pair.image_path);
        specs.push_back(&truth.at(label_to_original.at(pair.label)));
      }
    }
    sim.scores.resize(split.size(), static_cast<int>(gallery_labels.size()));
    for (int q = 0; q < split.size(); ++q) {
      const auto& pair = split.pairs[static_cast<std::size_t>(q)];
      sim.query_labels.push_back(pair.label);
      captions.push_back(pair.caption);
      for (std::size_t g = 0; g < specs.size(); ++g) {
        sim.scores(q, static_cast<int>(g)) = oracle_similarity(pair.caption, *specs[g]);
      }
    }
    sim.gallery_labels = gallery_labels;
    hash_source = "oracle;split=" + split_name + ";ks=" + ks_text;
  } else {
    if (checkpoint_path.empty()) throw ConfigError("evaluate needs --checkpoint (or --oracle)");
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const Vocab vocab(ckpt.vocab_tokens);
    SplitFeatures features;
    evaluate_with_params(split, *ckpt.params, ckpt.config, vocab, metric, ks, &sim, &features);
    captions = features.captions;
    gallery_paths = features.gallery_paths;
    hash_source = "checkpoint_step=" + std::to_string(ckpt.step) +
                  ";metric=" + metric_name + ";split=" + split_name + ";ks=" + ks_text;
  }

  const auto rates = cmc(sim, ks);
  const double map_value = mean_average_precision(sim);
  const std::string config_hash = to_hex(fnv1a64(hash_source));
  write_metrics_json(rates, map_value, sim.queries(), sim.gallery(), config_hash,
                     (fs::path(out_dir) / "metrics.json").string());

  const RankReport report = rank_report(sim, captions, gallery_paths, report_k);
  write_rank_report_json(report, (fs::path(out_dir) / "report.json").string());
  write_rank_report_html(report, (fs::path(out_dir) / "report.html").string());

  std::cout << "metrics:";
  for (const auto& [k, rate] : rates) std::cout << " R" << k << "=" << rate;
  std::cout << " mAP=" << map_value << " (Q=" << sim.queries() << ", G=" << sim.gallery()
            << ")\n";
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& sets,
               const std::string& ratios_text, const std::string& seeds_text) {
  RunConfig base_cfg = load_run_config(config_path, sets);
  base_cfg.require({"data.corpus_dir", "output_dir"});

  std::vector<double> ratios;
  {
    std::stringstream ss(ratios_text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) ratios.push_back(std::stod(item));
    }
  }
  if (ratios.empty()) throw ConfigError("--ratios must name at least one value");
  for (double r : ratios) {
    if (r < 0.0 || r >= 1.0) throw ConfigError("ratios must lie in [0, 1)");
  }
  std::sort(ratios.begin(), ratios.end());

  std::vector<std::uint64_t> seeds;
  if (seeds_text.empty()) {
    seeds.push_back(base_cfg.get_u64("train.seed"));
  } else {
    std::stringstream ss(seeds_text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) seeds.push_back(std::stoull(item));
    }
  }

  const std::string out_root = base_cfg.get_string("output_dir");
  fs::create_directories(out_root);
  const LoadedCorpus corpus = load_external(base_cfg.get_string("data.corpus_dir"));
  Vocab vocab = vocab_from_split(corpus.train);
  const PosLexicon lexicon = PosLexicon::builtin();

  struct Row {
    double ratio;
    double r1;
    double map_value;
  };
  std::vector<Row> rows;
  for (const double ratio : ratios) {
    double r1_sum = 0.0, map_sum = 0.0;
    for (const std::uint64_t seed : seeds) {
      RunConfig cfg = base_cfg;
      std::ostringstream ratio_text;
      ratio_text << ratio;
      cfg.set("bmm.ratio", ratio_text.str());
      cfg.set("bmm.enabled", "true");
      cfg.set("train.seed", std::to_string(seed));
      std::ostringstream run_name;
      run_name << "ratio_" << ratio << "_seed_" << seed;
      const std::string run_dir = (fs::path(out_root) / run_name.str()).string();
      fs::create_directories(run_dir);
      cfg.set("output_dir", run_dir);
      cfg.save((fs::path(run_dir) / "config.resolved").string());
      write_run_info(run_dir, "ablate-mask-ratio", cfg.hash());

      const EncoderConfig model = cfg.encoder_config(vocab.size());
      const TrainConfig train_cfg = cfg.train_config();
      const AlignmentConfig alignment = cfg.alignment_config();
      vocab.save((fs::path(run_dir) / "vocab.txt").string());
      train(corpus.train, model, train_cfg, alignment, vocab, lexicon, run_dir, nullptr);

      Checkpoint ckpt = load_checkpoint((fs::path(run_dir) / "checkpoint_final.ivt").string());
      const EvalOutput eval = evaluate_with_params(corpus.test, *ckpt.params, ckpt.config, vocab,
                                                   SimilarityMetric::kCosine, {1});
      r1_sum += eval.rates.at(1);
      map_sum += eval.map_value;
      std::cout << "ratio " << ratio << " seed " << seed << ": R1 " << eval.rates.at(1) << " mAP "
                << eval.map_value << "\n";
    }
    rows.push_back({ratio, r1_sum / static_cast<double>(seeds.size()),
                    map_sum / static_cast<double>(seeds.size())});
  }

  std::ofstream csv(fs::path(out_root) / "ablation.csv", std::ios::binary);
  csv << "ratio,R1,mAP\n";
  for (const Row& row : rows) csv << row.ratio << "," << row.r1 << "," << row.map_value << "\n";

  // Minimal line plot of R1 and mAP against the masking ratio.
  {
    const int w = 480, h = 320, ml = 50, mb = 40, mt = 20, mr = 20;
    std::ofstream svg(fs::path(out_root) / "ablation.svg", std::ios::binary);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    const double x0 = rows.front().ratio, x1 = std::max(rows.back().ratio, x0 + 1e-9);
    const auto px = [&](double ratio) {
      return ml + (ratio - x0) / (x1 - x0) * (w - ml - mr);
    };
    const auto py = [&](double value) { return h - mb - value * (h - mb - mt); };
    for (int tick = 0; tick <= 4; ++tick) {
      const double v = tick / 4.0;
      svg << "<line x1=\"" << ml << "\" y1=\"" << py(v) << "\" x2=\"" << w - mr << "\" y2=\""
          << py(v) << "\" stroke=\"#ddd\"/>\n"
          << "<text x=\"8\" y=\"" << py(v) + 4 << "\" font-size=\"11\">" << v << "</text>\n";
    }
    const auto polyline = [&](const char* color, auto getter) {
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (const Row& row : rows) svg << px(row.ratio) << "," << py(getter(row)) << " ";
      svg << "\"/>\n";
    };
    polyline("#c33", [](const Row& r) { return r.r1; });
    polyline("#36c", [](const Row& r) { return r.map_value; });
    for (const Row& row : rows) {
      svg << "<text x=\"" << px(row.ratio) - 8 << "\" y=\"" << h - mb + 16
          << "\" font-size=\"11\">" << row.ratio << "</text>\n";
    }
    svg << "<text x=\"" << w - 150 << "\" y=\"" << mt + 12
        << "\" font-size=\"12\" fill=\"#c33\">R1</text>\n"
        << "<text x=\"" << w - 110 << "\" y=\"" << mt + 12
        << "\" font-size=\"12\" fill=\"#36c\">mAP</text>\n"
        << "<text x=\"" << (w / 2 - 40) << "\" y=\"" << h - 8
        << "\" font-size=\"12\">masking ratio</text>\n</svg>\n";
  }
  std::cout << "ablation table: " << (fs::path(out_root) / "ablation.csv").string() << "\n";
  return kExitOk;
}

int cmd_timing(const std::string& checkpoint_path, int gallery_size, int query_count) {
  if (gallery_size <= 0) throw ConfigError("--gallery-size must be positive");
  if (query_count <= 0) throw ConfigError("--queries must be positive");
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const EncoderConfig& model = ckpt.config;
  const ParamStore& params = *ckpt.params;

  // Synthetic inputs: the timing only depends on shapes.
  Rng rng(7);
  std::vector<PatchSequence> gallery;
  for (int g = 0; g < gallery_size; ++g) {
    PatchSequence ps;
    ps.patch_size = model.patch_size;
    ps.grid_rows = model.image_height / model.patch_size;
    ps.grid_cols = model.image_width / model.patch_size;
    ps.patches.resize(model.patch_count(), model.patch_dim());
    for (Eigen::Index r = 0; r < ps.patches.rows(); ++r) {
      for (Eigen::Index c = 0; c < ps.patches.cols(); ++c) ps.patches(r, c) = rng.uniform();
    }
    gallery.push_back(std::move(ps));
  }
  std::vector<TokenSequence> queries;
  for (int q = 0; q < query_count; ++q) {
    TokenSequence seq;
    seq.ids.push_back(kClsId);
    const int words = 1 + rng.uniform_int(model.max_text_len - 2);
    for (int w = 0; w < words; ++w) {
      seq.ids.push_back(kNumReservedIds +
                        rng.uniform_int(std::max(1, model.vocab_size - kNumReservedIds)));
    }
    seq.ids.push_back(kSepId);
    while (static_cast<int>(seq.ids.size()) < model.max_text_len) seq.ids.push_back(kPadId);
    queries.push_back(std::move(seq));
  }

  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  const Mat gallery_features = encode_image_batch(gallery, {}, params, model, nullptr);
  const auto t1 = Clock::now();
  const Mat query_features = encode_text_batch(queries, params, model, nullptr);
  const auto t2 = Clock::now();
  std::vector<int> ql(static_cast<std::size_t>(query_count), 0);
  std::vector<int> gl(static_cast<std::size_t>(gallery_size), 0);
  const SimilarityMatrix sim = similarity_matrix(query_features, gallery_features,
                                                 SimilarityMetric::kCosine, ql, gl);
  for (int q = 0; q < sim.queries(); ++q) (void)ranked_gallery(sim, q);
  const auto t3 = Clock::now();

  const auto seconds = [](Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };
  json out = {{"gallery_size", gallery_size},
              {"queries", query_count},
              {"encode_gallery_s", seconds(t0, t1)},
              {"encode_queries_s", seconds(t1, t2)},
              {"similarity_rank_s", seconds(t2, t3)}};
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

int cmd_heatmap(const std::string& checkpoint_path, const std::string& image_path,
                const std::string& word, const std::string& out_dir) {
  fs::create_directories(out_dir);
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const Vocab vocab(ckpt.vocab_tokens);
  const ImageRaster image = read_png(image_path);
  if (image.height != ckpt.config.image_height || image.width != ckpt.config.image_width) {
    throw ConfigError("image size does not match the checkpoint configuration");
  }
  const HeatMap heat = word_heatmap(word, image, *ckpt.params, ckpt.config, vocab);
  write_heatmap_json(heat, word, (fs::path(out_dir) / "heatmap.json").string());
  write_png(render_heatmap_overlay(heat, image), (fs::path(out_dir) / "overlay.png").string());
  if (heat.used_unknown_token) {
    std::cout << "note: '" << word << "' is outside the checkpoint vocabulary (UNK used)\n";
  }
  std::cout << "heat map written to " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unified visual-textual retrieval workbench"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate-corpus", "render a synthetic attribute corpus");
  int ids = 64, images_per_id = 4, captions_per_image = 2, height = 32, width = 16;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  gen->add_option("--ids", ids, "number of identities");
  gen->add_option("--images-per-id", images_per_id, "images per identity");
  gen->add_option("--captions-per-image", captions_per_image, "captions per image");
  gen->add_option("--height", height, "image height in pixels");
  gen->add_option("--width", width, "image width in pixels");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train a retrieval model");
  std::string train_config, resume;
  std::vector<std::string> train_sets;
  train_cmd->add_option("-c,--config", train_config, "run configuration file");
  train_cmd->add_option("--set", train_sets, "override a config key (key=value)");
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");

  auto* eval_cmd = app.add_subcommand("evaluate", "retrieval metrics for a checkpoint");
  std::string eval_ckpt, eval_corpus, eval_split = "test", eval_out, eval_metric = "cosine",
              eval_ks = "1,5,10";
  bool eval_oracle = false;
  int report_k = 5;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file");
  eval_cmd->add_option("--corpus", eval_corpus, "corpus directory")->required();
  eval_cmd->add_option("--split", eval_split, "split to evaluate (train/val/test)");
  eval_cmd->add_option("--out", eval_out, "output directory")->required();
  eval_cmd->add_option("--metric", eval_metric, "similarity metric (cosine/dot)");
  eval_cmd->add_option("--ks", eval_ks, "comma list of CMC ranks");
  eval_cmd->add_option("--report-k", report_k, "entries per query in the rank report");
  eval_cmd->add_flag("--oracle", eval_oracle,
                     "score with ground-truth attribute matching instead of a checkpoint");

  auto* ablate_cmd = app.add_subcommand("ablate-mask-ratio", "train and evaluate per masking ratio");
  std::string ablate_config, ablate_ratios = "0.0,0.3,0.7", ablate_seeds;
  std::vector<std::string> ablate_sets;
  ablate_cmd->add_option("-c,--config", ablate_config, "run configuration file");
  ablate_cmd->add_option("--set", ablate_sets, "override a config key (key=value)");
  ablate_cmd->add_option("--ratios", ablate_ratios, "comma list of masking ratios");
  ablate_cmd->add_option("--seeds", ablate_seeds, "comma list of seeds (default: config seed)");

  auto* timing_cmd = app.add_subcommand("timing", "wall-clock phases of retrieval");
  std::string timing_ckpt;
  int gallery_size = 0, query_count = 32;
  timing_cmd->add_option("--checkpoint", timing_ckpt, "checkpoint file")->required();
  timing_cmd->add_option("--gallery-size", gallery_size, "gallery entries to encode")->required();
  timing_cmd->add_option("--queries", query_count, "query texts to encode");

  auto* heat_cmd = app.add_subcommand("heatmap", "word-to-patch similarity heat map");
  std::string heat_ckpt, heat_image, heat_word, heat_out;
  heat_cmd->add_option("--checkpoint", heat_ckpt, "checkpoint file")->required();
  heat_cmd->add_option("--image", heat_image, "input image (png)")->required();
  heat_cmd->add_option("--word", heat_word, "probe word")->required();
  heat_cmd->add_option("--out", heat_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      return cmd_generate_corpus(ids, images_per_id, captions_per_image, height, width, gen_seed,
                                 gen_out);
    }
    if (train_cmd->parsed()) return cmd_train(train_config, train_sets, resume);
    if (eval_cmd->parsed()) {
      return cmd_evaluate(eval_ckpt, eval_corpus, eval_split, eval_out, eval_metric, eval_ks,
                          eval_oracle, report_k);
    }
    if (ablate_cmd->parsed()) {
      return cmd_ablate(ablate_config, ablate_sets, ablate_ratios, ablate_seeds);
    }
    if (timing_cmd->parsed()) return cmd_timing(timing_ckpt, gallery_size, query_count);
    if (heat_cmd->parsed()) return cmd_heatmap(heat_ckpt, heat_image, heat_word, heat_out);
  } catch (const TrainAbortError& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return kExitRuntimeAbort;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeAbort;
  }
  return kExitOk;
}
