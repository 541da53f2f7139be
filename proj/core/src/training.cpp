#include "ivt/training.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "ivt/checkpoint.hpp"
#include "ivt/evaluation.hpp"

namespace ivt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSeedBatch = 31;
constexpr std::uint64_t kSeedStep = 32;

}  // namespace

void TrainConfig::validate() const {
  if (base_lr <= 0.0) throw ConfigError("train.base_lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must be in [0, 1)");
  if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
  if (total_steps < 1) throw ConfigError("train.total_steps must be >= 1");
  if (resolved_warmup() >= total_steps) throw ConfigError("warmup_steps must be < total_steps");
  if (checkpoint_every < 0 || eval_every < 0 || stop_after_step < 0) {
    throw ConfigError("cadence values must be non-negative");
  }
}

double cosine_lr(int step, const TrainConfig& cfg) {
  if (step < 0) throw ConfigError("step must be non-negative");
  const int total = cfg.total_steps;
  const int warmup = cfg.resolved_warmup();
  const int s = std::min(step, total);
  if (s < warmup) {
    return cfg.base_lr * static_cast<double>(s) / static_cast<double>(warmup);
  }
  const double progress = static_cast<double>(s - warmup) / static_cast<double>(total - warmup);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

void sgd_step(ParamStore& params, const ParamStore& grads, ParamStore& velocity, double lr,
              double momentum, double weight_decay) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw ConfigError("optimizer stores disagree on size");
  }
  const auto& entries = params.layout().entries();
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const ParamInfo& info = entries[e];
    const std::size_t count = static_cast<std::size_t>(info.rows) * static_cast<std::size_t>(info.cols);
    double* theta = params.data() + info.offset;
    const double* g = grads.data() + info.offset;
    double* v = velocity.data() + info.offset;
    const bool decayed = info.group == ParamGroup::kProjection;
    for (std::size_t i = 0; i < count; ++i) {
      v[i] = momentum * v[i] + g[i];
      const double decay_term = decayed ? lr * weight_decay * theta[i] : 0.0;
      theta[i] -= lr * v[i] + decay_term;
    }
  }
}

Batch sample_batch(const DatasetSplit& data, int batch_size, std::uint64_t seed, int step) {
  if (data.size() == 0) throw ConfigError("cannot sample from an empty split");
  Rng rng(derive_seed(seed, kSeedBatch, static_cast<std::uint64_t>(step)));

  // Pair indices grouped per identity, in first-appearance order.
  std::map<int, std::vector<int>> by_label;
  std::vector<int> label_order;
  for (int i = 0; i < data.size(); ++i) {
    const int label = data.pairs[static_cast<std::size_t>(i)].label;
    auto [it, inserted] = by_label.try_emplace(label);
    if (inserted) label_order.push_back(label);
    it->second.push_back(i);
  }

  Batch batch;
  const int wanted_ids = batch_size / 2;
  const bool balanced = batch_size % 2 == 0 &&
                        static_cast<int>(label_order.size()) >= wanted_ids && wanted_ids > 0;
  std::vector<int> chosen;
  if (balanced) {
    const std::vector<int> id_sel =
        rng.sample_without_replacement(static_cast<int>(label_order.size()), wanted_ids);
    for (int which : id_sel) {
      const auto& pool = by_label[label_order[static_cast<std::size_t>(which)]];
      if (pool.size() >= 2) {
        const std::vector<int> two = rng.sample_without_replacement(static_cast<int>(pool.size()), 2);
        chosen.push_back(pool[static_cast<std::size_t>(two[0])]);
        chosen.push_back(pool[static_cast<std::size_t>(two[1])]);
      } else {
        chosen.push_back(pool[0]);
        chosen.push_back(pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))]);
      }
    }
  } else {
    for (int i = 0; i < batch_size; ++i) chosen.push_back(rng.uniform_int(data.size()));
  }

  for (int idx : chosen) {
    const ImageTextPair& pair = data.pairs[static_cast<std::size_t>(idx)];
    batch.images.push_back(*pair.image);
    batch.texts.push_back(pair.caption);
    batch.labels.push_back(pair.label);
  }
  return batch;
}

namespace {

std::string checkpoint_name(int step) {
  std::ostringstream name;
  name << "checkpoint_step_" << std::setw(6) << std::setfill('0') << step << ".ivt";
  return name.str();
}

void evaluate_split_quick(const DatasetSplit& split, const ParamStore& params,
                          const EncoderConfig& cfg, const Vocab& vocab, int step,
                          std::ofstream& eval_log) {
  if (split.size() == 0) return;
  const SplitFeatures features = encode_split(split, params, cfg, vocab);
  const SimilarityMatrix sim =
      similarity_matrix(features.query_features, features.gallery_features,
                        SimilarityMetric::kCosine, features.query_labels, features.gallery_labels);
  const auto rates = cmc(sim, {1, 5, 10});
  const double map_value = mean_average_precision(sim);
  json line = {{"step", step},
               {"R1", rates.at(1)},
               {"R5", rates.at(5)},
               {"R10", rates.at(10)},
               {"mAP", map_value}};
  eval_log << line.dump() << '\n';
  eval_log.flush();
}

}  // namespace

TrainResult train(const DatasetSplit& data, const EncoderConfig& model, const TrainConfig& config,
                  const AlignmentConfig& alignment, const Vocab& vocab, const PosLexicon& lexicon,
                  const std::string& out_dir, const DatasetSplit* eval_split,
                  const std::string& resume_path) {
  model.validate();
  config.validate();
  if (data.size() == 0) throw ConfigError("training split is empty");
  if (model.vocab_size != vocab.size()) throw ConfigError("model vocab_size != vocabulary size");

  fs::create_directories(out_dir);

  auto layout = make_encoder_layout(model);
  ParamStore params(layout);
  ParamStore velocity(layout);
  ParamStore grads(layout);
  int start_step = 0;

  if (!resume_path.empty()) {
    Checkpoint ckpt = load_checkpoint(resume_path);
    if (ckpt.config.depth != model.depth || ckpt.config.width != model.width ||
        ckpt.config.heads != model.heads || ckpt.config.patch_size != model.patch_size ||
        ckpt.config.image_height != model.image_height ||
        ckpt.config.image_width != model.image_width ||
        ckpt.config.vocab_size != model.vocab_size ||
        ckpt.config.max_text_len != model.max_text_len) {
      throw ConfigError("checkpoint model configuration does not match the run configuration");
    }
    params = std::move(*ckpt.params);
    if (ckpt.momentum.has_value()) velocity = std::move(*ckpt.momentum);
    start_step = static_cast<int>(ckpt.step);
    if (ckpt.seed != config.seed) {
      throw ConfigError("checkpoint seed does not match the run seed");
    }
  } else {
    init_encoder_params(params, config.seed);
  }

  std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl",
                        resume_path.empty() ? std::ios::binary : std::ios::binary | std::ios::app);
  if (!metrics) throw std::runtime_error("cannot write metrics.jsonl");
  std::ofstream eval_log;
  if (eval_split) {
    eval_log.open(fs::path(out_dir) / "eval_log.jsonl",
                  resume_path.empty() ? std::ios::binary : std::ios::binary | std::ios::app);
  }

  const auto save = [&](int completed_steps, const std::string& filename) {
    Checkpoint ckpt;
    ckpt.config = model;
    ckpt.vocab_tokens = vocab.tokens();
    ckpt.seed = config.seed;
    ckpt.step = static_cast<std::uint64_t>(completed_steps);
    ckpt.params = std::move(params);
    ckpt.momentum = std::move(velocity);
    save_checkpoint(ckpt, (fs::path(out_dir) / filename).string());
    params = std::move(*ckpt.params);
    velocity = std::move(*ckpt.momentum);
  };

  TrainResult result;
  const int last_step = config.stop_after_step > 0
                            ? std::min(config.stop_after_step, config.total_steps)
                            : config.total_steps;
  for (int step = start_step; step < last_step; ++step) {
    const double lr = cosine_lr(step, config);
    const Batch batch = sample_batch(data, config.batch_size, config.seed, step);
    grads.set_zero();
    const LossReport report =
        training_step_grads(batch, params, model, alignment, vocab, lexicon,
                            derive_seed(config.seed, kSeedStep, static_cast<std::uint64_t>(step)),
                            grads);
    if (!std::isfinite(report.total)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << step << ": lr=" << lr << " total=" << report.total
          << " t2v=" << report.t2v << " v2t=" << report.v2t
          << " level=" << text_level_name(report.level) << " ratio=" << report.mask_ratio;
      throw TrainAbortError(msg.str());
    }
    sgd_step(params, grads, velocity, lr, config.momentum, config.weight_decay);

    json line = {{"step", step},
                 {"lr", lr},
                 {"total", report.total},
                 {"t2v", report.t2v},
                 {"v2t", report.v2t},
                 {"level", text_level_name(report.level)},
                 {"ratio", report.mask_ratio}};
    metrics << line.dump() << '\n';

    const int completed = step + 1;
    if (config.checkpoint_every > 0 && completed % config.checkpoint_every == 0) {
      save(completed, checkpoint_name(completed));
    }
    if (eval_split && config.eval_every > 0 && completed % config.eval_every == 0) {
      evaluate_split_quick(*eval_split, params, model, vocab, completed, eval_log);
    }
    result.last_report = report;
    result.steps_run = completed - start_step;
  }
  metrics.flush();

  save(last_step, "checkpoint_final.ivt");
  result.final_checkpoint = (fs::path(out_dir) / "checkpoint_final.ivt").string();
  return result;
}

}  // namespace ivt
