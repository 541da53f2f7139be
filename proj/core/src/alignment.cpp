#include "ivt/alignment.hpp"

#include <cmath>
#include <sstream>

namespace ivt {

namespace {

constexpr std::uint64_t kSeedLevel = 1;
constexpr std::uint64_t kSeedTextPick = 2;
constexpr std::uint64_t kSeedAugment = 3;
constexpr std::uint64_t kSeedMask = 4;

double cmpm_impl(const Mat& fa, const Mat& fb, const std::vector<int>& labels, double eps,
                 bool normalize_targets, Mat* dfa, Mat* dfb) {
  const int batch = static_cast<int>(fa.rows());
  if (batch < 2) throw ConfigError("CMPM needs batch size >= 2");
  if (fb.rows() != batch || fa.cols() != fb.cols()) throw ConfigError("CMPM feature shape mismatch");
  if (static_cast<int>(labels.size()) != batch) throw ConfigError("CMPM label count mismatch");
  if (eps <= 0.0) throw ConfigError("CMPM epsilon must be positive");

  Mat targets = fb;
  Vec norms;
  if (normalize_targets) {
    norms.resize(batch);
    for (int j = 0; j < batch; ++j) {
      norms(j) = std::max(fb.row(j).norm(), 1e-12);
      targets.row(j) /= norms(j);
    }
  }

  const Mat scores = fa * targets.transpose();

  Mat q(batch, batch);
  for (int i = 0; i < batch; ++i) {
    double row_sum = 0.0;
    for (int j = 0; j < batch; ++j) {
      const double match = labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]
                               ? 1.0
                               : 0.0;
      q(i, j) = match;
      row_sum += match;
    }
    q.row(i) /= row_sum;  // the diagonal self-match keeps row_sum >= 1
  }

  double loss = 0.0;
  Mat grad_scores;
  if (dfa) grad_scores.resize(batch, batch);
  Eigen::ArrayXd log_p(batch), r(batch), p(batch);
  for (int i = 0; i < batch; ++i) {
    const double row_max = scores.row(i).maxCoeff();
    const double lse =
        std::log((scores.row(i).array() - row_max).exp().sum()) + row_max;
    log_p = scores.row(i).array().transpose() - lse;
    p = log_p.exp();
    r = log_p - (q.row(i).array().transpose() + eps).log();
    const double kl = (p * r).sum();
    loss += kl;
    if (dfa) grad_scores.row(i) = (p * (r - kl) / batch).matrix().transpose();
  }
  loss /= batch;

  if (dfa) {
    dfa->noalias() += grad_scores * targets;
    Mat d_targets = grad_scores.transpose() * fa;
    if (normalize_targets) {
      for (int j = 0; j < batch; ++j) {
        const auto unit = targets.row(j);
        const double along = d_targets.row(j).dot(unit);
        dfb->row(j).noalias() += (d_targets.row(j) - along * unit) / norms(j);
      }
    } else {
      dfb->noalias() += d_targets;
    }
  }
  return loss;
}

}  // namespace

const char* text_level_name(TextLevel level) {
  switch (level) {
    case TextLevel::kSentence: return "sentence";
    case TextLevel::kPhrase: return "phrase";
    case TextLevel::kWord: return "word";
  }
  throw std::logic_error("unknown text level");
}

double cmpm_one_direction(const Mat& fa, const Mat& fb, const std::vector<int>& labels, double eps,
                          bool normalize_targets) {
  return cmpm_impl(fa, fb, labels, eps, normalize_targets, nullptr, nullptr);
}

void cmpm_distributions(const Mat& fa, const Mat& fb, const std::vector<int>& labels,
                        bool normalize_targets, Mat& p, Mat& q) {
  const int batch = static_cast<int>(fa.rows());
  if (batch < 2) throw ConfigError("CMPM needs batch size >= 2");
  Mat targets = fb;
  if (normalize_targets) {
    for (int j = 0; j < batch; ++j) targets.row(j) /= std::max(fb.row(j).norm(), 1e-12);
  }
  const Mat scores = fa * targets.transpose();
  p.resize(batch, batch);
  q.resize(batch, batch);
  for (int i = 0; i < batch; ++i) {
    const double row_max = scores.row(i).maxCoeff();
    p.row(i) = (scores.row(i).array() - row_max).exp().matrix();
    p.row(i) /= p.row(i).sum();
    double matches = 0.0;
    for (int j = 0; j < batch; ++j) {
      q(i, j) = labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
      matches += q(i, j);
    }
    q.row(i) /= matches;
  }
}

double cmpm_one_direction_grad(const Mat& fa, const Mat& fb, const std::vector<int>& labels,
                               double eps, bool normalize_targets, Mat& dfa, Mat& dfb) {
  return cmpm_impl(fa, fb, labels, eps, normalize_targets, &dfa, &dfb);
}

LossReport cmpm_total(const Mat& image_features, const Mat& text_features,
                      const std::vector<int>& labels, double eps, bool normalize_targets) {
  LossReport report;
  report.t2v = cmpm_one_direction(text_features, image_features, labels, eps, normalize_targets);
  report.v2t = cmpm_one_direction(image_features, text_features, labels, eps, normalize_targets);
  report.total = report.t2v + report.v2t;
  return report;
}

LossReport cmpm_total_grad(const Mat& image_features, const Mat& text_features,
                           const std::vector<int>& labels, double eps, bool normalize_targets,
                           Mat& d_image, Mat& d_text) {
  LossReport report;
  report.t2v = cmpm_one_direction_grad(text_features, image_features, labels, eps,
                                       normalize_targets, d_text, d_image);
  report.v2t = cmpm_one_direction_grad(image_features, text_features, labels, eps,
                                       normalize_targets, d_image, d_text);
  report.total = report.t2v + report.v2t;
  return report;
}

MaskSpec sample_mask(int patch_count, int real_token_count, double ratio, std::uint64_t rng_seed) {
  if (ratio < 0.0 || ratio >= 1.0) throw ConfigError("mask ratio must be in [0, 1)");
  if (patch_count < 0 || real_token_count < 0) throw ConfigError("negative token counts");
  MaskSpec spec;
  spec.ratio = ratio;
  const int n_image = static_cast<int>(std::lround(ratio * patch_count));
  const int n_text = static_cast<int>(std::lround(ratio * real_token_count));
  Rng image_rng(derive_seed(rng_seed, kSeedMask, 0));
  Rng text_rng(derive_seed(rng_seed, kSeedMask, 1));
  spec.image_masked = image_rng.sample_without_replacement(patch_count, n_image);
  spec.text_masked = text_rng.sample_without_replacement(real_token_count, n_text);
  // Real text tokens sit at positions 1..real_count (CLS first, padding last).
  for (int& pos : spec.text_masked) pos += 1;
  return spec;
}

TokenSequence apply_mask(const TokenSequence& tokens, const MaskSpec& spec) {
  TokenSequence out = tokens;
  for (int pos : spec.text_masked) {
    if (pos <= 0 || pos >= out.length()) throw ConfigError("mask index out of range");
    const int id = out.ids[static_cast<std::size_t>(pos)];
    if (id == kClsId || id == kSepId || id == kPadId) {
      throw ConfigError("mask index out of range: reserved position");
    }
    out.ids[static_cast<std::size_t>(pos)] = kMaskId;
  }
  return out;
}

PatchSequence apply_mask(const PatchSequence& patches, const MaskSpec& spec,
                         const Vec& mask_vector) {
  PatchSequence out = patches;
  for (int idx : spec.image_masked) {
    if (idx < 0 || idx >= out.count()) throw ConfigError("mask index out of range");
    if (mask_vector.size() != out.patches.cols()) throw ConfigError("mask vector size mismatch");
    out.patches.row(idx) = mask_vector.transpose();
  }
  return out;
}

std::array<AugmentKind, 3> parse_level_augmentation_map(const std::string& text) {
  std::array<AugmentKind, 3> map = {AugmentKind::kIdentity, AugmentKind::kHorizontalFlip,
                                    AugmentKind::kRandomCrop};
  std::array<bool, 3> seen = {false, false, false};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("level_augmentation_map entries must look like level:augmentation");
    }
    const std::string level = item.substr(0, colon);
    const std::string aug = item.substr(colon + 1);
    int index = -1;
    if (level == "sentence") index = 0;
    else if (level == "phrase") index = 1;
    else if (level == "word") index = 2;
    else throw ConfigError("unknown text level in augmentation map: " + level);
    map[static_cast<std::size_t>(index)] = augment_kind_from_name(aug);
    seen[static_cast<std::size_t>(index)] = true;
  }
  if (!seen[0] || !seen[1] || !seen[2]) {
    throw ConfigError("level_augmentation_map must assign all of sentence, phrase, word");
  }
  return map;
}

std::string format_level_augmentation_map(const std::array<AugmentKind, 3>& map) {
  std::string out;
  out += "sentence:";
  out += augment_kind_name(map[0]);
  out += ",phrase:";
  out += augment_kind_name(map[1]);
  out += ",word:";
  out += augment_kind_name(map[2]);
  return out;
}

namespace {

LossReport training_step_impl(const Batch& batch, const ParamStore& params,
                              const EncoderConfig& cfg, const AlignmentConfig& alignment,
                              const Vocab& vocab, const PosLexicon& lexicon,
                              std::uint64_t rng_seed, ParamStore* grads) {
  const int b = batch.size();
  if (b < 2) throw ConfigError("training batch must contain at least 2 samples");
  if (static_cast<int>(batch.images.size()) != b || static_cast<int>(batch.texts.size()) != b) {
    throw ConfigError("batch field lengths differ");
  }

  TextLevel level = TextLevel::kSentence;
  if (alignment.mla_enabled) {
    Rng level_rng(derive_seed(rng_seed, kSeedLevel));
    level = static_cast<TextLevel>(level_rng.uniform_int(3));
  }
  const AugmentKind aug = alignment.level_augmentation[static_cast<std::size_t>(level)];

  std::vector<PatchSequence> patches;
  std::vector<std::vector<int>> masked_patches;
  std::vector<TokenSequence> tokens;
  patches.reserve(static_cast<std::size_t>(b));
  masked_patches.reserve(static_cast<std::size_t>(b));
  tokens.reserve(static_cast<std::size_t>(b));

  for (int i = 0; i < b; ++i) {
    const TextLevels levels = split_levels(batch.texts[static_cast<std::size_t>(i)], lexicon);
    const std::vector<std::string>& entries =
        level == TextLevel::kSentence ? levels.sentence
        : level == TextLevel::kPhrase ? levels.phrase
                                      : levels.word;
    int pick = 0;
    if (entries.size() > 1) {
      Rng pick_rng(derive_seed(rng_seed, kSeedTextPick, static_cast<std::uint64_t>(i)));
      pick = pick_rng.uniform_int(static_cast<int>(entries.size()));
    }
    TokenSequence seq = tokenize(entries[static_cast<std::size_t>(pick)], vocab, cfg.max_text_len);

    const ImageRaster img = augment(batch.images[static_cast<std::size_t>(i)], aug,
                                    derive_seed(rng_seed, kSeedAugment, static_cast<std::uint64_t>(i)));
    PatchSequence ps = patchify(img, cfg.patch_size);

    std::vector<int> img_masked;
    if (alignment.bmm_enabled) {
      const MaskSpec spec =
          sample_mask(ps.count(), seq.real_count(), alignment.bmm_ratio,
                      derive_seed(rng_seed, kSeedMask, static_cast<std::uint64_t>(i)));
      seq = apply_mask(seq, spec);
      img_masked = spec.image_masked;
    }
    patches.push_back(std::move(ps));
    masked_patches.push_back(std::move(img_masked));
    tokens.push_back(std::move(seq));
  }

  EncodeCache image_cache, text_cache;
  const Mat f_img = encode_image_batch(patches, masked_patches, params, cfg,
                                       grads ? &image_cache : nullptr);
  const Mat f_txt = encode_text_batch(tokens, params, cfg, grads ? &text_cache : nullptr);

  LossReport report;
  if (grads) {
    Mat d_img = Mat::Zero(b, cfg.width);
    Mat d_txt = Mat::Zero(b, cfg.width);
    report = cmpm_total_grad(f_img, f_txt, batch.labels, alignment.cmpm_epsilon,
                             alignment.cmpm_normalize_targets, d_img, d_txt);
    encode_backward(image_cache, d_img, params, *grads);
    encode_backward(text_cache, d_txt, params, *grads);
  } else {
    report = cmpm_total(f_img, f_txt, batch.labels, alignment.cmpm_epsilon,
                        alignment.cmpm_normalize_targets);
  }
  report.level = level;
  report.mask_ratio = alignment.bmm_enabled ? alignment.bmm_ratio : 0.0;
  return report;
}

}  // namespace

LossReport training_step_loss(const Batch& batch, const ParamStore& params,
                              const EncoderConfig& config, const AlignmentConfig& alignment,
                              const Vocab& vocab, const PosLexicon& lexicon,
                              std::uint64_t rng_seed) {
  return training_step_impl(batch, params, config, alignment, vocab, lexicon, rng_seed, nullptr);
}

LossReport training_step_grads(const Batch& batch, const ParamStore& params,
                               const EncoderConfig& config, const AlignmentConfig& alignment,
                               const Vocab& vocab, const PosLexicon& lexicon,
                               std::uint64_t rng_seed, ParamStore& grads) {
  return training_step_impl(batch, params, config, alignment, vocab, lexicon, rng_seed, &grads);
}

}  // namespace ivt
