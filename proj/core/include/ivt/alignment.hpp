#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ivt/encoder.hpp"
#include "ivt/image.hpp"
#include "ivt/text.hpp"

namespace ivt {

struct Batch {
  std::vector<ImageRaster> images;
  std::vector<std::string> texts;
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
};

enum class TextLevel { kSentence = 0, kPhrase = 1, kWord = 2 };

const char* text_level_name(TextLevel level);

struct LossReport {
  double total = 0.0;
  double t2v = 0.0;
  double v2t = 0.0;
  TextLevel level = TextLevel::kSentence;
  double mask_ratio = 0.0;
};

// Matching-distribution loss over a batch, computed in one direction:
// p = row-softmax of fa * fb^T, q = row-normalized label-equality matrix,
// loss = (1/B) * sum_ij p_ij * log(p_ij / (q_ij + eps)).
// With normalize_targets the fb rows are unit-normalized before the products.
double cmpm_one_direction(const Mat& fa, const Mat& fb, const std::vector<int>& labels, double eps,
                          bool normalize_targets = false);

// Same value; also accumulates d(loss)/d(fa) and d(loss)/d(fb).
double cmpm_one_direction_grad(const Mat& fa, const Mat& fb, const std::vector<int>& labels,
                               double eps, bool normalize_targets, Mat& dfa, Mat& dfb);

// The matching distribution p and target distribution q used by the loss,
// exposed so their invariants can be checked directly.
void cmpm_distributions(const Mat& fa, const Mat& fb, const std::vector<int>& labels,
                        bool normalize_targets, Mat& p, Mat& q);

// total = t2v + v2t where t2v treats texts as queries and v2t the reverse.
LossReport cmpm_total(const Mat& image_features, const Mat& text_features,
                      const std::vector<int>& labels, double eps, bool normalize_targets = false);
LossReport cmpm_total_grad(const Mat& image_features, const Mat& text_features,
                           const std::vector<int>& labels, double eps, bool normalize_targets,
                           Mat& d_image, Mat& d_text);

// One step's mask draw. Image entries index patches [0, K); text entries are
// token positions of real (non-CLS/SEP/PAD) tokens.
struct MaskSpec {
  double ratio = 0.0;
  std::vector<int> image_masked;
  std::vector<int> text_masked;
};

// Uniform sampling without replacement; |image_masked| == round(ratio * patch_count),
// |text_masked| == round(ratio * real_token_count). Requires 0 <= ratio < 1.
MaskSpec sample_mask(int patch_count, int real_token_count, double ratio, std::uint64_t rng_seed);

// Replaces masked token positions with the MASK vocabulary id. Refuses to
// touch CLS/SEP/PAD positions.
TokenSequence apply_mask(const TokenSequence& tokens, const MaskSpec& spec);

// Replaces masked patch rows with the given learned mask vector.
PatchSequence apply_mask(const PatchSequence& patches, const MaskSpec& spec, const Vec& mask_vector);

struct AlignmentConfig {
  bool mla_enabled = true;
  bool bmm_enabled = true;
  double bmm_ratio = 0.3;
  double cmpm_epsilon = 1e-8;
  // Unit-normalizing the target side bounds the matching logits by the query
  // norm; with raw dot products the desk-scale model falls into a collapsed
  // zero-gradient state and never recovers. Raw dots stay available (set
  // cmpm.normalize_targets = false).
  bool cmpm_normalize_targets = true;
  // Augmentation paired with each text level, indexed by TextLevel.
  std::array<AugmentKind, 3> level_augmentation = {
      AugmentKind::kIdentity, AugmentKind::kHorizontalFlip, AugmentKind::kRandomCrop};
};

std::array<AugmentKind, 3> parse_level_augmentation_map(const std::string& text);
std::string format_level_augmentation_map(const std::array<AugmentKind, 3>& map);

// One training step's loss: draws the step's text level (uniform when MLA is
// enabled, sentence otherwise), per sample one entry of that level plus the
// level's paired augmentation, applies the step's masks when BMM is enabled,
// encodes both sides, and reports the bidirectional matching loss.
// Deterministic given rng_seed; purpose-separated seed streams keep the MLA
// and BMM draws independent of each other's toggles.
LossReport training_step_loss(const Batch& batch, const ParamStore& params,
                              const EncoderConfig& config, const AlignmentConfig& alignment,
                              const Vocab& vocab, const PosLexicon& lexicon,
                              std::uint64_t rng_seed);

// Same step, also accumulating parameter gradients.
LossReport training_step_grads(const Batch& batch, const ParamStore& params,
                               const EncoderConfig& config, const AlignmentConfig& alignment,
                               const Vocab& vocab, const PosLexicon& lexicon,
                               std::uint64_t rng_seed, ParamStore& grads);

}  // namespace ivt
