#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ivt/image.hpp"
#include "ivt/params.hpp"
#include "ivt/text.hpp"

namespace ivt {

struct EncoderConfig {
  int depth = 2;
  int width = 64;
  int heads = 4;
  int patch_size = 8;
  int image_height = 32;
  int image_width = 16;
  int vocab_size = 0;
  int max_text_len = 16;
  double mlp_ratio = 4.0;

  int patch_count() const { return image_height * image_width / (patch_size * patch_size); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  int mlp_hidden() const { return static_cast<int>(mlp_ratio * width + 0.5); }
  int head_dim() const { return width / heads; }
  int image_seq_len() const { return patch_count() + 1; }

  void validate() const;

  // Small configuration used throughout the tests and the default run setup.
  static EncoderConfig desk_preset(int vocab_size);
  // Reference-scale configuration (ViT-Base shape), kept for completeness.
  static EncoderConfig paper_preset(int vocab_size);
};

struct GlobalFeature {
  Vec values;
  Modality modality = Modality::kImage;
};

std::shared_ptr<const ParamLayout> make_encoder_layout(const EncoderConfig& config);

// Truncated normal (std 0.02) for tables and projection weights, zero biases
// and layer-norm offsets, unit layer-norm scales.
void init_encoder_params(ParamStore& params, std::uint64_t seed);

// Per-block activations cached by the forward pass for backprop.
struct BlockCache {
  Mat x_in;
  Mat ln1_out;
  Vec ln1_mean, ln1_rstd;
  Mat q, k, v;
  Mat probs;  // [batch*heads*n, n], softmax rows per sample per head
  Mat mix;    // pre out-projection attention result
  Mat x_mid;
  Mat ln2_out;
  Vec ln2_mean, ln2_rstd;
  Mat mlp_pre;
  Mat mlp_act;
};

struct EncodeCache {
  Modality modality = Modality::kImage;
  int batch = 0;
  int seq_len = 0;

  // Text inputs.
  std::vector<std::vector<int>> token_ids;
  std::vector<std::vector<bool>> key_mask;  // true where the key is padding

  // Image inputs (after mask-token substitution).
  Mat patches;  // [batch * K, patch_dim]
  std::vector<std::vector<int>> masked_patches;

  Mat x0;
  std::vector<BlockCache> blocks;
  Mat final_in;
  Mat final_out;  // layer-normalized token states of the last block
  Vec final_mean, final_rstd;

  // Token states for one sample, [seq_len, width]; row 0 is the class token.
  Eigen::Block<Mat> sample_states(int sample) {
    return final_out.block(sample * seq_len, 0, seq_len, final_out.cols());
  }
};

// Batched forward passes. Every sample in a batch shares the modality and
// sequence length; features come back one row per sample (the class token
// after the final layer norm). `masked_patches` lists, per sample, the patch
// indices to replace with the learned mask vector before projection.
Mat encode_image_batch(const std::vector<PatchSequence>& patches,
                       const std::vector<std::vector<int>>& masked_patches,
                       const ParamStore& params, const EncoderConfig& config, EncodeCache* cache);
Mat encode_text_batch(const std::vector<TokenSequence>& tokens, const ParamStore& params,
                      const EncoderConfig& config, EncodeCache* cache);

// Accumulates parameter gradients for d(loss)/d(features), one row per sample.
void encode_backward(const EncodeCache& cache, const Mat& dfeatures, const ParamStore& params,
                     ParamStore& grads);

// Single-sample conveniences.
GlobalFeature encode(const PatchSequence& patches, const ParamStore& params,
                     const EncoderConfig& config, EncodeCache* cache = nullptr);
GlobalFeature encode(const TokenSequence& tokens, const ParamStore& params,
                     const EncoderConfig& config, EncodeCache* cache = nullptr);

// Building blocks, exposed for inspection and unit tests.
Mat embed_image(const PatchSequence& patches, const std::vector<int>& masked,
                const ParamStore& params, const EncoderConfig& config);
Mat embed_text(const TokenSequence& tokens, const ParamStore& params, const EncoderConfig& config);
Mat block_forward(const Mat& states, Modality modality, int block_index, const ParamStore& params,
                  const EncoderConfig& config, const std::vector<bool>& key_mask = {});

namespace detail {
// Row-wise layer norm; writes per-row mean and reciprocal std for backprop.
void layer_norm_forward(const Mat& x, ConstMatMap scale, ConstMatMap offset, Mat& out, Vec& mean,
                        Vec& rstd);
void layer_norm_backward(const Mat& dy, const Mat& x, const Vec& mean, const Vec& rstd,
                         ConstMatMap scale, Mat& dx_accum, MatMap dscale, MatMap doffset);
double gelu(double x);
double gelu_grad(double x);
inline constexpr double kLayerNormEps = 1e-6;
}  // namespace detail

}  // namespace ivt
