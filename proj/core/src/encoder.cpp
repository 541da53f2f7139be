#include "ivt/encoder.hpp"

#include <cmath>
#include <limits>

namespace ivt {

void EncoderConfig::validate() const {
  if (depth < 1) throw ConfigError("encoder depth must be >= 1");
  if (width <= 0) throw ConfigError("encoder width must be positive");
  if (heads <= 0 || width % heads != 0) throw ConfigError("width must be divisible by heads");
  if (patch_size <= 0) throw ConfigError("patch size must be positive");
  if (image_height <= 0 || image_width <= 0 ||
      image_height % patch_size != 0 || image_width % patch_size != 0) {
    throw ConfigError("image size must be positive and divisible by patch size");
  }
  if (vocab_size < kNumReservedIds) throw ConfigError("vocab size must cover the reserved ids");
  if (max_text_len < 3) throw ConfigError("max_text_len must be >= 3");
  if (mlp_ratio <= 0.0) throw ConfigError("mlp_ratio must be positive");
}

EncoderConfig EncoderConfig::desk_preset(int vocab_size) {
  EncoderConfig cfg;
  cfg.vocab_size = vocab_size;
  return cfg;
}

EncoderConfig EncoderConfig::paper_preset(int vocab_size) {
  EncoderConfig cfg;
  cfg.depth = 12;
  cfg.width = 768;
  cfg.heads = 12;
  cfg.patch_size = 16;
  cfg.image_height = 384;
  cfg.image_width = 128;
  cfg.max_text_len = 64;
  cfg.vocab_size = vocab_size;
  return cfg;
}

std::shared_ptr<const ParamLayout> make_encoder_layout(const EncoderConfig& cfg) {
  cfg.validate();
  auto layout = std::make_shared<ParamLayout>();
  const int d = cfg.width;
  const int pd = cfg.patch_dim();
  const int hidden = cfg.mlp_hidden();

  layout->add("embed.patch_proj.weight", d, pd, ParamGroup::kProjection);
  layout->add("embed.patch_proj.bias", 1, d, ParamGroup::kProjection);
  layout->add("embed.word.table", cfg.vocab_size, d, ParamGroup::kEmbedding);
  layout->add("embed.image_mask.token", 1, pd, ParamGroup::kEmbedding);
  layout->add("embed.cls.image", 1, d, ParamGroup::kEmbedding);
  layout->add("embed.cls.text", 1, d, ParamGroup::kEmbedding);
  layout->add("embed.pos.image", cfg.image_seq_len(), d, ParamGroup::kEmbedding);
  layout->add("embed.pos.text", cfg.max_text_len, d, ParamGroup::kEmbedding);
  layout->add("embed.type.image", 1, d, ParamGroup::kEmbedding);
  layout->add("embed.type.text", 1, d, ParamGroup::kEmbedding);

  for (int b = 0; b < cfg.depth; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    layout->add(p + "ln1.scale", 1, d, ParamGroup::kLayerNorm);
    layout->add(p + "ln1.offset", 1, d, ParamGroup::kLayerNorm);
    for (const char* proj : {"query", "key", "value", "out"}) {
      layout->add(p + "attn." + proj + ".weight", d, d, ParamGroup::kProjection);
      layout->add(p + "attn." + proj + ".bias", 1, d, ParamGroup::kProjection);
    }
    layout->add(p + "ln2.scale", 1, d, ParamGroup::kLayerNorm);
    layout->add(p + "ln2.offset", 1, d, ParamGroup::kLayerNorm);
    for (const char* mlp : {"mlp_image", "mlp_text"}) {
      layout->add(p + mlp + ".fc1.weight", hidden, d, ParamGroup::kProjection);
      layout->add(p + mlp + ".fc1.bias", 1, hidden, ParamGroup::kProjection);
      layout->add(p + mlp + ".fc2.weight", d, hidden, ParamGroup::kProjection);
      layout->add(p + mlp + ".fc2.bias", 1, d, ParamGroup::kProjection);
    }
  }
  layout->add("final_ln.scale", 1, d, ParamGroup::kLayerNorm);
  layout->add("final_ln.offset", 1, d, ParamGroup::kLayerNorm);
  return layout;
}

void init_encoder_params(ParamStore& params, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x11));
  for (const ParamInfo& info : params.layout().entries()) {
    MatMap m = params.mat(params.layout().index_of(info.name));
    const bool is_scale = info.group == ParamGroup::kLayerNorm &&
                          info.name.size() >= 6 && info.name.ends_with(".scale");
    const bool is_zero = info.group == ParamGroup::kLayerNorm ? !is_scale
                                                              : info.name.ends_with(".bias");
    if (is_scale) {
      m.setOnes();
    } else if (is_zero) {
      m.setZero();
    } else {
      for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) m(r, c) = rng.truncated_normal(0.02);
      }
    }
  }
}

namespace detail {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
  const double phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return phi + x * pdf;
}

void layer_norm_forward(const Mat& x, ConstMatMap scale, ConstMatMap offset, Mat& out, Vec& mean,
                        Vec& rstd) {
  const auto rows = x.rows();
  const auto cols = x.cols();
  out.resize(rows, cols);
  mean.resize(rows);
  rstd.resize(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    mean(i) = mu;
    rstd(i) = rs;
    out.row(i) =
        ((((x.row(i).array() - mu) * rs) * scale.row(0).array()) + offset.row(0).array()).matrix();
  }
}

void layer_norm_backward(const Mat& dy, const Mat& x, const Vec& mean, const Vec& rstd,
                         ConstMatMap scale, Mat& dx_accum, MatMap dscale, MatMap doffset) {
  const auto rows = x.rows();
  const auto cols = x.cols();
  using RowArr = Eigen::Array<double, 1, Eigen::Dynamic>;
  RowArr xhat(cols), g(cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    xhat = (x.row(i).array() - mean(i)) * rstd(i);
    g = dy.row(i).array() * scale.row(0).array();
    dscale.row(0).array() += dy.row(i).array() * xhat;
    doffset.row(0).array() += dy.row(i).array();
    const double g_mean = g.mean();
    const double gx_mean = (g * xhat).mean();
    dx_accum.row(i).array() += rstd(i) * (g - g_mean - xhat * gx_mean);
  }
}

}  // namespace detail

namespace {

using detail::layer_norm_backward;
using detail::layer_norm_forward;

struct BlockIdx {
  int ln1_s, ln1_o;
  int wq, bq, wk, bk, wv, bv, wo, bo;
  int ln2_s, ln2_o;
  int img_w1, img_b1, img_w2, img_b2;
  int txt_w1, txt_b1, txt_w2, txt_b2;
};

struct LayoutIdx {
  int patch_w, patch_b, word, img_mask;
  int cls_img, cls_txt, pos_img, pos_txt, type_img, type_txt;
  int final_s, final_o;
  std::vector<BlockIdx> blocks;
};

LayoutIdx resolve_layout(const ParamLayout& layout, int depth) {
  auto idx = [&](const std::string& name) {
    const int i = layout.index_of(name);
    if (i < 0) throw std::logic_error("parameter layout is missing: " + name);
    return i;
  };
  LayoutIdx li;
  li.patch_w = idx("embed.patch_proj.weight");
  li.patch_b = idx("embed.patch_proj.bias");
  li.word = idx("embed.word.table");
  li.img_mask = idx("embed.image_mask.token");
  li.cls_img = idx("embed.cls.image");
  li.cls_txt = idx("embed.cls.text");
  li.pos_img = idx("embed.pos.image");
  li.pos_txt = idx("embed.pos.text");
  li.type_img = idx("embed.type.image");
  li.type_txt = idx("embed.type.text");
  li.final_s = idx("final_ln.scale");
  li.final_o = idx("final_ln.offset");
  li.blocks.resize(static_cast<std::size_t>(depth));
  for (int b = 0; b < depth; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    BlockIdx& bi = li.blocks[static_cast<std::size_t>(b)];
    bi.ln1_s = idx(p + "ln1.scale");
    bi.ln1_o = idx(p + "ln1.offset");
    bi.wq = idx(p + "attn.query.weight");
    bi.bq = idx(p + "attn.query.bias");
    bi.wk = idx(p + "attn.key.weight");
    bi.bk = idx(p + "attn.key.bias");
    bi.wv = idx(p + "attn.value.weight");
    bi.bv = idx(p + "attn.value.bias");
    bi.wo = idx(p + "attn.out.weight");
    bi.bo = idx(p + "attn.out.bias");
    bi.ln2_s = idx(p + "ln2.scale");
    bi.ln2_o = idx(p + "ln2.offset");
    bi.img_w1 = idx(p + "mlp_image.fc1.weight");
    bi.img_b1 = idx(p + "mlp_image.fc1.bias");
    bi.img_w2 = idx(p + "mlp_image.fc2.weight");
    bi.img_b2 = idx(p + "mlp_image.fc2.bias");
    bi.txt_w1 = idx(p + "mlp_text.fc1.weight");
    bi.txt_b1 = idx(p + "mlp_text.fc1.bias");
    bi.txt_w2 = idx(p + "mlp_text.fc2.weight");
    bi.txt_b2 = idx(p + "mlp_text.fc2.bias");
  }
  return li;
}

void attention_forward(BlockCache& bc, const EncoderConfig& cfg, int batch, int n,
                       const std::vector<std::vector<bool>>& key_mask) {
  const int heads = cfg.heads;
  const int hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  bc.probs.resize(static_cast<Eigen::Index>(batch) * heads * n, n);
  bc.mix.resize(static_cast<Eigen::Index>(batch) * n, cfg.width);
  Mat scores(n, n);
  for (int b = 0; b < batch; ++b) {
    const std::vector<bool>* mask =
        key_mask.empty() ? nullptr : &key_mask[static_cast<std::size_t>(b)];
    for (int h = 0; h < heads; ++h) {
      auto q = bc.q.block(b * n, h * hd, n, hd);
      auto k = bc.k.block(b * n, h * hd, n, hd);
      auto v = bc.v.block(b * n, h * hd, n, hd);
      scores.noalias() = q * k.transpose();
      scores *= scale;
      auto probs = bc.probs.block((static_cast<Eigen::Index>(b) * heads + h) * n, 0, n, n);
      // Masked keys get exactly zero probability; exp never sees them, and the
      // shift is clamped clear of the denormal range (both are libm/FPU slow
      // paths that dominate the step time otherwise).
      for (int i = 0; i < n; ++i) {
        double row_max = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) {
          if (mask && (*mask)[static_cast<std::size_t>(j)]) continue;
          row_max = std::max(row_max, scores(i, j));
        }
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
          if (mask && (*mask)[static_cast<std::size_t>(j)]) {
            probs(i, j) = 0.0;
          } else {
            const double e = std::exp(std::max(scores(i, j) - row_max, -700.0));
            probs(i, j) = e;
            sum += e;
          }
        }
        probs.row(i) /= sum;
      }
      bc.mix.block(b * n, h * hd, n, hd).noalias() = probs * v;
    }
  }
}

// Runs one block in place: bc.x_in must be set, the caller reads x_out.
Mat block_forward_impl(BlockCache& bc, Modality modality, const ParamStore& params,
                       const BlockIdx& bi, const EncoderConfig& cfg, int batch, int n,
                       const std::vector<std::vector<bool>>& key_mask) {
  layer_norm_forward(bc.x_in, params.mat(bi.ln1_s), params.mat(bi.ln1_o), bc.ln1_out, bc.ln1_mean,
                     bc.ln1_rstd);
  bc.q.noalias() = bc.ln1_out * params.mat(bi.wq).transpose();
  bc.q.rowwise() += params.mat(bi.bq).row(0);
  bc.k.noalias() = bc.ln1_out * params.mat(bi.wk).transpose();
  bc.k.rowwise() += params.mat(bi.bk).row(0);
  bc.v.noalias() = bc.ln1_out * params.mat(bi.wv).transpose();
  bc.v.rowwise() += params.mat(bi.bv).row(0);
  attention_forward(bc, cfg, batch, n, key_mask);

  bc.x_mid.noalias() = bc.mix * params.mat(bi.wo).transpose();
  bc.x_mid.rowwise() += params.mat(bi.bo).row(0);
  bc.x_mid += bc.x_in;

  layer_norm_forward(bc.x_mid, params.mat(bi.ln2_s), params.mat(bi.ln2_o), bc.ln2_out, bc.ln2_mean,
                     bc.ln2_rstd);
  const bool image = modality == Modality::kImage;
  const int w1 = image ? bi.img_w1 : bi.txt_w1;
  const int b1 = image ? bi.img_b1 : bi.txt_b1;
  const int w2 = image ? bi.img_w2 : bi.txt_w2;
  const int b2 = image ? bi.img_b2 : bi.txt_b2;
  bc.mlp_pre.noalias() = bc.ln2_out * params.mat(w1).transpose();
  bc.mlp_pre.rowwise() += params.mat(b1).row(0);
  bc.mlp_act = bc.mlp_pre.unaryExpr([](double x) { return detail::gelu(x); });

  Mat x_out;
  x_out.noalias() = bc.mlp_act * params.mat(w2).transpose();
  x_out.rowwise() += params.mat(b2).row(0);
  x_out += bc.x_mid;
  return x_out;
}

Mat run_encoder(EncodeCache& cache, const ParamStore& params, const LayoutIdx& li,
                const EncoderConfig& cfg) {
  const int batch = cache.batch;
  const int n = cache.seq_len;
  cache.blocks.resize(static_cast<std::size_t>(cfg.depth));
  Mat x = cache.x0;
  for (int b = 0; b < cfg.depth; ++b) {
    BlockCache& bc = cache.blocks[static_cast<std::size_t>(b)];
    bc.x_in = std::move(x);
    x = block_forward_impl(bc, cache.modality, params, li.blocks[static_cast<std::size_t>(b)], cfg,
                           batch, n, cache.key_mask);
  }
  cache.final_in = std::move(x);
  layer_norm_forward(cache.final_in, params.mat(li.final_s), params.mat(li.final_o),
                     cache.final_out, cache.final_mean, cache.final_rstd);
  Mat features(batch, cfg.width);
  for (int b = 0; b < batch; ++b) features.row(b) = cache.final_out.row(b * n);
  return features;
}

}  // namespace

Mat embed_image(const PatchSequence& patches, const std::vector<int>& masked,
                const ParamStore& params, const EncoderConfig& cfg) {
  if (patches.count() != cfg.patch_count()) {
    throw ConfigError("patch count mismatch: got " + std::to_string(patches.count()) +
                      ", config expects " + std::to_string(cfg.patch_count()));
  }
  if (static_cast<int>(patches.patches.cols()) != cfg.patch_dim()) {
    throw ConfigError("patch dimension mismatch");
  }
  Mat input = patches.patches;
  for (int m : masked) {
    if (m < 0 || m >= patches.count()) throw ConfigError("masked patch index out of range");
    input.row(m) = params.mat("embed.image_mask.token").row(0);
  }
  const int d = cfg.width;
  Mat x0(cfg.image_seq_len(), d);
  x0.row(0) = params.mat("embed.cls.image").row(0);
  x0.bottomRows(patches.count()).noalias() = input * params.mat("embed.patch_proj.weight").transpose();
  x0.bottomRows(patches.count()).rowwise() += params.mat("embed.patch_proj.bias").row(0);
  x0 += params.mat("embed.pos.image");
  x0.rowwise() += params.mat("embed.type.image").row(0);
  return x0;
}

Mat embed_text(const TokenSequence& tokens, const ParamStore& params, const EncoderConfig& cfg) {
  if (tokens.length() != cfg.max_text_len) {
    throw ConfigError("token sequence length mismatch: got " + std::to_string(tokens.length()) +
                      ", config expects " + std::to_string(cfg.max_text_len));
  }
  ConstMatMap table = params.mat(params.layout().index_of("embed.word.table"));
  Mat x0(cfg.max_text_len, cfg.width);
  x0.row(0) = params.mat("embed.cls.text").row(0);
  for (int t = 1; t < tokens.length(); ++t) {
    const int id = tokens.ids[static_cast<std::size_t>(t)];
    if (id < 0 || id >= cfg.vocab_size) {
      throw ConfigError("token id out of range: " + std::to_string(id));
    }
    x0.row(t) = table.row(id);
  }
  x0 += params.mat("embed.pos.text");
  x0.rowwise() += params.mat("embed.type.text").row(0);
  return x0;
}

Mat block_forward(const Mat& states, Modality modality, int block_index, const ParamStore& params,
                  const EncoderConfig& cfg, const std::vector<bool>& key_mask) {
  if (block_index < 0 || block_index >= cfg.depth) throw ConfigError("block index out of range");
  if (states.cols() != cfg.width) throw ConfigError("state width mismatch");
  const LayoutIdx li = resolve_layout(params.layout(), cfg.depth);
  BlockCache bc;
  bc.x_in = states;
  std::vector<std::vector<bool>> mask;
  if (!key_mask.empty()) mask.push_back(key_mask);
  return block_forward_impl(bc, modality, params, li.blocks[static_cast<std::size_t>(block_index)],
                            cfg, 1, static_cast<int>(states.rows()), mask);
}

Mat encode_image_batch(const std::vector<PatchSequence>& patches,
                       const std::vector<std::vector<int>>& masked_patches,
                       const ParamStore& params, const EncoderConfig& cfg, EncodeCache* cache) {
  cfg.validate();
  const int batch = static_cast<int>(patches.size());
  if (batch == 0) throw ConfigError("empty image batch");
  if (!masked_patches.empty() && masked_patches.size() != patches.size()) {
    throw ConfigError("masked_patches size mismatch");
  }
  const int k = cfg.patch_count();
  const int n = cfg.image_seq_len();
  const int pd = cfg.patch_dim();
  const LayoutIdx li = resolve_layout(params.layout(), cfg.depth);

  EncodeCache local;
  EncodeCache& c = cache ? *cache : local;
  c = EncodeCache{};
  c.modality = Modality::kImage;
  c.batch = batch;
  c.seq_len = n;
  c.masked_patches.assign(static_cast<std::size_t>(batch), {});

  c.patches.resize(static_cast<Eigen::Index>(batch) * k, pd);
  for (int b = 0; b < batch; ++b) {
    const PatchSequence& ps = patches[static_cast<std::size_t>(b)];
    if (ps.count() != k || static_cast<int>(ps.patches.cols()) != pd) {
      throw ConfigError("patch count mismatch: got " + std::to_string(ps.count()) +
                        ", config expects " + std::to_string(k));
    }
    c.patches.block(b * k, 0, k, pd) = ps.patches;
    if (!masked_patches.empty()) {
      c.masked_patches[static_cast<std::size_t>(b)] = masked_patches[static_cast<std::size_t>(b)];
      for (int m : c.masked_patches[static_cast<std::size_t>(b)]) {
        if (m < 0 || m >= k) throw ConfigError("masked patch index out of range");
        c.patches.row(b * k + m) = params.mat(li.img_mask).row(0);
      }
    }
  }

  c.x0.resize(static_cast<Eigen::Index>(batch) * n, cfg.width);
  for (int b = 0; b < batch; ++b) {
    c.x0.row(b * n) = params.mat(li.cls_img).row(0);
    c.x0.block(b * n + 1, 0, k, cfg.width).noalias() =
        c.patches.block(b * k, 0, k, pd) * params.mat(li.patch_w).transpose();
    c.x0.block(b * n + 1, 0, k, cfg.width).rowwise() += params.mat(li.patch_b).row(0);
    c.x0.block(b * n, 0, n, cfg.width) += params.mat(li.pos_img);
    c.x0.block(b * n, 0, n, cfg.width).rowwise() += params.mat(li.type_img).row(0);
  }
  return run_encoder(c, params, li, cfg);
}

Mat encode_text_batch(const std::vector<TokenSequence>& tokens, const ParamStore& params,
                      const EncoderConfig& cfg, EncodeCache* cache) {
  cfg.validate();
  const int batch = static_cast<int>(tokens.size());
  if (batch == 0) throw ConfigError("empty text batch");
  const int n = cfg.max_text_len;
  const LayoutIdx li = resolve_layout(params.layout(), cfg.depth);

  EncodeCache local;
  EncodeCache& c = cache ? *cache : local;
  c = EncodeCache{};
  c.modality = Modality::kText;
  c.batch = batch;
  c.seq_len = n;
  c.token_ids.resize(static_cast<std::size_t>(batch));
  c.key_mask.resize(static_cast<std::size_t>(batch));

  ConstMatMap table = params.mat(li.word);
  c.x0.resize(static_cast<Eigen::Index>(batch) * n, cfg.width);
  for (int b = 0; b < batch; ++b) {
    const TokenSequence& seq = tokens[static_cast<std::size_t>(b)];
    if (seq.length() != n) {
      throw ConfigError("token sequence length mismatch: got " + std::to_string(seq.length()) +
                        ", config expects " + std::to_string(n));
    }
    c.token_ids[static_cast<std::size_t>(b)] = seq.ids;
    c.key_mask[static_cast<std::size_t>(b)] = seq.pad_mask();
    c.x0.row(b * n) = params.mat(li.cls_txt).row(0);
    for (int t = 1; t < n; ++t) {
      const int id = seq.ids[static_cast<std::size_t>(t)];
      if (id < 0 || id >= cfg.vocab_size) {
        throw ConfigError("token id out of range: " + std::to_string(id));
      }
      c.x0.row(b * n + t) = table.row(id);
    }
    c.x0.block(b * n, 0, n, cfg.width) += params.mat(li.pos_txt);
    c.x0.block(b * n, 0, n, cfg.width).rowwise() += params.mat(li.type_txt).row(0);
  }
  return run_encoder(c, params, li, cfg);
}

GlobalFeature encode(const PatchSequence& patches, const ParamStore& params,
                     const EncoderConfig& cfg, EncodeCache* cache) {
  const Mat features = encode_image_batch({patches}, {}, params, cfg, cache);
  GlobalFeature f;
  f.values = features.row(0).transpose();
  f.modality = Modality::kImage;
  return f;
}

GlobalFeature encode(const TokenSequence& tokens, const ParamStore& params,
                     const EncoderConfig& cfg, EncodeCache* cache) {
  const Mat features = encode_text_batch({tokens}, params, cfg, cache);
  GlobalFeature f;
  f.values = features.row(0).transpose();
  f.modality = Modality::kText;
  return f;
}

namespace {

// The config a cache was built with is recovered from its dimensions; callers
// always pass the same params/layout they encoded with.
void backward_block(const BlockCache& bc, Modality modality, const ParamStore& params,
                    const BlockIdx& bi, const EncoderConfig& cfg, int batch, int n, Mat& dx,
                    ParamStore& grads) {
  const bool image = modality == Modality::kImage;
  const int w1 = image ? bi.img_w1 : bi.txt_w1;
  const int b1 = image ? bi.img_b1 : bi.txt_b1;
  const int w2 = image ? bi.img_w2 : bi.txt_w2;
  const int b2 = image ? bi.img_b2 : bi.txt_b2;

  // Feed-forward branch. dx enters as d(x_out).
  Mat d_act = dx * params.mat(w2);
  grads.mat(w2).noalias() += dx.transpose() * bc.mlp_act;
  grads.mat(b2).row(0) += dx.colwise().sum();
  Mat d_pre =
      (d_act.array() * bc.mlp_pre.unaryExpr([](double x) { return detail::gelu_grad(x); }).array())
          .matrix();
  Mat d_ln2 = d_pre * params.mat(w1);
  grads.mat(w1).noalias() += d_pre.transpose() * bc.ln2_out;
  grads.mat(b1).row(0) += d_pre.colwise().sum();

  // dx becomes d(x_mid): residual plus the layer-norm path.
  layer_norm_backward(d_ln2, bc.x_mid, bc.ln2_mean, bc.ln2_rstd, params.mat(bi.ln2_s), dx,
                      grads.mat(bi.ln2_s), grads.mat(bi.ln2_o));

  // Attention branch. d(attn_out) == dx.
  Mat d_mix = dx * params.mat(bi.wo);
  grads.mat(bi.wo).noalias() += dx.transpose() * bc.mix;
  grads.mat(bi.bo).row(0) += dx.colwise().sum();

  const int heads = cfg.heads;
  const int hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Mat dq = Mat::Zero(dx.rows(), cfg.width);
  Mat dk = Mat::Zero(dx.rows(), cfg.width);
  Mat dv = Mat::Zero(dx.rows(), cfg.width);
  Mat dp(n, n), ds(n, n);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      auto q = bc.q.block(b * n, h * hd, n, hd);
      auto k = bc.k.block(b * n, h * hd, n, hd);
      auto v = bc.v.block(b * n, h * hd, n, hd);
      auto probs = bc.probs.block((static_cast<Eigen::Index>(b) * heads + h) * n, 0, n, n);
      auto dmix = d_mix.block(b * n, h * hd, n, hd);
      dp.noalias() = dmix * v.transpose();
      dv.block(b * n, h * hd, n, hd).noalias() += probs.transpose() * dmix;
      // Softmax backward; masked keys carry probability 0 and drop out.
      const Vec row_dot = (dp.array() * probs.array()).rowwise().sum().matrix();
      ds = (probs.array() * (dp.colwise() - row_dot).array()).matrix();
      dq.block(b * n, h * hd, n, hd).noalias() += ds * k * scale;
      dk.block(b * n, h * hd, n, hd).noalias() += ds.transpose() * q * scale;
    }
  }

  Mat d_ln1 = dq * params.mat(bi.wq);
  d_ln1.noalias() += dk * params.mat(bi.wk);
  d_ln1.noalias() += dv * params.mat(bi.wv);
  grads.mat(bi.wq).noalias() += dq.transpose() * bc.ln1_out;
  grads.mat(bi.bq).row(0) += dq.colwise().sum();
  grads.mat(bi.wk).noalias() += dk.transpose() * bc.ln1_out;
  grads.mat(bi.bk).row(0) += dk.colwise().sum();
  grads.mat(bi.wv).noalias() += dv.transpose() * bc.ln1_out;
  grads.mat(bi.bv).row(0) += dv.colwise().sum();

  // dx becomes d(x_in).
  layer_norm_backward(d_ln1, bc.x_in, bc.ln1_mean, bc.ln1_rstd, params.mat(bi.ln1_s), dx,
                      grads.mat(bi.ln1_s), grads.mat(bi.ln1_o));
}

}  // namespace

void encode_backward(const EncodeCache& cache, const Mat& dfeatures, const ParamStore& params,
                     ParamStore& grads) {
  const int batch = cache.batch;
  const int n = cache.seq_len;
  const int d = static_cast<int>(cache.x0.cols());
  if (dfeatures.rows() != batch || dfeatures.cols() != d) {
    throw ConfigError("dfeatures shape mismatch");
  }
  const int depth = static_cast<int>(cache.blocks.size());
  EncoderConfig cfg;  // only depth/heads/width are consulted below
  cfg.depth = depth;
  cfg.width = d;
  // Head count is recovered from the probs cache: rows == batch * heads * n.
  cfg.heads = static_cast<int>(cache.blocks.front().probs.rows() / (static_cast<Eigen::Index>(batch) * n));
  const LayoutIdx li = resolve_layout(params.layout(), depth);

  Mat dfinal = Mat::Zero(static_cast<Eigen::Index>(batch) * n, d);
  for (int b = 0; b < batch; ++b) dfinal.row(b * n) = dfeatures.row(b);

  Mat dx = Mat::Zero(static_cast<Eigen::Index>(batch) * n, d);
  layer_norm_backward(dfinal, cache.final_in, cache.final_mean, cache.final_rstd,
                      params.mat(li.final_s), dx, grads.mat(li.final_s), grads.mat(li.final_o));

  for (int blk = depth - 1; blk >= 0; --blk) {
    backward_block(cache.blocks[static_cast<std::size_t>(blk)], cache.modality, params,
                   li.blocks[static_cast<std::size_t>(blk)], cfg, batch, n, dx, grads);
  }

  // Embedding backward: dx is d(x0).
  if (cache.modality == Modality::kImage) {
    const int k = n - 1;
    const int pd = static_cast<int>(cache.patches.cols());
    for (int b = 0; b < batch; ++b) {
      grads.mat(li.cls_img).row(0) += dx.row(b * n);
      auto d_rows = dx.block(b * n + 1, 0, k, d);
      grads.mat(li.patch_w).noalias() += d_rows.transpose() * cache.patches.block(b * k, 0, k, pd);
      grads.mat(li.patch_b).row(0) += d_rows.colwise().sum();
      for (int m : cache.masked_patches[static_cast<std::size_t>(b)]) {
        grads.mat(li.img_mask).row(0).noalias() += dx.row(b * n + 1 + m) * params.mat(li.patch_w);
      }
      grads.mat(li.pos_img) += dx.block(b * n, 0, n, d);
    }
    grads.mat(li.type_img).row(0) += dx.colwise().sum();
  } else {
    MatMap word_grad = grads.mat(li.word);
    for (int b = 0; b < batch; ++b) {
      grads.mat(li.cls_txt).row(0) += dx.row(b * n);
      const auto& ids = cache.token_ids[static_cast<std::size_t>(b)];
      for (int t = 1; t < n; ++t) {
        word_grad.row(ids[static_cast<std::size_t>(t)]) += dx.row(b * n + t);
      }
      grads.mat(li.pos_txt) += dx.block(b * n, 0, n, d);
    }
    grads.mat(li.type_txt).row(0) += dx.colwise().sum();
  }
}

}  // namespace ivt
