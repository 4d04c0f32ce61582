#include "amfcls/vit.hpp"

#include <cmath>

namespace amfcls {

namespace {

constexpr float kInvSqrt2 = 0.70710678118654752f;
constexpr float kInvSqrt2Pi = 0.39894228040143268f;

float gelu(float x) { return 0.5f * x * (1.0f + std::erf(x * kInvSqrt2)); }

float gelu_grad(float x) {
  float cdf = 0.5f * (1.0f + std::erf(x * kInvSqrt2));
  float pdf = kInvSqrt2Pi * std::exp(-0.5f * x * x);
  return cdf + x * pdf;
}

void softmax_rows_inplace(MatrixF& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    float max = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - max).exp();
    m.row(r) /= m.row(r).sum();
  }
}

}  // namespace

FeatureMode parse_feature_mode(const std::string& name) {
  if (name == "cls" || name == "CLS") return FeatureMode::kCls;
  if (name == "cls+meanpatch" || name == "CLS_PLUS_MEANPATCH")
    return FeatureMode::kClsPlusMeanPatch;
  throw ConfigError("unknown feature mode '" + name + "' (expected cls or cls+meanpatch)");
}

const char* feature_mode_name(FeatureMode m) {
  return m == FeatureMode::kCls ? "cls" : "cls+meanpatch";
}

void validate(const VitConfig& cfg) {
  if (cfg.input_size <= 0 || cfg.patch_size <= 0 || cfg.embed_dim <= 0 || cfg.depth <= 0 ||
      cfg.num_heads <= 0 || cfg.mlp_ratio <= 0) {
    throw ConfigError("all ViT dimensions must be positive");
  }
  if (cfg.input_size % cfg.patch_size != 0) {
    throw ConfigError("input_size " + std::to_string(cfg.input_size) +
                      " is not a multiple of patch_size " + std::to_string(cfg.patch_size));
  }
  if (cfg.embed_dim % cfg.num_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(cfg.embed_dim) +
                      " is not divisible by num_heads " + std::to_string(cfg.num_heads));
  }
}

LayerNorm::LayerNorm(std::string name, int dim, float eps) : eps_(eps) {
  gamma.name = name + ".weight";
  gamma.resize(1, dim);
  gamma.value.setOnes();
  beta.name = name + ".bias";
  beta.resize(1, dim);
}

MatrixF LayerNorm::forward(const MatrixF& x) {
  const Eigen::Index dim = x.cols();
  xhat_.resize(x.rows(), dim);
  invstd_.resize(x.rows());
  MatrixF y(x.rows(), dim);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    float mean = x.row(r).mean();
    float var = (x.row(r).array() - mean).square().sum() / static_cast<float>(dim);
    float inv = 1.0f / std::sqrt(var + eps_);
    invstd_(r) = inv;
    xhat_.row(r) = (x.row(r).array() - mean) * inv;
    y.row(r) = xhat_.row(r).cwiseProduct(gamma.value.row(0)) + beta.value.row(0);
  }
  return y;
}

MatrixF LayerNorm::backward(const MatrixF& dy, bool need_dx) {
  if (gamma.trainable) {
    gamma.grad.row(0) += dy.cwiseProduct(xhat_).colwise().sum();
    beta.grad.row(0) += dy.colwise().sum();
  }
  if (!need_dx) return MatrixF();
  const float dim = static_cast<float>(dy.cols());
  MatrixF dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    Eigen::RowVectorXf dxhat = dy.row(r).cwiseProduct(gamma.value.row(0));
    float m1 = dxhat.mean();
    float m2 = dxhat.cwiseProduct(xhat_.row(r)).sum() / dim;
    dx.row(r) = ((dxhat.array() - m1) - xhat_.row(r).array() * m2) * invstd_(r);
  }
  return dx;
}

void LayerNorm::collect(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

TransformerBlock::TransformerBlock(const std::string& name, const VitConfig& cfg)
    : norm1(name + ".norm1", cfg.embed_dim),
      q_proj(name + ".attn.q", cfg.embed_dim, cfg.embed_dim),
      k_proj(name + ".attn.k", cfg.embed_dim, cfg.embed_dim),
      v_proj(name + ".attn.v", cfg.embed_dim, cfg.embed_dim),
      out_proj(name + ".attn.proj", cfg.embed_dim, cfg.embed_dim),
      norm2(name + ".norm2", cfg.embed_dim),
      fc1(name + ".mlp.fc1", cfg.embed_dim, cfg.embed_dim * cfg.mlp_ratio),
      fc2(name + ".mlp.fc2", cfg.embed_dim * cfg.mlp_ratio, cfg.embed_dim),
      cfg_(cfg) {}

MatrixF TransformerBlock::forward(const MatrixF& x, int batch, bool train_mode, Rng* rng) {
  const int tokens = cfg_.num_tokens();
  const int heads = cfg_.num_heads;
  const int hd = cfg_.head_dim();
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  MatrixF h1 = norm1.forward(x);
  queries_ = q_proj.forward(h1, train_mode, rng);
  keys_ = k_proj.forward(h1, train_mode, rng);
  values_ = v_proj.forward(h1, train_mode, rng);

  attn_probs_.assign(static_cast<std::size_t>(batch) * heads, MatrixF());
  MatrixF attn(x.rows(), cfg_.embed_dim);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      auto qb = queries_.block(b * tokens, h * hd, tokens, hd);
      auto kb = keys_.block(b * tokens, h * hd, tokens, hd);
      auto vb = values_.block(b * tokens, h * hd, tokens, hd);
      MatrixF probs = (qb * kb.transpose()) * scale;
      softmax_rows_inplace(probs);
      attn.block(b * tokens, h * hd, tokens, hd).noalias() = probs * vb;
      attn_probs_[static_cast<std::size_t>(b) * heads + h] = std::move(probs);
    }
  }

  MatrixF mid = x + out_proj.forward(attn);
  MatrixF h2 = norm2.forward(mid);
  fc1_out_ = fc1.forward(h2);
  MatrixF activated = fc1_out_.unaryExpr([](float v) { return gelu(v); });
  return mid + fc2.forward(activated);
}

MatrixF TransformerBlock::backward(const MatrixF& dy, int batch, bool need_dx) {
  const int tokens = cfg_.num_tokens();
  const int heads = cfg_.num_heads;
  const int hd = cfg_.head_dim();
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  // MLP branch.
  MatrixF d_mid = dy;
  MatrixF d_act = fc2.backward(dy);
  MatrixF d_fc1 = d_act.cwiseProduct(fc1_out_.unaryExpr([](float v) { return gelu_grad(v); }));
  d_mid += norm2.backward(fc1.backward(d_fc1));

  // Attention branch.
  MatrixF d_attn = out_proj.backward(d_mid);
  MatrixF dq(d_attn.rows(), cfg_.embed_dim);
  MatrixF dk(d_attn.rows(), cfg_.embed_dim);
  MatrixF dv(d_attn.rows(), cfg_.embed_dim);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const MatrixF& probs = attn_probs_[static_cast<std::size_t>(b) * heads + h];
      auto d_out = d_attn.block(b * tokens, h * hd, tokens, hd);
      auto qb = queries_.block(b * tokens, h * hd, tokens, hd);
      auto kb = keys_.block(b * tokens, h * hd, tokens, hd);
      auto vb = values_.block(b * tokens, h * hd, tokens, hd);

      dv.block(b * tokens, h * hd, tokens, hd).noalias() = probs.transpose() * d_out;
      MatrixF d_probs = d_out * vb.transpose();
      MatrixF d_scores(tokens, tokens);
      for (int r = 0; r < tokens; ++r) {
        float dot = d_probs.row(r).cwiseProduct(probs.row(r)).sum();
        d_scores.row(r) = (d_probs.row(r).array() - dot) * probs.row(r).array() * scale;
      }
      dq.block(b * tokens, h * hd, tokens, hd).noalias() = d_scores * kb;
      dk.block(b * tokens, h * hd, tokens, hd).noalias() = d_scores.transpose() * qb;
    }
  }

  bool need_h1 = need_dx || norm1.gamma.trainable;
  MatrixF dh1 = q_proj.backward(dq, need_h1);
  if (need_h1) {
    dh1 += k_proj.backward(dk, need_h1);
    dh1 += v_proj.backward(dv, need_h1);
  } else {
    k_proj.backward(dk, false);
    v_proj.backward(dv, false);
  }

  if (!need_dx) {
    if (norm1.gamma.trainable) norm1.backward(dh1, false);
    return MatrixF();
  }
  return d_mid + norm1.backward(dh1, true);
}

void TransformerBlock::collect(std::vector<Parameter*>& out) {
  norm1.collect(out);
  q_proj.collect(out);
  k_proj.collect(out);
  v_proj.collect(out);
  out_proj.collect(out);
  norm2.collect(out);
  fc1.collect(out);
  fc2.collect(out);
}

VisionTransformer::VisionTransformer(const VitConfig& cfg)
    : patch_embed("patch_embed.proj", cfg.patch_dim(), cfg.embed_dim),
      final_norm("norm", cfg.embed_dim),
      cfg_(cfg) {
  validate(cfg);
  cls_token.name = "cls_token";
  cls_token.resize(1, cfg.embed_dim);
  pos_embed.name = "pos_embed";
  pos_embed.resize(cfg.num_tokens(), cfg.embed_dim);
  blocks.reserve(cfg.depth);
  for (int i = 0; i < cfg.depth; ++i) {
    blocks.emplace_back("blocks." + std::to_string(i), cfg);
  }
}

void VisionTransformer::init_weights(Rng& rng) {
  patch_embed.init_gaussian(rng);
  for (Eigen::Index i = 0; i < cls_token.value.size(); ++i) {
    cls_token.value.data()[i] = static_cast<float>(rng.normal() * 0.02);
  }
  for (Eigen::Index i = 0; i < pos_embed.value.size(); ++i) {
    pos_embed.value.data()[i] = static_cast<float>(rng.normal() * 0.02);
  }
  for (TransformerBlock& block : blocks) {
    block.q_proj.base.init_gaussian(rng);
    block.k_proj.base.init_gaussian(rng);
    block.v_proj.base.init_gaussian(rng);
    block.out_proj.init_gaussian(rng);
    block.fc1.init_gaussian(rng);
    block.fc2.init_gaussian(rng);
  }
}

int VisionTransformer::feature_dim(FeatureMode mode) const {
  return mode == FeatureMode::kCls ? cfg_.embed_dim : 2 * cfg_.embed_dim;
}

MatrixF VisionTransformer::patchify(const std::vector<Image>& batch) const {
  const int p = cfg_.patch_size;
  const int grid = cfg_.grid();
  const int pd = cfg_.patch_dim();
  MatrixF patches(static_cast<Eigen::Index>(batch.size()) * cfg_.num_patches(), pd);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Image& img = batch[b];
    if (img.height != cfg_.input_size || img.width != cfg_.input_size || img.channels != 3) {
      throw ValidationError("model expects " + std::to_string(cfg_.input_size) + "x" +
                            std::to_string(cfg_.input_size) + "x3 inputs, got " +
                            std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                            std::to_string(img.channels));
    }
    for (int pr = 0; pr < grid; ++pr) {
      for (int pc = 0; pc < grid; ++pc) {
        Eigen::Index row = static_cast<Eigen::Index>(b) * cfg_.num_patches() + pr * grid + pc;
        // Channel-major within the patch, matching conv-weight flattening.
        for (int ch = 0; ch < 3; ++ch) {
          for (int r = 0; r < p; ++r) {
            for (int c = 0; c < p; ++c) {
              patches(row, (ch * p + r) * p + c) = img.at(pr * p + r, pc * p + c, ch);
            }
          }
        }
      }
    }
  }
  return patches;
}

MatrixF VisionTransformer::forward(const std::vector<Image>& batch, FeatureMode mode,
                                   bool train_mode, Rng* rng) {
  batch_ = static_cast<int>(batch.size());
  const int tokens = cfg_.num_tokens();
  const int np = cfg_.num_patches();

  MatrixF embedded = patch_embed.forward(patchify(batch));
  MatrixF x(static_cast<Eigen::Index>(batch_) * tokens, cfg_.embed_dim);
  for (int b = 0; b < batch_; ++b) {
    x.row(b * tokens) = cls_token.value.row(0) + pos_embed.value.row(0);
    for (int t = 0; t < np; ++t) {
      x.row(b * tokens + 1 + t) = embedded.row(b * np + t) + pos_embed.value.row(1 + t);
    }
  }

  for (TransformerBlock& block : blocks) x = block.forward(x, batch_, train_mode, rng);
  x = final_norm.forward(x);

  MatrixF features(batch_, feature_dim(mode));
  for (int b = 0; b < batch_; ++b) {
    features.block(b, 0, 1, cfg_.embed_dim) = x.row(b * tokens);
    if (mode == FeatureMode::kClsPlusMeanPatch) {
      features.block(b, cfg_.embed_dim, 1, cfg_.embed_dim) =
          x.middleRows(b * tokens + 1, np).colwise().mean();
    }
  }
  return features;
}

void VisionTransformer::backward(const MatrixF& dfeatures, FeatureMode mode) {
  const int tokens = cfg_.num_tokens();
  const int np = cfg_.num_patches();
  const int d = cfg_.embed_dim;

  MatrixF dx = MatrixF::Zero(static_cast<Eigen::Index>(batch_) * tokens, d);
  for (int b = 0; b < batch_; ++b) {
    dx.row(b * tokens) = dfeatures.block(b, 0, 1, d);
    if (mode == FeatureMode::kClsPlusMeanPatch) {
      Eigen::RowVectorXf per_patch = dfeatures.block(b, d, 1, d) / static_cast<float>(np);
      dx.middleRows(b * tokens + 1, np).rowwise() += per_patch;
    }
  }

  dx = final_norm.backward(dx, true);
  bool embeddings_trainable =
      patch_embed.weight.trainable || cls_token.trainable || pos_embed.trainable;
  for (std::size_t i = blocks.size(); i-- > 0;) {
    bool need_dx = i > 0 || embeddings_trainable;
    dx = blocks[i].backward(dx, batch_, need_dx);
  }
  if (!embeddings_trainable) return;

  MatrixF d_embedded(static_cast<Eigen::Index>(batch_) * np, d);
  for (int b = 0; b < batch_; ++b) {
    if (cls_token.trainable) cls_token.grad.row(0) += dx.row(b * tokens);
    if (pos_embed.trainable) {
      for (int t = 0; t < tokens; ++t) pos_embed.grad.row(t) += dx.row(b * tokens + t);
    }
    for (int t = 0; t < np; ++t) d_embedded.row(b * np + t) = dx.row(b * tokens + 1 + t);
  }
  patch_embed.backward(d_embedded, false);
}

void VisionTransformer::collect(std::vector<Parameter*>& out) {
  patch_embed.collect(out);
  out.push_back(&cls_token);
  out.push_back(&pos_embed);
  for (TransformerBlock& block : blocks) block.collect(out);
  final_norm.collect(out);
}

}  // namespace amfcls
