#pragma once

#include "amfcls/common.hpp"
#include "amfcls/image.hpp"
#include "amfcls/lora.hpp"

#include <string>
#include <vector>

namespace amfcls {

// Which token(s) feed the classifier head.
enum class FeatureMode { kCls, kClsPlusMeanPatch };

FeatureMode parse_feature_mode(const std::string& name);  // "cls" | "cls+meanpatch"
const char* feature_mode_name(FeatureMode m);

struct VitConfig {
  int input_size = 224;
  int patch_size = 16;
  int embed_dim = 64;
  int depth = 4;
  int num_heads = 4;
  int mlp_ratio = 4;

  int grid() const { return input_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int num_tokens() const { return num_patches() + 1; }  // + CLS
  int patch_dim() const { return patch_size * patch_size * 3; }
  int head_dim() const { return embed_dim / num_heads; }
};

void validate(const VitConfig& cfg);

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(std::string name, int dim, float eps = 1e-6f);

  MatrixF forward(const MatrixF& x);
  // Accumulates gamma/beta gradients when trainable; returns dx when asked.
  MatrixF backward(const MatrixF& dy, bool need_dx = true);
  void collect(std::vector<Parameter*>& out);

  Parameter gamma;  // 1 x dim
  Parameter beta;   // 1 x dim

 private:
  float eps_ = 1e-6f;
  MatrixF xhat_;
  Eigen::VectorXf invstd_;
};

// Pre-norm transformer encoder block with separate q/k/v projections so
// low-rank adapters attach per projection.
class TransformerBlock {
 public:
  TransformerBlock(const std::string& name, const VitConfig& cfg);

  // x is (batch * tokens) x embed_dim with each sample's tokens contiguous.
  MatrixF forward(const MatrixF& x, int batch, bool train_mode, Rng* rng);
  MatrixF backward(const MatrixF& dy, int batch, bool need_dx);
  void collect(std::vector<Parameter*>& out);

  LayerNorm norm1;
  LoraLinear q_proj;
  LoraLinear k_proj;
  LoraLinear v_proj;
  Linear out_proj;
  LayerNorm norm2;
  Linear fc1;
  Linear fc2;

 private:
  VitConfig cfg_;
  MatrixF queries_, keys_, values_;
  std::vector<MatrixF> attn_probs_;  // per (sample, head), tokens x tokens
  MatrixF fc1_out_;
};

class VisionTransformer {
 public:
  explicit VisionTransformer(const VitConfig& cfg);

  void init_weights(Rng& rng);
  int feature_dim(FeatureMode mode) const;

  // Batch of normalized input_size x input_size x 3 images -> features
  // (batch x feature_dim).
  MatrixF forward(const std::vector<Image>& batch, FeatureMode mode, bool train_mode, Rng* rng);
  void backward(const MatrixF& dfeatures, FeatureMode mode);

  void collect(std::vector<Parameter*>& out);
  const VitConfig& config() const { return cfg_; }

  Linear patch_embed;
  Parameter cls_token;  // 1 x embed_dim
  Parameter pos_embed;  // tokens x embed_dim
  std::vector<TransformerBlock> blocks;
  LayerNorm final_norm;

 private:
  MatrixF patchify(const std::vector<Image>& batch) const;

  VitConfig cfg_;
  int batch_ = 0;
};

}  // namespace amfcls
