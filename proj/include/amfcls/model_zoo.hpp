#pragma once

#include "amfcls/common.hpp"
#include "amfcls/lora.hpp"
#include "amfcls/preprocess.hpp"
#include "amfcls/vit.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace amfcls {

enum class WeightsSource { kPretrainedExternal, kRandomTiny };

struct BackboneSpec {
  std::string name;
  std::string architecture;  // e.g. "ViT-H/14"
  int patch_size = 16;
  int embed_dim = 64;
  int depth = 4;
  int num_heads = 4;
  int input_size = 224;
  FeatureMode feature_mode = FeatureMode::kCls;
  NormStats norm;
  WeightsSource weights_source = WeightsSource::kRandomTiny;
  std::string gated_source;  // where to obtain external weights

  VitConfig vit_config() const;
};

// Built-in registry: the pathology foundation backbones plus a tiny random
// backbone for CPU tests.
const std::vector<BackboneSpec>& builtin_backbones();
const BackboneSpec& find_backbone(const std::string& name);

// Optional registry file (JSON with schema_version) extending/overriding the
// built-in entries.
std::vector<BackboneSpec> load_backbone_registry(const std::filesystem::path& path);
BackboneSpec resolve_backbone(const std::string& name,
                              const std::optional<std::filesystem::path>& registry_path);

// Loads backbone tensors from a safetensors archive. Accepts either separate
// q/k/v projections or a fused qkv weight (split on load). Extra tensors are
// ignored; missing ones raise an error.
void load_backbone_weights(VisionTransformer& vit, const std::filesystem::path& path);

// Frozen ViT backbone + low-rank adapters on attention projections + a
// single-logit classifier head (the only trainable pieces).
class VitClassifier {
 public:
  VitClassifier(const BackboneSpec& spec, const LoraConfig& lora, uint64_t init_seed,
                const std::optional<std::filesystem::path>& weights_path = std::nullopt);

  const BackboneSpec& spec() const { return spec_; }
  const LoraConfig& lora_config() const { return lora_; }
  uint64_t init_seed() const { return init_seed_; }
  FeatureMode feature_mode() const { return spec_.feature_mode; }

  std::vector<float> forward_logits(const std::vector<Image>& batch, bool train_mode = false,
                                    Rng* rng = nullptr);
  void backward_logits(const std::vector<float>& dlogits);

  // Marks everything except adapters and the head as frozen.
  void freeze_base();

  std::vector<Parameter*> parameters();
  std::vector<Parameter*> trainable_parameters();
  int64_t total_param_count();
  int64_t trainable_param_count();
  uint64_t frozen_checksum();

  void merge_adapters();
  void unmerge_adapters();

  std::map<std::string, MatrixF> trainable_state();
  void load_trainable_state(const std::map<std::string, MatrixF>& state);

  VisionTransformer backbone;
  Linear head;

 private:
  std::vector<BasicLoraLinear<float>*> adapted_layers();

  BackboneSpec spec_;
  LoraConfig lora_;
  uint64_t init_seed_ = 0;
};

VitClassifier build_model(const BackboneSpec& spec, const LoraConfig& lora, uint64_t init_seed,
                          const std::optional<std::filesystem::path>& weights_path = std::nullopt);

// Adapter parameters sum to rank*(d_in+d_out) per adapted projection; the
// head adds feature_dim+1.
int64_t closed_form_trainable_count(const BackboneSpec& spec, const LoraConfig& lora);

}  // namespace amfcls
