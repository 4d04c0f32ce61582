#include "amfcls/model_zoo.hpp"

#include "amfcls/safetensors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <set>

namespace amfcls {

namespace {

NormStats imagenet_norm() {
  return NormStats{{0.485f, 0.456f, 0.406f}, {0.229f, 0.224f, 0.225f}};
}

void copy_tensor(const TensorData& src, MatrixF& dst, const std::string& name) {
  if (src.element_count() != static_cast<int64_t>(dst.size())) {
    throw ValidationError("weights tensor '" + name + "' has " +
                          std::to_string(src.element_count()) + " values, expected " +
                          std::to_string(dst.size()));
  }
  std::copy(src.values.begin(), src.values.end(), dst.data());
}

const TensorData* find_tensor(const SafetensorsFile& file, const std::string& name) {
  auto it = file.tensors.find(name);
  return it == file.tensors.end() ? nullptr : &it->second;
}

const TensorData& require_tensor(const SafetensorsFile& file, const std::string& name) {
  const TensorData* t = find_tensor(file, name);
  if (t == nullptr) throw ValidationError("weights file is missing tensor '" + name + "'");
  return *t;
}

}  // namespace

VitConfig BackboneSpec::vit_config() const {
  VitConfig cfg;
  cfg.input_size = input_size;
  cfg.patch_size = patch_size;
  cfg.embed_dim = embed_dim;
  cfg.depth = depth;
  cfg.num_heads = num_heads;
  return cfg;
}

const std::vector<BackboneSpec>& builtin_backbones() {
  static const std::vector<BackboneSpec> registry = [] {
    std::vector<BackboneSpec> specs;

    BackboneSpec virchow;
    virchow.name = "virchow";
    virchow.architecture = "ViT-H/14";
    virchow.patch_size = 14;
    virchow.embed_dim = 1280;
    virchow.depth = 32;
    virchow.num_heads = 16;
    virchow.norm = imagenet_norm();
    virchow.weights_source = WeightsSource::kPretrainedExternal;
    virchow.gated_source = "paige-ai/Virchow (gated Hugging Face repository)";
    specs.push_back(virchow);

    BackboneSpec virchow2 = virchow;
    virchow2.name = "virchow2";
    virchow2.gated_source = "paige-ai/Virchow2 (gated Hugging Face repository)";
    specs.push_back(virchow2);

    BackboneSpec uni;
    uni.name = "uni";
    uni.architecture = "ViT-L/16";
    uni.patch_size = 16;
    uni.embed_dim = 1024;
    uni.depth = 24;
    uni.num_heads = 16;
    uni.norm = imagenet_norm();
    uni.weights_source = WeightsSource::kPretrainedExternal;
    uni.gated_source = "MahmoodLab/UNI (gated Hugging Face repository)";
    specs.push_back(uni);

    BackboneSpec tiny;
    tiny.name = "tiny-test";
    tiny.architecture = "ViT-Tiny/16";
    tiny.patch_size = 16;
    tiny.embed_dim = 64;
    tiny.depth = 4;
    tiny.num_heads = 4;
    tiny.weights_source = WeightsSource::kRandomTiny;
    specs.push_back(tiny);

    return specs;
  }();
  return registry;
}

const BackboneSpec& find_backbone(const std::string& name) {
  for (const BackboneSpec& spec : builtin_backbones()) {
    if (spec.name == name) return spec;
  }
  throw ConfigError("unknown backbone '" + name + "'");
}

std::vector<BackboneSpec> load_backbone_registry(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) throw IoError("cannot open backbone registry '" + path.string() + "'");
  nlohmann::json doc;
  try {
    file >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad backbone registry '" + path.string() + "': " + e.what());
  }
  if (doc.value("schema_version", 0) != 1) {
    throw ValidationError("backbone registry '" + path.string() +
                          "' has unsupported schema_version");
  }
  std::vector<BackboneSpec> specs;
  for (const auto& entry : doc.at("backbones")) {
    BackboneSpec spec;
    spec.name = entry.at("name").get<std::string>();
    spec.architecture = entry.value("architecture", std::string("ViT"));
    spec.patch_size = entry.value("patch_size", 16);
    spec.embed_dim = entry.at("embed_dim").get<int>();
    spec.depth = entry.at("depth").get<int>();
    spec.num_heads = entry.value("num_heads", 16);
    spec.input_size = entry.value("input_size", 224);
    spec.feature_mode = parse_feature_mode(entry.value("feature_mode", std::string("cls")));
    if (entry.contains("norm_mean")) {
      auto mean = entry.at("norm_mean").get<std::vector<float>>();
      auto std = entry.at("norm_std").get<std::vector<float>>();
      if (mean.size() != 3 || std.size() != 3)
        throw ValidationError("norm_mean/norm_std must have 3 entries");
      std::copy(mean.begin(), mean.end(), spec.norm.mean.begin());
      std::copy(std.begin(), std.end(), spec.norm.std.begin());
    }
    std::string source = entry.value("weights_source", std::string("pretrained_external"));
    if (source == "pretrained_external") {
      spec.weights_source = WeightsSource::kPretrainedExternal;
    } else if (source == "random_tiny") {
      spec.weights_source = WeightsSource::kRandomTiny;
    } else {
      throw ValidationError("unknown weights_source '" + source + "'");
    }
    spec.gated_source = entry.value("gated_source", std::string());
    specs.push_back(spec);
  }
  return specs;
}

BackboneSpec resolve_backbone(const std::string& name,
                              const std::optional<std::filesystem::path>& registry_path) {
  if (registry_path) {
    for (const BackboneSpec& spec : load_backbone_registry(*registry_path)) {
      if (spec.name == name) return spec;
    }
  }
  return find_backbone(name);
}

void load_backbone_weights(VisionTransformer& vit, const std::filesystem::path& path) {
  SafetensorsFile file = load_safetensors(path);
  const VitConfig& cfg = vit.config();

  copy_tensor(require_tensor(file, "cls_token"), vit.cls_token.value, "cls_token");
  copy_tensor(require_tensor(file, "pos_embed"), vit.pos_embed.value, "pos_embed");
  copy_tensor(require_tensor(file, "patch_embed.proj.weight"), vit.patch_embed.weight.value,
              "patch_embed.proj.weight");
  copy_tensor(require_tensor(file, "patch_embed.proj.bias"), vit.patch_embed.bias.value,
              "patch_embed.proj.bias");

  for (int i = 0; i < cfg.depth; ++i) {
    std::string prefix = "blocks." + std::to_string(i) + ".";
    TransformerBlock& block = vit.blocks[static_cast<std::size_t>(i)];
    copy_tensor(require_tensor(file, prefix + "norm1.weight"), block.norm1.gamma.value,
                prefix + "norm1.weight");
    copy_tensor(require_tensor(file, prefix + "norm1.bias"), block.norm1.beta.value,
                prefix + "norm1.bias");

    const TensorData* fused_w = find_tensor(file, prefix + "attn.qkv.weight");
    if (fused_w != nullptr) {
      // Fused checkpoints are split into separate projections on load.
      const int d = cfg.embed_dim;
      if (fused_w->element_count() != 3LL * d * d) {
        throw ValidationError("fused qkv weight in block " + std::to_string(i) +
                              " has unexpected size");
      }
      const TensorData& fused_b = require_tensor(file, prefix + "attn.qkv.bias");
      if (fused_b.element_count() != 3LL * d) {
        throw ValidationError("fused qkv bias in block " + std::to_string(i) +
                              " has unexpected size");
      }
      BasicLoraLinear<float>* projections[3] = {&block.q_proj, &block.k_proj, &block.v_proj};
      for (int part = 0; part < 3; ++part) {
        std::copy(fused_w->values.begin() + static_cast<std::ptrdiff_t>(part) * d * d,
                  fused_w->values.begin() + static_cast<std::ptrdiff_t>(part + 1) * d * d,
                  projections[part]->base.weight.value.data());
        std::copy(fused_b.values.begin() + static_cast<std::ptrdiff_t>(part) * d,
                  fused_b.values.begin() + static_cast<std::ptrdiff_t>(part + 1) * d,
                  projections[part]->base.bias.value.data());
      }
    } else {
      const char* parts[3] = {"q", "k", "v"};
      BasicLoraLinear<float>* projections[3] = {&block.q_proj, &block.k_proj, &block.v_proj};
      for (int part = 0; part < 3; ++part) {
        std::string wname = prefix + "attn." + parts[part] + ".weight";
        std::string bname = prefix + "attn." + parts[part] + ".bias";
        copy_tensor(require_tensor(file, wname), projections[part]->base.weight.value, wname);
        copy_tensor(require_tensor(file, bname), projections[part]->base.bias.value, bname);
      }
    }

    copy_tensor(require_tensor(file, prefix + "attn.proj.weight"), block.out_proj.weight.value,
                prefix + "attn.proj.weight");
    copy_tensor(require_tensor(file, prefix + "attn.proj.bias"), block.out_proj.bias.value,
                prefix + "attn.proj.bias");
    copy_tensor(require_tensor(file, prefix + "norm2.weight"), block.norm2.gamma.value,
                prefix + "norm2.weight");
    copy_tensor(require_tensor(file, prefix + "norm2.bias"), block.norm2.beta.value,
                prefix + "norm2.bias");
    copy_tensor(require_tensor(file, prefix + "mlp.fc1.weight"), block.fc1.weight.value,
                prefix + "mlp.fc1.weight");
    copy_tensor(require_tensor(file, prefix + "mlp.fc1.bias"), block.fc1.bias.value,
                prefix + "mlp.fc1.bias");
    copy_tensor(require_tensor(file, prefix + "mlp.fc2.weight"), block.fc2.weight.value,
                prefix + "mlp.fc2.weight");
    copy_tensor(require_tensor(file, prefix + "mlp.fc2.bias"), block.fc2.bias.value,
                prefix + "mlp.fc2.bias");
  }

  copy_tensor(require_tensor(file, "norm.weight"), vit.final_norm.gamma.value, "norm.weight");
  copy_tensor(require_tensor(file, "norm.bias"), vit.final_norm.beta.value, "norm.bias");
}

VitClassifier::VitClassifier(const BackboneSpec& spec, const LoraConfig& lora, uint64_t init_seed,
                             const std::optional<std::filesystem::path>& weights_path)
    : backbone(spec.vit_config()),
      head("head", 0, 0),
      spec_(spec),
      lora_(lora),
      init_seed_(init_seed) {
  validate(lora);

  if (spec.weights_source == WeightsSource::kPretrainedExternal) {
    if (!weights_path) {
      throw ConfigError("backbone '" + spec.name + "' needs externally downloaded weights from " +
                        (spec.gated_source.empty() ? std::string("its gated source")
                                                   : spec.gated_source) +
                        "; pass a weights path or set " + std::string("AMFCLS_WEIGHTS_DIR"));
    }
    load_backbone_weights(backbone, *weights_path);
  } else {
    Rng rng(substream_seed(init_seed, "backbone"));
    backbone.init_weights(rng);
  }

  std::set<int> adapted(lora_.adapted_blocks.begin(), lora_.adapted_blocks.end());
  Rng adapter_rng(substream_seed(init_seed, "adapters"));
  for (std::size_t i = 0; i < backbone.blocks.size(); ++i) {
    if (!adapted.empty() && !adapted.count(static_cast<int>(i))) continue;
    TransformerBlock& block = backbone.blocks[i];
    if (lora_.targets.count(ProjTarget::kQuery)) block.q_proj.attach_adapter(lora_, adapter_rng);
    if (lora_.targets.count(ProjTarget::kKey)) block.k_proj.attach_adapter(lora_, adapter_rng);
    if (lora_.targets.count(ProjTarget::kValue)) block.v_proj.attach_adapter(lora_, adapter_rng);
  }

  head = Linear("head", backbone.feature_dim(spec_.feature_mode), 1);
  Rng head_rng(substream_seed(init_seed, "head"));
  head.init_gaussian(head_rng);

  freeze_base();
}

std::vector<BasicLoraLinear<float>*> VitClassifier::adapted_layers() {
  std::vector<BasicLoraLinear<float>*> layers;
  for (TransformerBlock& block : backbone.blocks) {
    for (BasicLoraLinear<float>* proj : {&block.q_proj, &block.k_proj, &block.v_proj}) {
      if (proj->has_adapter()) layers.push_back(proj);
    }
  }
  return layers;
}

std::vector<float> VitClassifier::forward_logits(const std::vector<Image>& batch, bool train_mode,
                                                 Rng* rng) {
  if (batch.empty()) throw ValidationError("forward_logits: empty batch");
  MatrixF features = backbone.forward(batch, spec_.feature_mode, train_mode, rng);
  MatrixF logits = head.forward(features);
  std::vector<float> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    float z = logits(static_cast<Eigen::Index>(i), 0);
    if (!std::isfinite(z)) throw Error("non-finite logit produced by the model");
    out[i] = z;
  }
  return out;
}

void VitClassifier::backward_logits(const std::vector<float>& dlogits) {
  MatrixF dy(static_cast<Eigen::Index>(dlogits.size()), 1);
  for (std::size_t i = 0; i < dlogits.size(); ++i) dy(static_cast<Eigen::Index>(i), 0) = dlogits[i];
  MatrixF dfeatures = head.backward(dy);
  backbone.backward(dfeatures, spec_.feature_mode);
}

void VitClassifier::freeze_base() {
  std::vector<Parameter*> params;
  backbone.collect(params);
  for (Parameter* p : params) p->trainable = false;
  for (BasicLoraLinear<float>* layer : adapted_layers()) {
    layer->lora_a.trainable = true;
    layer->lora_b.trainable = true;
  }
  head.weight.trainable = true;
  head.bias.trainable = true;
}

std::vector<Parameter*> VitClassifier::parameters() {
  std::vector<Parameter*> params;
  backbone.collect(params);
  head.collect(params);
  return params;
}

std::vector<Parameter*> VitClassifier::trainable_parameters() {
  std::vector<Parameter*> trainable;
  for (Parameter* p : parameters()) {
    if (p->trainable) trainable.push_back(p);
  }
  return trainable;
}

int64_t VitClassifier::total_param_count() {
  int64_t count = 0;
  for (Parameter* p : parameters()) count += p->count();
  return count;
}

int64_t VitClassifier::trainable_param_count() {
  int64_t count = 0;
  for (Parameter* p : trainable_parameters()) count += p->count();
  return count;
}

uint64_t VitClassifier::frozen_checksum() {
  uint64_t hash = 0xcbf29ce484222325ULL;
  for (Parameter* p : parameters()) {
    if (p->trainable) continue;
    hash = fnv1a64_bytes(p->value.data(), sizeof(float) * static_cast<std::size_t>(p->value.size()),
                         hash);
  }
  return hash;
}

void VitClassifier::merge_adapters() {
  for (BasicLoraLinear<float>* layer : adapted_layers()) layer->merge();
}

void VitClassifier::unmerge_adapters() {
  for (BasicLoraLinear<float>* layer : adapted_layers()) layer->unmerge();
}

std::map<std::string, MatrixF> VitClassifier::trainable_state() {
  std::map<std::string, MatrixF> state;
  for (Parameter* p : trainable_parameters()) state[p->name] = p->value;
  return state;
}

void VitClassifier::load_trainable_state(const std::map<std::string, MatrixF>& state) {
  std::vector<Parameter*> trainable = trainable_parameters();
  if (state.size() != trainable.size()) {
    throw ValidationError("trainable state has " + std::to_string(state.size()) +
                          " tensors, model expects " + std::to_string(trainable.size()));
  }
  for (Parameter* p : trainable) {
    auto it = state.find(p->name);
    if (it == state.end()) throw ValidationError("trainable state is missing '" + p->name + "'");
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw ValidationError("trainable state tensor '" + p->name + "' has wrong shape");
    }
    p->value = it->second;
  }
}

VitClassifier build_model(const BackboneSpec& spec, const LoraConfig& lora, uint64_t init_seed,
                          const std::optional<std::filesystem::path>& weights_path) {
  return VitClassifier(spec, lora, init_seed, weights_path);
}

int64_t closed_form_trainable_count(const BackboneSpec& spec, const LoraConfig& lora) {
  int64_t adapted_blocks;
  if (lora.adapted_blocks.empty()) {
    adapted_blocks = spec.depth;
  } else {
    std::set<int> unique(lora.adapted_blocks.begin(), lora.adapted_blocks.end());
    adapted_blocks = static_cast<int64_t>(unique.size());
  }
  int64_t per_layer = static_cast<int64_t>(lora.rank) * (spec.embed_dim + spec.embed_dim);
  int64_t adapters = adapted_blocks * static_cast<int64_t>(lora.targets.size()) * per_layer;
  int64_t feature_dim =
      spec.feature_mode == FeatureMode::kCls ? spec.embed_dim : 2 * spec.embed_dim;
  int64_t head = feature_dim + 1;
  return adapters + head;
}

}  // namespace amfcls
