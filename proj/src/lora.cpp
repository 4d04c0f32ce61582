#include "amfcls/lora.hpp"

namespace amfcls {

ProjTarget parse_proj_target(const std::string& name) {
  if (name == "query" || name == "q") return ProjTarget::kQuery;
  if (name == "key" || name == "k") return ProjTarget::kKey;
  if (name == "value" || name == "v") return ProjTarget::kValue;
  throw ConfigError("unknown LoRA target '" + name + "' (expected query, key or value)");
}

const char* proj_target_name(ProjTarget t) {
  switch (t) {
    case ProjTarget::kQuery:
      return "query";
    case ProjTarget::kKey:
      return "key";
    case ProjTarget::kValue:
      return "value";
  }
  return "?";
}

void validate(const LoraConfig& cfg) {
  if (cfg.rank < 1) throw ConfigError("LoRA rank must be >= 1");
  if (cfg.alpha <= 0.0f) throw ConfigError("LoRA alpha must be positive");
  if (cfg.dropout_p < 0.0f || cfg.dropout_p >= 1.0f)
    throw ConfigError("LoRA dropout must lie in [0,1)");
  if (cfg.targets.empty()) throw ConfigError("LoRA targets must be non-empty");
}

}  // namespace amfcls
