#pragma once

#include "amfcls/common.hpp"
#include "amfcls/ensemble.hpp"
#include "amfcls/lora.hpp"
#include "amfcls/metrics.hpp"
#include "amfcls/model_zoo.hpp"
#include "amfcls/preprocess.hpp"
#include "amfcls/split.hpp"
#include "amfcls/trainer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace amfcls {

// One experiment = one config file; commands compose through files only
// (plan -> train -> evaluate -> predict), so grids are plain shell loops.
struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  std::string manifest;
  std::string backbone = "tiny-test";
  std::optional<std::string> backbone_registry;
  std::optional<std::string> weights_path;
  std::optional<std::string> feature_mode;  // overrides the backbone default
  LoraConfig lora;
  PreprocessConfig preprocess;
  AugmentationConfig augment;
  TrainConfig train;
  SplitStrategy split_strategy = SplitStrategy::kRandom;
  int split_k = 3;
  uint64_t split_seed = 0;
  bool split_stratify = false;
  ThresholdPolicy policy;
  Aggregation aggregation = Aggregation::kMeanProb;
  std::string output_dir = "runs/out";
};

RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

// Backbone spec with the config's feature-mode override applied.
BackboneSpec resolved_backbone(const RunConfig& cfg);
// Weights path from the config or the AMFCLS_WEIGHTS_DIR environment root.
std::optional<std::filesystem::path> resolved_weights_path(const RunConfig& cfg,
                                                           const BackboneSpec& spec);

struct SplitOutputs {
  std::filesystem::path plan_path;
};
SplitOutputs cmd_split(const RunConfig& cfg, const std::filesystem::path& out_dir);

struct TrainOutputs {
  std::filesystem::path checkpoint_path;
  std::filesystem::path log_path;
  Checkpoint best;
};
TrainOutputs cmd_train(const RunConfig& cfg, int fold, const std::filesystem::path& plan_path,
                       const std::filesystem::path& out_dir);

struct EvaluateOutputs {
  std::filesystem::path json_path;
  std::filesystem::path table_path;
  std::vector<MetricsReport> reports;  // one per evaluated threshold
};
// Out-of-fold evaluation: each checkpoint scores its own held-out fold and
// predictions are pooled. With no explicit thresholds the policy grid is
// swept (pooled and per fold) and the pooled optimum is reported.
EvaluateOutputs cmd_evaluate(const RunConfig& cfg,
                             const std::vector<std::filesystem::path>& checkpoint_paths,
                             const std::filesystem::path& plan_path,
                             const std::vector<double>& thresholds,
                             const std::filesystem::path& out_dir);

struct PredictOutputs {
  std::filesystem::path predictions_path;
  std::vector<PredictionRecord> records;
};
PredictOutputs cmd_predict(const RunConfig& cfg,
                           const std::vector<std::filesystem::path>& checkpoint_paths,
                           const std::optional<std::filesystem::path>& manifest_path, double tau,
                           const std::filesystem::path& out_dir);

struct ReportOutputs {
  std::filesystem::path json_path;
  std::filesystem::path table_path;
  MetricsReport report;
};
// Domain-wise metrics of an exported predictions file against a labeled
// manifest, thresholding the ensemble probability at tau.
ReportOutputs cmd_report(const std::filesystem::path& predictions_path,
                         const std::filesystem::path& manifest_path, double tau,
                         const std::filesystem::path& out_dir);

nlohmann::json report_to_json(const MetricsReport& report);

}  // namespace amfcls
