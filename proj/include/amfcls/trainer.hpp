#pragma once

#include "amfcls/common.hpp"
#include "amfcls/lora.hpp"
#include "amfcls/manifest.hpp"
#include "amfcls/model_zoo.hpp"
#include "amfcls/preprocess.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace amfcls {

struct TrainConfig {
  double lr = 5e-4;
  double weight_decay = 1e-2;
  int batch_size = 8;
  double sched_factor = 0.5;
  int sched_patience = 3;
  int early_stop_patience = 10;
  int max_epochs = 100;
  uint64_t seed = 0;
  // The monitored quantity is fixed: validation balanced accuracy, maximized.
};

void validate(const TrainConfig& cfg);

double stable_sigmoid(double z);

// Mean of max(z,0) - z*y + log1p(exp(-|z|)); finite for |z| up to ~1e4.
double bce_with_logits_loss(const std::vector<double>& logits, const std::vector<int>& labels);
// d(loss)/d(logit_i) = (sigmoid(z_i) - y_i) / n.
std::vector<float> bce_with_logits_grad(const std::vector<double>& logits,
                                        const std::vector<int>& labels);

// weight(i) = 1 / count(label(i)); sampling with replacement then draws each
// class with probability ~0.5. Errors if a class is absent.
std::vector<double> compute_sample_weights(const Manifest& manifest);

class WeightedSampler {
 public:
  explicit WeightedSampler(const std::vector<double>& weights);
  std::size_t draw(Rng& rng) const;

 private:
  std::vector<double> cumulative_;
};

// Halves the learning rate after `patience` consecutive non-improving
// epochs; any strict increase of the metric resets the counter.
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, double factor, int patience);
  // Returns true when this update reduced the learning rate.
  bool step(double metric);
  double lr() const { return lr_; }

 private:
  double lr_;
  double factor_;
  int patience_;
  int stale_ = 0;
  double best_ = 0.0;
  bool has_best_ = false;
};

class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);
  struct Update {
    bool improved = false;
    bool stop = false;
  };
  // Stop fires once `patience` consecutive updates brought no improvement.
  Update update(double metric, int epoch);
  double best_metric() const { return best_; }
  int best_epoch() const { return best_epoch_; }
  int epochs_since_improve() const { return stale_; }

 private:
  int patience_;
  double best_ = 0.0;
  bool has_best_ = false;
  int stale_ = 0;
  int best_epoch_ = 0;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, double weight_decay, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);
  void zero_grad();
  void step(double lr);

 private:
  std::vector<Parameter*> params_;
  std::vector<MatrixF> m_;
  std::vector<MatrixF> v_;
  double weight_decay_;
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// Crops with their labels and the per-run preprocessing recipe. Raw images
// stay in memory; strategy/augment/normalize run per access.
class CropDataset {
 public:
  static CropDataset from_manifest(const Manifest& manifest,
                                   const std::filesystem::path& image_root,
                                   const PreprocessConfig& pre, const AugmentationConfig& aug,
                                   const NormStats& norm);
  // Images aligned with manifest records; used by tests and synthetic runs.
  static CropDataset from_memory(std::vector<Image> images, const Manifest& manifest,
                                 const PreprocessConfig& pre, const AugmentationConfig& aug,
                                 const NormStats& norm);

  const Manifest& manifest() const { return manifest_; }
  std::size_t size() const { return images_.size(); }
  int label(std::size_t i) const { return static_cast<int>(manifest_.records()[i].label); }
  const std::string& crop_id(std::size_t i) const { return manifest_.records()[i].crop_id; }
  const std::string& domain(std::size_t i) const { return manifest_.records()[i].domain_id; }

  Image train_sample(std::size_t i, Rng& rng) const;  // strategy -> augment -> normalize
  Image eval_sample(std::size_t i) const;             // strategy -> normalize

 private:
  Manifest manifest_;
  std::vector<Image> images_;
  PreprocessConfig pre_;
  AugmentationConfig aug_;
  NormStats norm_;
};

struct ValMetrics {
  double loss = 0.0;
  double bac = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};

// Adapter + head weights with enough metadata to rebuild the exact model.
struct Checkpoint {
  static constexpr int kSchemaVersion = 1;
  int fold = 0;
  int epoch = 0;
  std::string backbone;
  FeatureMode feature_mode = FeatureMode::kCls;
  uint64_t init_seed = 0;
  LoraConfig lora;
  TrainConfig train;
  std::string split_ref;
  ValMetrics best_val;
  std::map<std::string, MatrixF> tensors;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rebuilds the model a checkpoint was trained with. External backbones need
// their weights file again; base weights are never stored in checkpoints.
VitClassifier model_from_checkpoint(
    const Checkpoint& checkpoint,
    const std::optional<std::filesystem::path>& backbone_weights = std::nullopt,
    const std::optional<std::filesystem::path>& registry_path = std::nullopt);

// Eval-mode probabilities (sigmoid of logits), batched.
std::vector<double> predict_probabilities(VitClassifier& model, const CropDataset& dataset,
                                          int batch_size);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double lr = 0.0;
  double val_bac = 0.0;
  double val_sensitivity = 0.0;
  double val_specificity = 0.0;
};

struct FitResult {
  Checkpoint best;
  std::vector<EpochLog> log;
  bool stopped_early = false;
  int epochs_run = 0;
  std::set<std::string> sampled_crop_ids;  // train crops the optimizer saw
};

// One fold of the training loop: weighted sampling, BCE-with-logits, plateau
// LR schedule and early stopping on validation balanced accuracy. The model
// is left at its final state; the returned checkpoint holds the best epoch.
FitResult fit(VitClassifier& model, const CropDataset& train_set, const CropDataset& val_set,
              const TrainConfig& cfg, int fold = 0, const std::string& split_ref = "");

}  // namespace amfcls
