#include "amfcls/trainer.hpp"

#include "amfcls/metrics.hpp"
#include "amfcls/safetensors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace amfcls {

void validate(const TrainConfig& cfg) {
  if (cfg.lr <= 0.0) throw ConfigError("lr must be positive");
  if (cfg.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.sched_factor <= 0.0 || cfg.sched_factor >= 1.0)
    throw ConfigError("sched_factor must lie in (0,1)");
  if (cfg.sched_patience < 1) throw ConfigError("sched_patience must be >= 1");
  if (cfg.early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
  if (cfg.sched_patience >= cfg.early_stop_patience) {
    throw ConfigError("sched_patience must be smaller than early_stop_patience");
  }
  if (cfg.max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
}

double stable_sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  double e = std::exp(z);
  return e / (1.0 + e);
}

double bce_with_logits_loss(const std::vector<double>& logits, const std::vector<int>& labels) {
  if (logits.size() != labels.size() || logits.empty()) {
    throw ValidationError("bce_with_logits_loss: logits/labels size mismatch or empty");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double z = logits[i];
    double y = static_cast<double>(labels[i]);
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  return total / static_cast<double>(logits.size());
}

std::vector<float> bce_with_logits_grad(const std::vector<double>& logits,
                                        const std::vector<int>& labels) {
  std::vector<float> grad(logits.size());
  double inv_n = 1.0 / static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    grad[i] = static_cast<float>((stable_sigmoid(logits[i]) - labels[i]) * inv_n);
  }
  return grad;
}

std::vector<double> compute_sample_weights(const Manifest& manifest) {
  ClassCounts counts = manifest.class_counts();
  if (counts.nmf == 0 || counts.amf == 0) {
    throw ValidationError("weighted sampling undefined: class " +
                          std::string(counts.nmf == 0 ? "NMF" : "AMF") +
                          " is absent from the training subset");
  }
  std::vector<double> weights;
  weights.reserve(manifest.size());
  for (const CropRecord& record : manifest.records()) {
    int64_t count = record.label == Label::kAmf ? counts.amf : counts.nmf;
    weights.push_back(1.0 / static_cast<double>(count));
  }
  return weights;
}

WeightedSampler::WeightedSampler(const std::vector<double>& weights) {
  if (weights.empty()) throw ValidationError("WeightedSampler: empty weights");
  cumulative_.reserve(weights.size());
  double total = 0.0;
  for (double w : weights) {
    if (w <= 0.0) throw ValidationError("WeightedSampler: weights must be positive");
    total += w;
    cumulative_.push_back(total);
  }
}

std::size_t WeightedSampler::draw(Rng& rng) const {
  double u = rng.uniform() * cumulative_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  if (it == cumulative_.end()) --it;
  return static_cast<std::size_t>(it - cumulative_.begin());
}

PlateauScheduler::PlateauScheduler(double initial_lr, double factor, int patience)
    : lr_(initial_lr), factor_(factor), patience_(patience) {}

bool PlateauScheduler::step(double metric) {
  if (!has_best_ || metric > best_) {
    best_ = metric;
    has_best_ = true;
    stale_ = 0;
    return false;
  }
  ++stale_;
  if (stale_ >= patience_) {
    lr_ *= factor_;
    stale_ = 0;
    return true;
  }
  return false;
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {}

EarlyStopping::Update EarlyStopping::update(double metric, int epoch) {
  Update result;
  if (!has_best_ || metric > best_) {
    best_ = metric;
    has_best_ = true;
    best_epoch_ = epoch;
    stale_ = 0;
    result.improved = true;
    return result;
  }
  ++stale_;
  result.stop = stale_ >= patience_;
  return result;
}

Adam::Adam(std::vector<Parameter*> params, double weight_decay, double beta1, double beta2,
           double eps)
    : params_(std::move(params)),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    m_.push_back(MatrixF::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(MatrixF::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Adam::step(double lr) {
  ++t_;
  const float b1 = static_cast<float>(beta1_);
  const float b2 = static_cast<float>(beta2_);
  const float bias1 = 1.0f - std::pow(b1, static_cast<float>(t_));
  const float bias2 = 1.0f - std::pow(b2, static_cast<float>(t_));
  const float wd = static_cast<float>(weight_decay_);
  const float step_size = static_cast<float>(lr);
  const float eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    MatrixF g = p->grad;
    if (wd != 0.0f) g += wd * p->value;  // coupled L2, as in plain Adam
    m_[i] = b1 * m_[i] + (1.0f - b1) * g;
    v_[i] = b2 * v_[i] + (1.0f - b2) * g.cwiseProduct(g);
    MatrixF m_hat = m_[i] / bias1;
    MatrixF v_hat = v_[i] / bias2;
    p->value.array() -= step_size * m_hat.array() / (v_hat.array().sqrt() + eps);
  }
}

CropDataset CropDataset::from_manifest(const Manifest& manifest,
                                       const std::filesystem::path& image_root,
                                       const PreprocessConfig& pre, const AugmentationConfig& aug,
                                       const NormStats& norm) {
  std::vector<Image> images;
  images.reserve(manifest.size());
  for (const CropRecord& record : manifest.records()) {
    std::filesystem::path ref(record.image_ref);
    images.push_back(load_image(ref.is_absolute() ? ref : image_root / ref));
  }
  return from_memory(std::move(images), manifest, pre, aug, norm);
}

CropDataset CropDataset::from_memory(std::vector<Image> images, const Manifest& manifest,
                                     const PreprocessConfig& pre, const AugmentationConfig& aug,
                                     const NormStats& norm) {
  if (images.size() != manifest.size()) {
    throw ValidationError("dataset images and manifest records differ in count");
  }
  validate(pre);
  validate(aug);
  CropDataset dataset;
  dataset.manifest_ = manifest;
  dataset.images_ = std::move(images);
  dataset.pre_ = pre;
  dataset.aug_ = aug;
  dataset.norm_ = norm;
  return dataset;
}

Image CropDataset::train_sample(std::size_t i, Rng& rng) const {
  return prepare_train(images_[i], pre_, aug_, norm_, rng);
}

Image CropDataset::eval_sample(std::size_t i) const {
  return prepare_eval(images_[i], pre_, norm_);
}

namespace {

std::string format_double(double v) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

std::string lora_targets_string(const LoraConfig& cfg) {
  std::string out;
  for (ProjTarget t : cfg.targets) {
    if (!out.empty()) out += ",";
    out += proj_target_name(t);
  }
  return out;
}

nlohmann::json train_config_json(const TrainConfig& cfg) {
  return {{"lr", cfg.lr},
          {"weight_decay", cfg.weight_decay},
          {"batch_size", cfg.batch_size},
          {"sched_factor", cfg.sched_factor},
          {"sched_patience", cfg.sched_patience},
          {"early_stop_patience", cfg.early_stop_patience},
          {"max_epochs", cfg.max_epochs},
          {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.lr = j.at("lr").get<double>();
  cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.sched_factor = j.at("sched_factor").get<double>();
  cfg.sched_patience = j.at("sched_patience").get<int>();
  cfg.early_stop_patience = j.at("early_stop_patience").get<int>();
  cfg.max_epochs = j.at("max_epochs").get<int>();
  cfg.seed = j.at("seed").get<uint64_t>();
  return cfg;
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::map<std::string, TensorData> tensors;
  for (const auto& [name, value] : checkpoint.tensors) {
    TensorData t;
    t.shape = {value.rows(), value.cols()};
    t.values.assign(value.data(), value.data() + value.size());
    tensors.emplace(name, std::move(t));
  }

  std::map<std::string, std::string> meta;
  meta["format_version"] = std::to_string(Checkpoint::kSchemaVersion);
  meta["fold"] = std::to_string(checkpoint.fold);
  meta["epoch"] = std::to_string(checkpoint.epoch);
  meta["backbone"] = checkpoint.backbone;
  meta["feature_mode"] = feature_mode_name(checkpoint.feature_mode);
  meta["init_seed"] = std::to_string(checkpoint.init_seed);
  meta["lora_rank"] = std::to_string(checkpoint.lora.rank);
  meta["lora_alpha"] = format_double(checkpoint.lora.alpha);
  meta["lora_dropout"] = format_double(checkpoint.lora.dropout_p);
  meta["lora_targets"] = lora_targets_string(checkpoint.lora);
  meta["split_ref"] = checkpoint.split_ref;
  meta["train_config"] = train_config_json(checkpoint.train).dump();
  meta["val_loss"] = format_double(checkpoint.best_val.loss);
  meta["val_bac"] = format_double(checkpoint.best_val.bac);
  meta["val_sensitivity"] = format_double(checkpoint.best_val.sensitivity);
  meta["val_specificity"] = format_double(checkpoint.best_val.specificity);

  save_safetensors(path, tensors, meta);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  SafetensorsFile file = load_safetensors(path);
  auto meta = [&](const std::string& key) -> const std::string& {
    auto it = file.metadata.find(key);
    if (it == file.metadata.end()) {
      throw ValidationError("checkpoint '" + path.string() + "' is missing metadata '" + key +
                            "'");
    }
    return it->second;
  };

  if (std::stoi(meta("format_version")) != Checkpoint::kSchemaVersion) {
    throw ValidationError("unsupported checkpoint format_version in '" + path.string() + "'");
  }

  Checkpoint checkpoint;
  checkpoint.fold = std::stoi(meta("fold"));
  checkpoint.epoch = std::stoi(meta("epoch"));
  checkpoint.backbone = meta("backbone");
  checkpoint.feature_mode = parse_feature_mode(meta("feature_mode"));
  checkpoint.init_seed = std::stoull(meta("init_seed"));
  checkpoint.lora.rank = std::stoi(meta("lora_rank"));
  checkpoint.lora.alpha = std::stof(meta("lora_alpha"));
  checkpoint.lora.dropout_p = std::stof(meta("lora_dropout"));
  checkpoint.lora.targets.clear();
  {
    std::string targets = meta("lora_targets");
    std::size_t start = 0;
    while (start <= targets.size() && !targets.empty()) {
      std::size_t comma = targets.find(',', start);
      std::string token = targets.substr(start, comma - start);
      if (!token.empty()) checkpoint.lora.targets.insert(parse_proj_target(token));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  checkpoint.split_ref = meta("split_ref");
  checkpoint.train = train_config_from_json(nlohmann::json::parse(meta("train_config")));
  checkpoint.best_val.loss = std::stod(meta("val_loss"));
  checkpoint.best_val.bac = std::stod(meta("val_bac"));
  checkpoint.best_val.sensitivity = std::stod(meta("val_sensitivity"));
  checkpoint.best_val.specificity = std::stod(meta("val_specificity"));

  for (const auto& [name, tensor] : file.tensors) {
    if (tensor.shape.size() != 2) {
      throw ValidationError("checkpoint tensor '" + name + "' is not 2-D");
    }
    MatrixF m(tensor.shape[0], tensor.shape[1]);
    std::copy(tensor.values.begin(), tensor.values.end(), m.data());
    checkpoint.tensors.emplace(name, std::move(m));
  }
  return checkpoint;
}

VitClassifier model_from_checkpoint(const Checkpoint& checkpoint,
                                    const std::optional<std::filesystem::path>& backbone_weights,
                                    const std::optional<std::filesystem::path>& registry_path) {
  BackboneSpec spec = resolve_backbone(checkpoint.backbone, registry_path);
  spec.feature_mode = checkpoint.feature_mode;
  VitClassifier model(spec, checkpoint.lora, checkpoint.init_seed, backbone_weights);
  model.load_trainable_state(checkpoint.tensors);
  return model;
}

std::vector<double> predict_probabilities(VitClassifier& model, const CropDataset& dataset,
                                          int batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<double> probs;
  probs.reserve(dataset.size());
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    std::size_t end = std::min(dataset.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Image> batch;
    batch.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) batch.push_back(dataset.eval_sample(i));
    for (float z : model.forward_logits(batch, /*train_mode=*/false)) {
      probs.push_back(stable_sigmoid(z));
    }
  }
  return probs;
}

namespace {

ValMetrics evaluate_validation(VitClassifier& model, const CropDataset& val_set, int batch_size) {
  std::vector<double> logits;
  logits.reserve(val_set.size());
  for (std::size_t start = 0; start < val_set.size();
       start += static_cast<std::size_t>(batch_size)) {
    std::size_t end = std::min(val_set.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Image> batch;
    batch.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) batch.push_back(val_set.eval_sample(i));
    for (float z : model.forward_logits(batch, /*train_mode=*/false)) logits.push_back(z);
  }
  std::vector<int> labels(val_set.size());
  std::vector<double> probs(val_set.size());
  for (std::size_t i = 0; i < val_set.size(); ++i) {
    labels[i] = val_set.label(i);
    probs[i] = stable_sigmoid(logits[i]);
  }
  ConfusionCounts c = confusion_at_threshold(probs, labels, 0.5);
  if (c.positives() == 0 || c.negatives() == 0) {
    throw ValidationError(
        "validation fold has a single class; balanced accuracy monitoring needs both");
  }
  ValMetrics metrics;
  metrics.loss = bce_with_logits_loss(logits, labels);
  metrics.sensitivity = sensitivity(c);
  metrics.specificity = specificity(c);
  metrics.bac = balanced_accuracy(metrics.sensitivity, metrics.specificity);
  return metrics;
}

}  // namespace

FitResult fit(VitClassifier& model, const CropDataset& train_set, const CropDataset& val_set,
              const TrainConfig& cfg, int fold, const std::string& split_ref) {
  validate(cfg);
  if (train_set.size() == 0 || val_set.size() == 0) {
    throw ValidationError("fit: train and validation sets must be non-empty");
  }

  std::vector<double> weights = compute_sample_weights(train_set.manifest());
  WeightedSampler sampler(weights);

  std::string fold_tag = "fold" + std::to_string(fold);
  Rng sampler_rng(substream_seed(cfg.seed, "sampler/" + fold_tag));
  Rng augment_rng(substream_seed(cfg.seed, "augment/" + fold_tag));
  Rng dropout_rng(substream_seed(cfg.seed, "dropout/" + fold_tag));

  Adam optimizer(model.trainable_parameters(), cfg.weight_decay);
  PlateauScheduler scheduler(cfg.lr, cfg.sched_factor, cfg.sched_patience);
  EarlyStopping stopper(cfg.early_stop_patience);

  FitResult result;
  auto snapshot_best = [&](int epoch, const ValMetrics& metrics) {
    result.best.fold = fold;
    result.best.epoch = epoch;
    result.best.backbone = model.spec().name;
    result.best.feature_mode = model.feature_mode();
    result.best.init_seed = model.init_seed();
    result.best.lora = model.lora_config();
    result.best.train = cfg;
    result.best.split_ref = split_ref;
    result.best.best_val = metrics;
    result.best.tensors = model.trainable_state();
  };

  // Epoch 0: metrics of the freshly built (zero-adapter) model.
  ValMetrics initial = evaluate_validation(model, val_set, cfg.batch_size);
  scheduler.step(initial.bac);
  stopper.update(initial.bac, 0);
  snapshot_best(0, initial);

  const std::size_t epoch_draws = train_set.size();
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double epoch_lr = scheduler.lr();
    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::size_t cursor = 0;
    while (cursor < epoch_draws) {
      std::size_t batch_n =
          std::min(static_cast<std::size_t>(cfg.batch_size), epoch_draws - cursor);
      std::vector<Image> batch;
      std::vector<int> labels;
      batch.reserve(batch_n);
      labels.reserve(batch_n);
      for (std::size_t i = 0; i < batch_n; ++i) {
        std::size_t idx = sampler.draw(sampler_rng);
        batch.push_back(train_set.train_sample(idx, augment_rng));
        labels.push_back(train_set.label(idx));
        result.sampled_crop_ids.insert(train_set.crop_id(idx));
      }
      cursor += batch_n;

      optimizer.zero_grad();
      std::vector<float> logits_f =
          model.forward_logits(batch, /*train_mode=*/true, &dropout_rng);
      std::vector<double> logits(logits_f.begin(), logits_f.end());
      double loss = bce_with_logits_loss(logits, labels);
      if (!std::isfinite(loss)) {
        throw Error("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                    ", sample " + std::to_string(cursor));
      }
      loss_sum += loss * static_cast<double>(batch_n);
      seen += batch_n;
      model.backward_logits(bce_with_logits_grad(logits, labels));
      optimizer.step(epoch_lr);
    }

    ValMetrics metrics = evaluate_validation(model, val_set, cfg.batch_size);
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(seen);
    log.lr = epoch_lr;
    log.val_bac = metrics.bac;
    log.val_sensitivity = metrics.sensitivity;
    log.val_specificity = metrics.specificity;
    result.log.push_back(log);
    result.epochs_run = epoch;

    EarlyStopping::Update update = stopper.update(metrics.bac, epoch);
    if (update.improved) snapshot_best(epoch, metrics);
    scheduler.step(metrics.bac);
    if (update.stop) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

}  // namespace amfcls
