#include "amfcls/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

namespace amfcls {

namespace {

using nlohmann::json;

std::filesystem::path manifest_root(const std::filesystem::path& manifest_path) {
  std::filesystem::path parent = manifest_path.parent_path();
  return parent.empty() ? std::filesystem::path(".") : parent;
}

void write_json_file(const json& doc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_text_file(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_config_echo(const RunConfig& cfg, const std::string& command, const json& invocation,
                       const std::filesystem::path& out_dir) {
  json doc;
  doc["command"] = command;
  doc["invocation"] = invocation;
  doc["config"] = run_config_to_json(cfg);
  write_json_file(doc, out_dir / "config_echo.json");
}

std::filesystem::path ensure_out_dir(const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  return out_dir;
}

struct FoldPredictions {
  int fold = 0;
  std::vector<double> probs;
  std::vector<int> labels;
  std::vector<std::string> domains;
};

std::optional<double> fold_bac_at(const FoldPredictions& fp, double tau) {
  ConfusionCounts c = confusion_at_threshold(fp.probs, fp.labels, tau);
  if (c.positives() == 0 || c.negatives() == 0) return std::nullopt;
  return balanced_accuracy(c);
}

}  // namespace

RunConfig run_config_from_json(const json& doc) {
  if (doc.value("schema_version", 0) != RunConfig::kSchemaVersion) {
    throw ConfigError("run config has unsupported schema_version");
  }
  RunConfig cfg;
  cfg.manifest = doc.value("manifest", std::string());
  cfg.backbone = doc.value("backbone", std::string("tiny-test"));
  if (doc.contains("backbone_registry") && !doc.at("backbone_registry").is_null()) {
    cfg.backbone_registry = doc.at("backbone_registry").get<std::string>();
  }
  if (doc.contains("weights_path") && !doc.at("weights_path").is_null()) {
    cfg.weights_path = doc.at("weights_path").get<std::string>();
  }
  if (doc.contains("feature_mode") && !doc.at("feature_mode").is_null()) {
    cfg.feature_mode = doc.at("feature_mode").get<std::string>();
  }

  if (doc.contains("lora")) {
    const json& l = doc.at("lora");
    cfg.lora.rank = l.value("rank", 8);
    cfg.lora.alpha = l.value("alpha", 16.0f);
    cfg.lora.dropout_p = l.value("dropout", 0.3f);
    if (l.contains("targets")) {
      cfg.lora.targets.clear();
      for (const auto& t : l.at("targets")) {
        cfg.lora.targets.insert(parse_proj_target(t.get<std::string>()));
      }
    }
    if (l.contains("blocks")) cfg.lora.adapted_blocks = l.at("blocks").get<std::vector<int>>();
  }

  if (doc.contains("preprocess")) {
    const json& p = doc.at("preprocess");
    cfg.preprocess.strategy = parse_strategy(p.value("strategy", std::string("pad")));
    cfg.preprocess.target_size = p.value("target_size", 224);
    if (p.contains("pad_fill")) {
      auto fill = p.at("pad_fill").get<std::vector<float>>();
      if (fill.size() != 3) throw ConfigError("pad_fill must have 3 entries");
      std::copy(fill.begin(), fill.end(), cfg.preprocess.pad_fill.begin());
    }
  }

  if (doc.contains("augment")) {
    const json& a = doc.at("augment");
    cfg.augment.flip_prob = a.value("flip_prob", 0.5f);
    cfg.augment.max_rotation_deg = a.value("max_rotation_deg", 15.0f);
    cfg.augment.jitter_strength = a.value("jitter_strength", 0.2f);
    if (a.contains("crop_scale")) {
      auto range = a.at("crop_scale").get<std::vector<float>>();
      if (range.size() != 2) throw ConfigError("crop_scale must be [lo, hi]");
      cfg.augment.crop_scale_lo = range[0];
      cfg.augment.crop_scale_hi = range[1];
    }
  }

  if (doc.contains("train")) {
    const json& t = doc.at("train");
    cfg.train.lr = t.value("lr", 5e-4);
    cfg.train.weight_decay = t.value("weight_decay", 1e-2);
    cfg.train.batch_size = t.value("batch_size", 8);
    cfg.train.sched_factor = t.value("sched_factor", 0.5);
    cfg.train.sched_patience = t.value("sched_patience", 3);
    cfg.train.early_stop_patience = t.value("early_stop_patience", 10);
    cfg.train.max_epochs = t.value("max_epochs", 100);
    cfg.train.seed = t.value("seed", static_cast<uint64_t>(0));
  }

  if (doc.contains("split")) {
    const json& s = doc.at("split");
    cfg.split_strategy = parse_split_strategy(s.value("strategy", std::string("random")));
    cfg.split_k = s.value("k", 3);
    cfg.split_seed = s.value("seed", static_cast<uint64_t>(0));
    cfg.split_stratify = s.value("stratify", false);
  }

  if (doc.contains("threshold_policy")) {
    const json& p = doc.at("threshold_policy");
    cfg.policy.grid_lo = p.value("grid_lo", 0.35);
    cfg.policy.grid_hi = p.value("grid_hi", 0.75);
    cfg.policy.grid_step = p.value("grid_step", 0.05);
  }

  cfg.aggregation = parse_aggregation(doc.value("aggregation", std::string("mean_prob")));
  cfg.output_dir = doc.value("output_dir", std::string("runs/out"));
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  json lora = {{"rank", cfg.lora.rank},
               {"alpha", cfg.lora.alpha},
               {"dropout", cfg.lora.dropout_p},
               {"blocks", cfg.lora.adapted_blocks}};
  json targets = json::array();
  for (ProjTarget t : cfg.lora.targets) targets.push_back(proj_target_name(t));
  lora["targets"] = targets;

  return {
      {"schema_version", RunConfig::kSchemaVersion},
      {"manifest", cfg.manifest},
      {"backbone", cfg.backbone},
      {"backbone_registry",
       cfg.backbone_registry ? json(*cfg.backbone_registry) : json(nullptr)},
      {"weights_path", cfg.weights_path ? json(*cfg.weights_path) : json(nullptr)},
      {"feature_mode", cfg.feature_mode ? json(*cfg.feature_mode) : json(nullptr)},
      {"lora", lora},
      {"preprocess",
       {{"strategy", strategy_name(cfg.preprocess.strategy)},
        {"target_size", cfg.preprocess.target_size},
        {"pad_fill", cfg.preprocess.pad_fill}}},
      {"augment",
       {{"flip_prob", cfg.augment.flip_prob},
        {"max_rotation_deg", cfg.augment.max_rotation_deg},
        {"jitter_strength", cfg.augment.jitter_strength},
        {"crop_scale", {cfg.augment.crop_scale_lo, cfg.augment.crop_scale_hi}}}},
      {"train",
       {{"lr", cfg.train.lr},
        {"weight_decay", cfg.train.weight_decay},
        {"batch_size", cfg.train.batch_size},
        {"sched_factor", cfg.train.sched_factor},
        {"sched_patience", cfg.train.sched_patience},
        {"early_stop_patience", cfg.train.early_stop_patience},
        {"max_epochs", cfg.train.max_epochs},
        {"seed", cfg.train.seed}}},
      {"split",
       {{"strategy", split_strategy_name(cfg.split_strategy)},
        {"k", cfg.split_k},
        {"seed", cfg.split_seed},
        {"stratify", cfg.split_stratify}}},
      {"threshold_policy",
       {{"grid_lo", cfg.policy.grid_lo},
        {"grid_hi", cfg.policy.grid_hi},
        {"grid_step", cfg.policy.grid_step}}},
      {"aggregation", aggregation_name(cfg.aggregation)},
      {"output_dir", cfg.output_dir},
  };
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) throw IoError("cannot open run config '" + path.string() + "'");
  json doc;
  try {
    file >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("bad run config '" + path.string() + "': " + e.what());
  }
  return run_config_from_json(doc);
}

BackboneSpec resolved_backbone(const RunConfig& cfg) {
  std::optional<std::filesystem::path> registry;
  if (cfg.backbone_registry) registry = *cfg.backbone_registry;
  BackboneSpec spec = resolve_backbone(cfg.backbone, registry);
  if (cfg.feature_mode) spec.feature_mode = parse_feature_mode(*cfg.feature_mode);
  return spec;
}

std::optional<std::filesystem::path> resolved_weights_path(const RunConfig& cfg,
                                                           const BackboneSpec& spec) {
  if (cfg.weights_path) return std::filesystem::path(*cfg.weights_path);
  if (spec.weights_source == WeightsSource::kPretrainedExternal) {
    if (const char* root = std::getenv("AMFCLS_WEIGHTS_DIR")) {
      return std::filesystem::path(root) / (spec.name + ".safetensors");
    }
  }
  return std::nullopt;
}

SplitOutputs cmd_split(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  ensure_out_dir(out_dir);
  Manifest manifest = load_manifest(cfg.manifest);

  SplitPlan plan = cfg.split_strategy == SplitStrategy::kGroup
                       ? group_kfold(manifest, cfg.split_k, cfg.split_seed)
                       : random_kfold(manifest, cfg.split_k, cfg.split_seed, cfg.split_stratify);

  AuditReport audit = verify_no_leakage(plan, manifest);
  if (!audit.ok()) throw Error("generated plan failed its own audit: " + audit.summary());

  SplitOutputs outputs;
  outputs.plan_path = out_dir / "split_plan.txt";
  save_split_plan(plan, outputs.plan_path);
  write_config_echo(cfg, "split", {{"out", out_dir.string()}}, out_dir);

  std::vector<int64_t> image_counts = plan.fold_image_counts();
  std::vector<int64_t> crop_counts(plan.k, 0);
  for (const CropRecord& record : manifest.records()) {
    crop_counts[plan.assignment.at(record.source_image_id)] += 1;
  }
  std::cout << "split: strategy=" << split_strategy_name(plan.strategy) << " k=" << plan.k
            << " seed=" << plan.seed << '\n';
  for (int f = 0; f < plan.k; ++f) {
    std::cout << "  fold " << f << ": " << image_counts[f] << " images, " << crop_counts[f]
              << " crops\n";
  }
  std::cout << "plan written to " << outputs.plan_path.string() << '\n';
  return outputs;
}

TrainOutputs cmd_train(const RunConfig& cfg, int fold, const std::filesystem::path& plan_path,
                       const std::filesystem::path& out_dir) {
  ensure_out_dir(out_dir);
  Manifest manifest = load_manifest(cfg.manifest);
  SplitPlan plan = load_split_plan(plan_path);
  auto [train_manifest, val_manifest] = train_val_split(manifest, plan, fold);

  BackboneSpec spec = resolved_backbone(cfg);
  std::optional<std::filesystem::path> weights = resolved_weights_path(cfg, spec);
  std::filesystem::path root = manifest_root(cfg.manifest);

  CropDataset train_set =
      CropDataset::from_manifest(train_manifest, root, cfg.preprocess, cfg.augment, spec.norm);
  CropDataset val_set =
      CropDataset::from_manifest(val_manifest, root, cfg.preprocess, cfg.augment, spec.norm);

  VitClassifier model(spec, cfg.lora, cfg.train.seed, weights);
  FitResult result = fit(model, train_set, val_set, cfg.train, fold, plan_path.string());

  TrainOutputs outputs;
  outputs.best = result.best;
  outputs.checkpoint_path = out_dir / ("checkpoint_fold" + std::to_string(fold) + ".safetensors");
  save_checkpoint(result.best, outputs.checkpoint_path);

  outputs.log_path = out_dir / ("train_log_fold" + std::to_string(fold) + ".jsonl");
  {
    std::ofstream log(outputs.log_path, std::ios::binary);
    if (!log) throw IoError("cannot write '" + outputs.log_path.string() + "'");
    for (const EpochLog& e : result.log) {
      json line = {{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"lr", e.lr},
                   {"val_bac", e.val_bac},
                   {"val_sensitivity", e.val_sensitivity},
                   {"val_specificity", e.val_specificity}};
      log << line.dump() << '\n';
    }
  }
  write_config_echo(cfg, "train",
                    {{"fold", fold}, {"plan", plan_path.string()}, {"out", out_dir.string()}},
                    out_dir);

  std::cout << "train: fold " << fold << " ran " << result.epochs_run << " epoch(s)"
            << (result.stopped_early ? " (early stop)" : "") << ", best epoch "
            << result.best.epoch << " val_bac " << result.best.best_val.bac << '\n';
  std::cout << "checkpoint written to " << outputs.checkpoint_path.string() << '\n';
  return outputs;
}

EvaluateOutputs cmd_evaluate(const RunConfig& cfg,
                             const std::vector<std::filesystem::path>& checkpoint_paths,
                             const std::filesystem::path& plan_path,
                             const std::vector<double>& thresholds,
                             const std::filesystem::path& out_dir) {
  if (checkpoint_paths.empty()) throw ConfigError("evaluate needs at least one checkpoint");
  ensure_out_dir(out_dir);
  Manifest manifest = load_manifest(cfg.manifest);
  SplitPlan plan = load_split_plan(plan_path);
  std::filesystem::path root = manifest_root(cfg.manifest);

  std::optional<std::filesystem::path> registry;
  if (cfg.backbone_registry) registry = *cfg.backbone_registry;

  std::vector<FoldPredictions> folds;
  std::set<int> seen_folds;
  for (const std::filesystem::path& path : checkpoint_paths) {
    Checkpoint checkpoint = load_checkpoint(path);
    if (!seen_folds.insert(checkpoint.fold).second) {
      throw ConfigError("two checkpoints claim fold " + std::to_string(checkpoint.fold));
    }
    BackboneSpec spec = resolve_backbone(checkpoint.backbone, registry);
    spec.feature_mode = checkpoint.feature_mode;
    VitClassifier model = model_from_checkpoint(checkpoint, resolved_weights_path(cfg, spec),
                                                registry);

    auto [train_manifest, val_manifest] = train_val_split(manifest, plan, checkpoint.fold);
    CropDataset val_set =
        CropDataset::from_manifest(val_manifest, root, cfg.preprocess, cfg.augment, spec.norm);

    FoldPredictions fp;
    fp.fold = checkpoint.fold;
    fp.probs = predict_probabilities(model, val_set, cfg.train.batch_size);
    fp.labels.reserve(val_set.size());
    fp.domains.reserve(val_set.size());
    for (std::size_t i = 0; i < val_set.size(); ++i) {
      fp.labels.push_back(val_set.label(i));
      fp.domains.push_back(val_set.domain(i));
    }
    folds.push_back(std::move(fp));
  }

  std::vector<double> pooled_probs;
  std::vector<int> pooled_labels;
  std::vector<std::string> pooled_domains;
  for (const FoldPredictions& fp : folds) {
    pooled_probs.insert(pooled_probs.end(), fp.probs.begin(), fp.probs.end());
    pooled_labels.insert(pooled_labels.end(), fp.labels.begin(), fp.labels.end());
    pooled_domains.insert(pooled_domains.end(), fp.domains.begin(), fp.domains.end());
  }

  json doc;
  doc["schema_version"] = 1;
  doc["plan"] = plan_path.string();
  doc["n_samples"] = pooled_probs.size();
  json fold_ids = json::array();
  for (const FoldPredictions& fp : folds) fold_ids.push_back(fp.fold);
  doc["folds"] = fold_ids;

  std::vector<std::pair<double, std::string>> to_evaluate;
  if (thresholds.empty()) {
    // Sweep the policy grid on pooled out-of-fold predictions (default mode);
    // the per-fold optima are reported alongside.
    ThresholdChoice pooled_best = optimize_threshold(pooled_probs, pooled_labels, cfg.policy);
    json per_fold = json::array();
    for (const FoldPredictions& fp : folds) {
      ThresholdChoice fold_best = optimize_threshold(fp.probs, fp.labels, cfg.policy);
      per_fold.push_back({{"fold", fp.fold}, {"tau", fold_best.tau}, {"bac", fold_best.bac}});
    }
    doc["policy"] = {{"grid_lo", cfg.policy.grid_lo},
                     {"grid_hi", cfg.policy.grid_hi},
                     {"grid_step", cfg.policy.grid_step}};
    doc["optimized"] = {{"pooled", {{"tau", pooled_best.tau}, {"bac", pooled_best.bac}}},
                        {"per_fold", per_fold}};
    to_evaluate.emplace_back(pooled_best.tau, "optimized");
  } else {
    for (double tau : thresholds) to_evaluate.emplace_back(tau, "fixed");
  }

  EvaluateOutputs outputs;
  std::string tables;
  json evaluations = json::array();
  for (const auto& [tau, source] : to_evaluate) {
    MetricsReport report = domainwise_report(pooled_probs, pooled_labels, pooled_domains, tau);
    json entry;
    entry["threshold"] = tau;
    entry["source"] = source;
    json fold_bacs = json::array();
    double bac_sum = 0.0;
    int bac_count = 0;
    for (const FoldPredictions& fp : folds) {
      std::optional<double> bac = fold_bac_at(fp, tau);
      fold_bacs.push_back({{"fold", fp.fold}, {"val_bac", bac ? json(*bac) : json(nullptr)}});
      if (bac) {
        bac_sum += *bac;
        ++bac_count;
      }
    }
    entry["fold_val_bac"] = fold_bacs;
    entry["mean_fold_val_bac"] = bac_count > 0 ? json(bac_sum / bac_count) : json(nullptr);
    entry["report"] = report_to_json(report);
    evaluations.push_back(entry);

    tables += render_table(report);
    tables += "\n";
    outputs.reports.push_back(std::move(report));
  }
  doc["evaluations"] = evaluations;

  outputs.json_path = out_dir / "metrics_oof.json";
  outputs.table_path = out_dir / "metrics_oof.txt";
  write_json_file(doc, outputs.json_path);
  write_text_file(tables, outputs.table_path);

  json invocation = {{"plan", plan_path.string()}, {"out", out_dir.string()}};
  json ckpts = json::array();
  for (const auto& p : checkpoint_paths) ckpts.push_back(p.string());
  invocation["checkpoints"] = ckpts;
  invocation["thresholds"] = thresholds;
  write_config_echo(cfg, "evaluate", invocation, out_dir);

  std::cout << tables;
  std::cout << "metrics written to " << outputs.json_path.string() << '\n';
  return outputs;
}

PredictOutputs cmd_predict(const RunConfig& cfg,
                           const std::vector<std::filesystem::path>& checkpoint_paths,
                           const std::optional<std::filesystem::path>& manifest_path, double tau,
                           const std::filesystem::path& out_dir) {
  if (checkpoint_paths.empty()) throw ConfigError("predict needs at least one checkpoint");
  ensure_out_dir(out_dir);
  std::filesystem::path manifest_file =
      manifest_path ? *manifest_path : std::filesystem::path(cfg.manifest);
  Manifest manifest = load_manifest(manifest_file);
  std::filesystem::path root = manifest_root(manifest_file);

  std::optional<std::filesystem::path> registry;
  if (cfg.backbone_registry) registry = *cfg.backbone_registry;

  std::vector<std::vector<double>> member_probs;
  for (const std::filesystem::path& path : checkpoint_paths) {
    Checkpoint checkpoint = load_checkpoint(path);
    BackboneSpec spec = resolve_backbone(checkpoint.backbone, registry);
    spec.feature_mode = checkpoint.feature_mode;
    VitClassifier model = model_from_checkpoint(checkpoint, resolved_weights_path(cfg, spec),
                                                registry);
    CropDataset dataset =
        CropDataset::from_manifest(manifest, root, cfg.preprocess, cfg.augment, spec.norm);
    member_probs.push_back(predict_probabilities(model, dataset, cfg.train.batch_size));
  }

  std::vector<std::string> crop_ids;
  crop_ids.reserve(manifest.size());
  for (const CropRecord& record : manifest.records()) crop_ids.push_back(record.crop_id);

  PredictOutputs outputs;
  outputs.records = make_prediction_records(crop_ids, member_probs, tau, cfg.aggregation);
  outputs.predictions_path = out_dir / "predictions.csv";
  export_predictions(outputs.records, outputs.predictions_path);

  json invocation = {{"manifest", manifest_file.string()},
                     {"threshold", tau},
                     {"out", out_dir.string()}};
  json ckpts = json::array();
  for (const auto& p : checkpoint_paths) ckpts.push_back(p.string());
  invocation["checkpoints"] = ckpts;
  write_config_echo(cfg, "predict", invocation, out_dir);

  int64_t positives = 0;
  for (const PredictionRecord& r : outputs.records) positives += r.label;
  std::cout << "predict: " << outputs.records.size() << " crops, " << positives
            << " predicted atypical at threshold " << tau << '\n';
  std::cout << "predictions written to " << outputs.predictions_path.string() << '\n';
  return outputs;
}

ReportOutputs cmd_report(const std::filesystem::path& predictions_path,
                         const std::filesystem::path& manifest_path, double tau,
                         const std::filesystem::path& out_dir) {
  ensure_out_dir(out_dir);
  std::vector<PredictionRecord> records = load_predictions(predictions_path);
  Manifest manifest = load_manifest(manifest_path);

  std::map<std::string, const CropRecord*> by_id;
  for (const CropRecord& record : manifest.records()) by_id[record.crop_id] = &record;

  std::vector<double> probs;
  std::vector<int> labels;
  std::vector<std::string> domains;
  std::size_t label_mismatches = 0;
  for (const PredictionRecord& record : records) {
    auto it = by_id.find(record.crop_id);
    if (it == by_id.end()) {
      throw ValidationError("prediction for crop '" + record.crop_id +
                            "' has no manifest record");
    }
    probs.push_back(record.ensemble_prob);
    labels.push_back(static_cast<int>(it->second->label));
    domains.push_back(it->second->domain_id);
    if ((record.ensemble_prob >= tau ? 1 : 0) != record.label) ++label_mismatches;
  }
  if (label_mismatches > 0) {
    std::cout << "note: " << label_mismatches << " exported label(s) differ from threshold "
              << tau << " decisions; the file was exported with a different threshold\n";
  }

  ReportOutputs outputs;
  outputs.report = domainwise_report(probs, labels, domains, tau);
  outputs.json_path = out_dir / "report.json";
  outputs.table_path = out_dir / "report.txt";

  json doc;
  doc["schema_version"] = 1;
  doc["predictions"] = predictions_path.string();
  doc["manifest"] = manifest_path.string();
  doc["report"] = report_to_json(outputs.report);
  write_json_file(doc, outputs.json_path);

  std::string table = render_table(outputs.report);
  write_text_file(table, outputs.table_path);
  std::cout << table;
  std::cout << "report written to " << outputs.json_path.string() << '\n';
  return outputs;
}

json report_to_json(const MetricsReport& report) {
  json rows = json::array();
  for (const MetricsRow& row : report.rows) {
    auto cell = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    rows.push_back({{"domain", row.domain},
                    {"n", row.n},
                    {"n_pos", row.n_pos},
                    {"n_neg", row.n_neg},
                    {"roc_auc", cell(row.roc_auc)},
                    {"accuracy", cell(row.accuracy)},
                    {"sensitivity", cell(row.sensitivity)},
                    {"specificity", cell(row.specificity)},
                    {"balanced_accuracy", cell(row.balanced_accuracy)}});
  }
  return {{"threshold", report.threshold}, {"rows", rows}};
}

}  // namespace amfcls
