#include "amfcls/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;
};

amfcls::RunConfig load_config(const CommonArgs& args) {
  amfcls::RunConfig cfg = amfcls::load_run_config(args.config_path);
  if (args.seed) {
    cfg.train.seed = *args.seed;
    cfg.split_seed = *args.seed;
  }
  return cfg;
}

std::filesystem::path out_dir_or(const CommonArgs& args, const amfcls::RunConfig& cfg) {
  return args.out_dir.empty() ? std::filesystem::path(cfg.output_dir)
                              : std::filesystem::path(args.out_dir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LoRA fine-tuning pipeline for atypical vs normal mitotic figure classification"};
  app.require_subcommand(1);

  CommonArgs split_args;
  std::string split_strategy;
  int split_k = 0;
  CLI::App* split = app.add_subcommand("split", "Write a cross-validation split plan");
  split->add_option("--config", split_args.config_path, "Run config JSON")->required();
  split->add_option("--out", split_args.out_dir, "Output directory (default: config output_dir)");
  split->add_option("--seed", split_args.seed, "Override split seed");
  split->add_option("--strategy", split_strategy, "Override split strategy (random|group)");
  split->add_option("--k", split_k, "Override fold count");

  CommonArgs train_args;
  int train_fold = 0;
  std::string train_plan;
  CLI::App* train = app.add_subcommand("train", "Train one cross-validation fold");
  train->add_option("--config", train_args.config_path, "Run config JSON")->required();
  train->add_option("--fold", train_fold, "Validation fold index")->required();
  train->add_option("--plan", train_plan, "Split plan file")->required();
  train->add_option("--out", train_args.out_dir, "Output directory (default: config output_dir)");
  train->add_option("--seed", train_args.seed, "Override training seed");

  CommonArgs eval_args;
  std::string eval_plan;
  std::vector<std::string> eval_checkpoints;
  std::vector<double> eval_thresholds;
  CLI::App* evaluate =
      app.add_subcommand("evaluate", "Out-of-fold metrics, optionally sweeping thresholds");
  evaluate->add_option("--config", eval_args.config_path, "Run config JSON")->required();
  evaluate->add_option("--plan", eval_plan, "Split plan file")->required();
  evaluate->add_option("--checkpoints", eval_checkpoints, "Fold checkpoints")
      ->required()
      ->expected(-1);
  evaluate->add_option("--threshold", eval_thresholds,
                       "Fixed threshold(s) to report; omit to sweep the policy grid");
  evaluate->add_option("--out", eval_args.out_dir, "Output directory");

  CommonArgs predict_args;
  std::vector<std::string> predict_checkpoints;
  std::string predict_manifest;
  double predict_threshold = 0.6;
  CLI::App* predict = app.add_subcommand("predict", "Fold-ensemble predictions for a manifest");
  predict->add_option("--config", predict_args.config_path, "Run config JSON")->required();
  predict->add_option("--checkpoints", predict_checkpoints, "Ensemble member checkpoints")
      ->required()
      ->expected(-1);
  predict->add_option("--manifest", predict_manifest,
                      "Manifest to predict (default: config manifest)");
  predict->add_option("--threshold", predict_threshold,
                      "Decision threshold for the atypical class (default 0.6)");
  predict->add_option("--out", predict_args.out_dir, "Output directory");

  std::string report_predictions;
  std::string report_manifest;
  double report_threshold = 0.5;
  std::string report_out = ".";
  CLI::App* report =
      app.add_subcommand("report", "Domain-wise metrics of a predictions file vs labels");
  report->add_option("--predictions", report_predictions, "Exported predictions CSV")->required();
  report->add_option("--manifest", report_manifest, "Labeled manifest")->required();
  report->add_option("--threshold", report_threshold, "Decision threshold (default 0.5)");
  report->add_option("--out", report_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (split->parsed()) {
      amfcls::RunConfig cfg = load_config(split_args);
      if (!split_strategy.empty()) cfg.split_strategy = amfcls::parse_split_strategy(split_strategy);
      if (split_k > 0) cfg.split_k = split_k;
      if (split_args.seed) cfg.split_seed = *split_args.seed;
      amfcls::cmd_split(cfg, out_dir_or(split_args, cfg));
    } else if (train->parsed()) {
      amfcls::RunConfig cfg = load_config(train_args);
      amfcls::cmd_train(cfg, train_fold, train_plan, out_dir_or(train_args, cfg));
    } else if (evaluate->parsed()) {
      amfcls::RunConfig cfg = load_config(eval_args);
      std::vector<std::filesystem::path> checkpoints(eval_checkpoints.begin(),
                                                     eval_checkpoints.end());
      amfcls::cmd_evaluate(cfg, checkpoints, eval_plan, eval_thresholds,
                           out_dir_or(eval_args, cfg));
    } else if (predict->parsed()) {
      amfcls::RunConfig cfg = load_config(predict_args);
      std::vector<std::filesystem::path> checkpoints(predict_checkpoints.begin(),
                                                     predict_checkpoints.end());
      std::optional<std::filesystem::path> manifest;
      if (!predict_manifest.empty()) manifest = predict_manifest;
      amfcls::cmd_predict(cfg, checkpoints, manifest, predict_threshold,
                          out_dir_or(predict_args, cfg));
    } else if (report->parsed()) {
      amfcls::cmd_report(report_predictions, report_manifest, report_threshold, report_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
