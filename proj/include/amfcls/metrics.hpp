#pragma once

#include "amfcls/common.hpp"

#include <optional>
#include <string>
#include <vector>

namespace amfcls {

// AMF (atypical) is the positive class.
struct ConfusionCounts {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t tn = 0;
  int64_t fn = 0;

  int64_t positives() const { return tp + fn; }
  int64_t negatives() const { return tn + fp; }
  int64_t total() const { return tp + fp + tn + fn; }
};

// Predicts positive iff prob >= tau.
ConfusionCounts confusion_at_threshold(const std::vector<double>& probs,
                                       const std::vector<int>& labels, double tau);

double sensitivity(const ConfusionCounts& c);  // atypical recall
double specificity(const ConfusionCounts& c);  // normal recall
double accuracy(const ConfusionCounts& c);
double balanced_accuracy(const ConfusionCounts& c);
double balanced_accuracy(double sens, double spec);

// Rank statistic equal to P(score_pos > score_neg) + 0.5 P(tie).
double roc_auc(const std::vector<double>& probs, const std::vector<int>& labels);

struct ThresholdPolicy {
  double grid_lo = 0.35;
  double grid_hi = 0.75;
  double grid_step = 0.05;
  // objective is balanced accuracy (maximized); ties break to the smallest
  // threshold, which favors sensitivity.
};

void validate(const ThresholdPolicy& policy);
std::vector<double> threshold_grid(const ThresholdPolicy& policy);

struct ThresholdChoice {
  double tau = 0.5;
  double bac = 0.0;
};

ThresholdChoice optimize_threshold(const std::vector<double>& probs,
                                   const std::vector<int>& labels,
                                   const ThresholdPolicy& policy);

struct MetricsRow {
  std::string domain;  // "overall" for the pooled row
  int64_t n = 0;
  int64_t n_pos = 0;
  int64_t n_neg = 0;
  std::optional<double> roc_auc;
  std::optional<double> accuracy;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> balanced_accuracy;
};

struct MetricsReport {
  double threshold = 0.5;
  std::vector<MetricsRow> rows;  // per-domain rows sorted by id, overall last

  const MetricsRow& overall() const;
};

// One row per domain plus a pooled overall row (pooled over samples, not an
// average of domain rows). Metrics undefined for a row are left null.
MetricsReport domainwise_report(const std::vector<double>& probs, const std::vector<int>& labels,
                                const std::vector<std::string>& domains, double tau);

// Aligned human-readable table in the usual column order.
std::string render_table(const MetricsReport& report);

}  // namespace amfcls
