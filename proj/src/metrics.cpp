#include "amfcls/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

namespace amfcls {

namespace {

void check_aligned(std::size_t probs, std::size_t labels) {
  if (probs != labels) {
    throw ValidationError("probs and labels have different lengths (" + std::to_string(probs) +
                          " vs " + std::to_string(labels) + ")");
  }
  if (probs == 0) throw ValidationError("empty input");
}

void check_binary_labels(const std::vector<int>& labels) {
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError("labels must be 0 or 1");
  }
}

std::string format_cell(const std::optional<double>& value) {
  if (!value) return "n/a";
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.4f", *value);
  return buffer;
}

}  // namespace

ConfusionCounts confusion_at_threshold(const std::vector<double>& probs,
                                       const std::vector<int>& labels, double tau) {
  check_aligned(probs.size(), labels.size());
  check_binary_labels(labels);
  ConfusionCounts c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    bool predicted_positive = probs[i] >= tau;
    if (labels[i] == 1) {
      (predicted_positive ? c.tp : c.fn) += 1;
    } else {
      (predicted_positive ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

double sensitivity(const ConfusionCounts& c) {
  if (c.positives() == 0) throw MetricError("sensitivity undefined: no positive samples");
  return static_cast<double>(c.tp) / static_cast<double>(c.positives());
}

double specificity(const ConfusionCounts& c) {
  if (c.negatives() == 0) throw MetricError("specificity undefined: no negative samples");
  return static_cast<double>(c.tn) / static_cast<double>(c.negatives());
}

double accuracy(const ConfusionCounts& c) {
  if (c.total() == 0) throw MetricError("accuracy undefined: no samples");
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

double balanced_accuracy(const ConfusionCounts& c) {
  return balanced_accuracy(sensitivity(c), specificity(c));
}

double balanced_accuracy(double sens, double spec) { return 0.5 * (sens + spec); }

double roc_auc(const std::vector<double>& probs, const std::vector<int>& labels) {
  check_aligned(probs.size(), labels.size());
  check_binary_labels(labels);
  const std::size_t n = probs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });

  // Average ranks over tied scores keep the statistic exact for ties.
  double rank_sum_pos = 0.0;
  int64_t n_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && probs[order[j]] == probs[order[i]]) ++j;
    double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based average of [i+1, j]
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) {
        rank_sum_pos += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  int64_t n_neg = static_cast<int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw MetricError("roc_auc undefined: both classes must be present");
  }
  double pos = static_cast<double>(n_pos);
  return (rank_sum_pos - pos * (pos + 1.0) / 2.0) / (pos * static_cast<double>(n_neg));
}

void validate(const ThresholdPolicy& policy) {
  if (policy.grid_lo > policy.grid_hi)
    throw ConfigError("threshold grid must satisfy lo <= hi");
  if (policy.grid_step <= 0.0) throw ConfigError("threshold grid step must be positive");
}

std::vector<double> threshold_grid(const ThresholdPolicy& policy) {
  validate(policy);
  std::vector<double> grid;
  int steps = static_cast<int>(std::floor((policy.grid_hi - policy.grid_lo) / policy.grid_step +
                                          1e-9));
  for (int i = 0; i <= steps; ++i) grid.push_back(policy.grid_lo + i * policy.grid_step);
  return grid;
}

ThresholdChoice optimize_threshold(const std::vector<double>& probs,
                                   const std::vector<int>& labels,
                                   const ThresholdPolicy& policy) {
  ThresholdChoice best;
  bool found = false;
  for (double tau : threshold_grid(policy)) {
    double bac = balanced_accuracy(confusion_at_threshold(probs, labels, tau));
    if (!found || bac > best.bac) {  // strict: ties keep the smallest tau
      best.tau = tau;
      best.bac = bac;
      found = true;
    }
  }
  return best;
}

const MetricsRow& MetricsReport::overall() const {
  for (const MetricsRow& row : rows) {
    if (row.domain == "overall") return row;
  }
  throw Error("report has no overall row");
}

namespace {

MetricsRow make_row(const std::string& domain, const std::vector<double>& probs,
                    const std::vector<int>& labels, double tau) {
  MetricsRow row;
  row.domain = domain;
  ConfusionCounts c = confusion_at_threshold(probs, labels, tau);
  row.n = c.total();
  row.n_pos = c.positives();
  row.n_neg = c.negatives();
  row.accuracy = accuracy(c);
  if (row.n_pos > 0) row.sensitivity = sensitivity(c);
  if (row.n_neg > 0) row.specificity = specificity(c);
  if (row.sensitivity && row.specificity) {
    row.balanced_accuracy = balanced_accuracy(*row.sensitivity, *row.specificity);
    row.roc_auc = roc_auc(probs, labels);
  }
  return row;
}

}  // namespace

MetricsReport domainwise_report(const std::vector<double>& probs, const std::vector<int>& labels,
                                const std::vector<std::string>& domains, double tau) {
  check_aligned(probs.size(), labels.size());
  if (domains.size() != probs.size()) {
    throw ValidationError("domains and probs have different lengths");
  }

  std::map<std::string, std::vector<std::size_t>> by_domain;
  for (std::size_t i = 0; i < domains.size(); ++i) by_domain[domains[i]].push_back(i);

  MetricsReport report;
  report.threshold = tau;
  for (const auto& [domain, indices] : by_domain) {
    std::vector<double> dp;
    std::vector<int> dl;
    dp.reserve(indices.size());
    dl.reserve(indices.size());
    for (std::size_t i : indices) {
      dp.push_back(probs[i]);
      dl.push_back(labels[i]);
    }
    report.rows.push_back(make_row(domain, dp, dl, tau));
  }
  report.rows.push_back(make_row("overall", probs, labels, tau));
  return report;
}

std::string render_table(const MetricsReport& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-12s %9s %9s %12s %12s %10s %7s\n", "Domain", "ROC AUC",
                "Accuracy", "Sensitivity", "Specificity", "Bal. Acc.", "N");
  out << line;
  for (const MetricsRow& row : report.rows) {
    std::snprintf(line, sizeof(line), "%-12s %9s %9s %12s %12s %10s %7lld\n", row.domain.c_str(),
                  format_cell(row.roc_auc).c_str(), format_cell(row.accuracy).c_str(),
                  format_cell(row.sensitivity).c_str(), format_cell(row.specificity).c_str(),
                  format_cell(row.balanced_accuracy).c_str(),
                  static_cast<long long>(row.n));
    out << line;
  }
  std::snprintf(line, sizeof(line), "threshold: %.4f\n", report.threshold);
  out << line;
  return out.str();
}

}  // namespace amfcls
