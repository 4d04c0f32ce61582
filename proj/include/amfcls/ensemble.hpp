#pragma once

#include "amfcls/common.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace amfcls {

enum class Aggregation { kMeanProb, kMeanLogit };

Aggregation parse_aggregation(const std::string& name);  // "mean_prob" | "mean_logit"
const char* aggregation_name(Aggregation a);

// member_probs[m][i] is member m's probability for crop i; all members must
// cover the same crops. Default aggregation is the element-wise mean of
// post-sigmoid probabilities, which keeps the decision threshold on [0,1].
std::vector<double> aggregate_probabilities(const std::vector<std::vector<double>>& member_probs,
                                            Aggregation aggregation = Aggregation::kMeanProb);

// label 1 iff prob >= tau.
std::vector<int> predict_with_threshold(const std::vector<double>& probs, double tau);

struct PredictionRecord {
  std::string crop_id;
  std::vector<double> member_probs;
  double ensemble_prob = 0.0;
  int label = 0;
};

std::vector<PredictionRecord> make_prediction_records(
    const std::vector<std::string>& crop_ids, const std::vector<std::vector<double>>& member_probs,
    double tau, Aggregation aggregation = Aggregation::kMeanProb);

// CSV with header crop_id,prob_member_0..k-1,prob_ensemble,label; rows sorted
// by crop_id, probabilities at 6 decimals. Re-exporting the same records is
// byte-identical.
void export_predictions(const std::vector<PredictionRecord>& records,
                        const std::filesystem::path& path);
std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path);

}  // namespace amfcls
