#include "amfcls/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace amfcls {

Aggregation parse_aggregation(const std::string& name) {
  if (name == "mean_prob") return Aggregation::kMeanProb;
  if (name == "mean_logit") return Aggregation::kMeanLogit;
  throw ConfigError("unknown aggregation '" + name + "' (expected mean_prob or mean_logit)");
}

const char* aggregation_name(Aggregation a) {
  return a == Aggregation::kMeanProb ? "mean_prob" : "mean_logit";
}

std::vector<double> aggregate_probabilities(const std::vector<std::vector<double>>& member_probs,
                                            Aggregation aggregation) {
  if (member_probs.empty()) throw ValidationError("ensemble needs at least one member");
  std::size_t n = member_probs.front().size();
  for (const auto& member : member_probs) {
    if (member.size() != n) {
      throw ValidationError("ragged member probabilities: expected " + std::to_string(n) +
                            " crops, got " + std::to_string(member.size()));
    }
  }
  std::vector<double> out(n, 0.0);
  double inv_k = 1.0 / static_cast<double>(member_probs.size());
  if (aggregation == Aggregation::kMeanProb) {
    for (std::size_t i = 0; i < n; ++i) {
      // Identical member probabilities must aggregate to exactly that value;
      // summing then dividing would drift by an ulp.
      double first = member_probs.front()[i];
      bool all_equal = true;
      double sum = 0.0;
      for (const auto& member : member_probs) {
        all_equal = all_equal && member[i] == first;
        sum += member[i];
      }
      out[i] = all_equal ? first : sum * inv_k;
    }
  } else {
    for (const auto& member : member_probs) {
      for (std::size_t i = 0; i < n; ++i) {
        double p = std::clamp(member[i], 1e-12, 1.0 - 1e-12);
        out[i] += std::log(p / (1.0 - p));
      }
    }
    for (double& v : out) v = 1.0 / (1.0 + std::exp(-v * inv_k));
  }
  return out;
}

std::vector<int> predict_with_threshold(const std::vector<double>& probs, double tau) {
  std::vector<int> labels(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) labels[i] = probs[i] >= tau ? 1 : 0;
  return labels;
}

std::vector<PredictionRecord> make_prediction_records(
    const std::vector<std::string>& crop_ids, const std::vector<std::vector<double>>& member_probs,
    double tau, Aggregation aggregation) {
  if (tau <= 0.0 || tau >= 1.0) throw ConfigError("decision threshold must lie in (0,1)");
  std::vector<double> ensemble = aggregate_probabilities(member_probs, aggregation);
  if (crop_ids.size() != ensemble.size()) {
    throw ValidationError("crop ids and member probabilities differ in count");
  }
  std::vector<int> labels = predict_with_threshold(ensemble, tau);
  std::vector<PredictionRecord> records(crop_ids.size());
  for (std::size_t i = 0; i < crop_ids.size(); ++i) {
    records[i].crop_id = crop_ids[i];
    records[i].member_probs.reserve(member_probs.size());
    for (const auto& member : member_probs) records[i].member_probs.push_back(member[i]);
    records[i].ensemble_prob = ensemble[i];
    records[i].label = labels[i];
  }
  std::sort(records.begin(), records.end(),
            [](const PredictionRecord& a, const PredictionRecord& b) {
              return a.crop_id < b.crop_id;
            });
  return records;
}

void export_predictions(const std::vector<PredictionRecord>& records,
                        const std::filesystem::path& path) {
  if (records.empty()) throw ValidationError("no prediction records to export");
  std::size_t k = records.front().member_probs.size();

  std::vector<const PredictionRecord*> sorted;
  sorted.reserve(records.size());
  for (const PredictionRecord& r : records) {
    if (r.member_probs.size() != k) {
      throw ValidationError("prediction records have inconsistent member counts");
    }
    sorted.push_back(&r);
  }
  std::sort(sorted.begin(), sorted.end(), [](const PredictionRecord* a, const PredictionRecord* b) {
    return a->crop_id < b->crop_id;
  });

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write predictions file '" + path.string() + "'");
  out << "crop_id";
  for (std::size_t m = 0; m < k; ++m) out << ",prob_member_" << m;
  out << ",prob_ensemble,label\n";
  char buffer[32];
  for (const PredictionRecord* r : sorted) {
    out << r->crop_id;
    for (double p : r->member_probs) {
      std::snprintf(buffer, sizeof(buffer), "%.6f", p);
      out << ',' << buffer;
    }
    std::snprintf(buffer, sizeof(buffer), "%.6f", r->ensemble_prob);
    out << ',' << buffer << ',' << r->label << '\n';
  }
  if (!out) throw IoError("failed writing predictions file '" + path.string() + "'");
}

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty predictions file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> columns;
  {
    std::istringstream stream(line);
    std::string field;
    while (std::getline(stream, field, ',')) columns.push_back(field);
  }
  if (columns.size() < 4 || columns.front() != "crop_id" ||
      columns[columns.size() - 2] != "prob_ensemble" || columns.back() != "label") {
    throw ValidationError("unexpected predictions header '" + line + "'");
  }
  std::size_t k = columns.size() - 3;

  std::vector<PredictionRecord> records;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++row;
    if (line.empty()) continue;
    std::istringstream stream(line);
    std::string field;
    PredictionRecord record;
    if (!std::getline(stream, record.crop_id, ',')) {
      throw ValidationError("bad predictions row " + std::to_string(row));
    }
    for (std::size_t m = 0; m < k; ++m) {
      if (!std::getline(stream, field, ','))
        throw ValidationError("bad predictions row " + std::to_string(row));
      record.member_probs.push_back(std::stod(field));
    }
    if (!std::getline(stream, field, ','))
      throw ValidationError("bad predictions row " + std::to_string(row));
    record.ensemble_prob = std::stod(field);
    if (!std::getline(stream, field))
      throw ValidationError("bad predictions row " + std::to_string(row));
    record.label = std::stoi(field);
    records.push_back(std::move(record));
  }
  return records;
}

}  // namespace amfcls
