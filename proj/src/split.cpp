#include "amfcls/split.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace amfcls {

namespace {

void require_valid_k(int k) {
  if (k < 2) throw ConfigError("k must be >= 2, got " + std::to_string(k));
}

int smallest_fold(const std::vector<int64_t>& sizes) {
  int best = 0;
  for (int f = 1; f < static_cast<int>(sizes.size()); ++f) {
    if (sizes[f] < sizes[best]) best = f;
  }
  return best;
}

}  // namespace

SplitStrategy parse_split_strategy(const std::string& name) {
  if (name == "random" || name == "RANDOM") return SplitStrategy::kRandom;
  if (name == "group" || name == "GROUP") return SplitStrategy::kGroup;
  throw ConfigError("unknown split strategy '" + name + "' (expected random or group)");
}

const char* split_strategy_name(SplitStrategy s) {
  return s == SplitStrategy::kRandom ? "random" : "group";
}

std::vector<int64_t> SplitPlan::fold_image_counts() const {
  std::vector<int64_t> counts(k, 0);
  for (const auto& [image, fold] : assignment) {
    if (fold >= 0 && fold < k) counts[fold] += 1;
  }
  return counts;
}

std::vector<std::string> SplitPlan::images_in_fold(int fold) const {
  std::vector<std::string> images;
  for (const auto& [image, f] : assignment) {
    if (f == fold) images.push_back(image);
  }
  return images;
}

SplitPlan random_kfold(const Manifest& manifest, int k, uint64_t seed, bool stratify_by_label) {
  require_valid_k(k);
  std::vector<std::string> images = manifest.source_image_ids();
  if (static_cast<int>(images.size()) < k) {
    throw ValidationError("random_kfold: " + std::to_string(images.size()) +
                          " distinct source images, need at least " + std::to_string(k));
  }

  Rng rng(substream_seed(seed, "random_kfold"));
  SplitPlan plan;
  plan.strategy = SplitStrategy::kRandom;
  plan.k = k;
  plan.seed = seed;
  plan.stratified = stratify_by_label;
  plan.domain_of = manifest.domain_by_image();

  if (!stratify_by_label) {
    rng.shuffle(images);
  } else {
    // Majority crop label per image (ties count as positive); dealing the
    // concatenated per-label lists round-robin balances both fold sizes and
    // label mix.
    std::map<std::string, std::pair<int64_t, int64_t>> tally;  // image -> (nmf, amf)
    for (const CropRecord& r : manifest.records()) {
      auto& t = tally[r.source_image_id];
      (r.label == Label::kAmf ? t.second : t.first) += 1;
    }
    std::vector<std::string> positives, negatives;
    for (const std::string& id : images) {
      const auto& t = tally[id];
      (t.second >= t.first ? positives : negatives).push_back(id);
    }
    rng.shuffle(positives);
    rng.shuffle(negatives);
    images = std::move(positives);
    images.insert(images.end(), negatives.begin(), negatives.end());
  }

  for (std::size_t i = 0; i < images.size(); ++i) {
    plan.assignment[images[i]] = static_cast<int>(i % k);
  }
  return plan;
}

SplitPlan group_kfold(const Manifest& manifest, int k, uint64_t seed) {
  require_valid_k(k);
  std::map<std::string, std::string> domain_of = manifest.domain_by_image();

  std::map<std::string, int64_t> domain_sizes;  // domain -> #images
  for (const auto& [image, domain] : domain_of) domain_sizes[domain] += 1;
  if (static_cast<int>(domain_sizes.size()) < k) {
    throw ValidationError("group_kfold: " + std::to_string(domain_sizes.size()) +
                          " domains, need at least " + std::to_string(k));
  }

  // Largest domain first into the currently smallest fold; deterministic
  // tie-break on domain id keeps the plan reproducible across runs.
  std::vector<std::pair<std::string, int64_t>> order(domain_sizes.begin(), domain_sizes.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  SplitPlan plan;
  plan.strategy = SplitStrategy::kGroup;
  plan.k = k;
  plan.seed = seed;
  plan.domain_of = domain_of;

  std::vector<int64_t> fold_sizes(k, 0);
  std::map<std::string, int> domain_fold;
  for (const auto& [domain, size] : order) {
    int fold = smallest_fold(fold_sizes);
    domain_fold[domain] = fold;
    fold_sizes[fold] += size;
  }
  for (const auto& [image, domain] : domain_of) {
    plan.assignment[image] = domain_fold[domain];
  }
  return plan;
}

AuditReport verify_no_leakage(const SplitPlan& plan, const Manifest& manifest) {
  AuditReport report;
  std::map<std::string, std::string> manifest_domains = manifest.domain_by_image();

  for (const auto& [image, domain] : manifest_domains) {
    auto it = plan.assignment.find(image);
    if (it == plan.assignment.end()) {
      report.violations.push_back({LeakageViolation::Kind::kMissingImage, image,
                                   "image present in manifest but absent from plan"});
      continue;
    }
    if (it->second < 0 || it->second >= plan.k) {
      report.violations.push_back({LeakageViolation::Kind::kBadFoldIndex, image,
                                   "fold " + std::to_string(it->second) + " outside [0," +
                                       std::to_string(plan.k) + ")"});
    }
    auto dit = plan.domain_of.find(image);
    if (dit != plan.domain_of.end() && dit->second != domain) {
      report.violations.push_back({LeakageViolation::Kind::kDomainMismatch, image,
                                   "plan says domain '" + dit->second + "', manifest says '" +
                                       domain + "'"});
    }
  }
  for (const auto& [image, fold] : plan.assignment) {
    if (!manifest_domains.count(image)) {
      report.violations.push_back({LeakageViolation::Kind::kUnknownImage, image,
                                   "image present in plan but absent from manifest"});
    }
  }

  if (plan.strategy == SplitStrategy::kGroup) {
    std::map<std::string, std::set<int>> folds_per_domain;
    for (const auto& [image, domain] : manifest_domains) {
      auto it = plan.assignment.find(image);
      if (it != plan.assignment.end()) folds_per_domain[domain].insert(it->second);
    }
    for (const auto& [domain, folds] : folds_per_domain) {
      if (folds.size() > 1) {
        std::ostringstream detail;
        detail << "domain spans folds {";
        bool first = true;
        for (int f : folds) {
          if (!first) detail << ',';
          detail << f;
          first = false;
        }
        detail << "}";
        report.violations.push_back(
            {LeakageViolation::Kind::kDomainSpansFolds, domain, detail.str()});
      }
    }
  }
  return report;
}

std::string AuditReport::summary() const {
  if (ok()) return "no leakage violations";
  std::ostringstream out;
  out << violations.size() << " violation(s):";
  for (const LeakageViolation& v : violations) {
    out << "\n  " << v.subject << ": " << v.detail;
  }
  return out.str();
}

std::pair<Manifest, Manifest> train_val_split(const Manifest& manifest, const SplitPlan& plan,
                                              int val_fold) {
  if (val_fold < 0 || val_fold >= plan.k) {
    throw ConfigError("validation fold " + std::to_string(val_fold) + " outside [0," +
                      std::to_string(plan.k) + ")");
  }
  AuditReport audit = verify_no_leakage(plan, manifest);
  if (!audit.ok()) {
    throw ValidationError("split plan does not cover manifest: " + audit.summary());
  }
  std::set<std::string> train_images, val_images;
  for (const auto& [image, fold] : plan.assignment) {
    (fold == val_fold ? val_images : train_images).insert(image);
  }
  return {manifest.subset_by_images(train_images), manifest.subset_by_images(val_images)};
}

void save_split_plan(const SplitPlan& plan, const std::filesystem::path& path) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write split plan '" + path.string() + "'");
  file << "# amfcls split plan\n";
  file << "schema_version 1\n";
  file << "strategy " << split_strategy_name(plan.strategy) << '\n';
  file << "k " << plan.k << '\n';
  file << "seed " << plan.seed << '\n';
  file << "stratified " << (plan.stratified ? 1 : 0) << '\n';
  file << "images " << plan.assignment.size() << '\n';
  file << "assignment\n";
  for (const auto& [image, fold] : plan.assignment) {
    auto dit = plan.domain_of.find(image);
    std::string domain = dit == plan.domain_of.end() ? "?" : dit->second;
    file << image << '\t' << fold << '\t' << domain << '\n';
  }
  if (!file) throw IoError("failed writing split plan '" + path.string() + "'");
}

SplitPlan load_split_plan(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) throw IoError("cannot open split plan '" + path.string() + "'");
  SplitPlan plan;
  std::string line;
  std::size_t declared_images = 0;
  bool in_assignment = false;
  while (std::getline(file, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!in_assignment) {
      std::istringstream stream(line);
      std::string key;
      stream >> key;
      if (key == "assignment") {
        in_assignment = true;
      } else if (key == "schema_version") {
        int version = 0;
        stream >> version;
        if (version != 1)
          throw ValidationError("unsupported split plan schema_version " +
                                std::to_string(version));
      } else if (key == "strategy") {
        std::string name;
        stream >> name;
        plan.strategy = parse_split_strategy(name);
      } else if (key == "k") {
        stream >> plan.k;
      } else if (key == "seed") {
        stream >> plan.seed;
      } else if (key == "stratified") {
        int flag = 0;
        stream >> flag;
        plan.stratified = flag != 0;
      } else if (key == "images") {
        stream >> declared_images;
      } else {
        throw ValidationError("unknown split plan key '" + key + "'");
      }
    } else {
      std::istringstream stream(line);
      std::string image, domain;
      int fold = -1;
      if (!std::getline(stream, image, '\t')) {
        throw ValidationError("malformed assignment line '" + line + "'");
      }
      std::string fold_text;
      if (!std::getline(stream, fold_text, '\t') || !std::getline(stream, domain)) {
        throw ValidationError("malformed assignment line '" + line + "'");
      }
      fold = std::stoi(fold_text);
      plan.assignment[image] = fold;
      plan.domain_of[image] = domain;
    }
  }
  if (plan.k < 2) throw ValidationError("split plan missing a valid k");
  if (declared_images != plan.assignment.size()) {
    throw ValidationError("split plan declares " + std::to_string(declared_images) +
                          " images but lists " + std::to_string(plan.assignment.size()));
  }
  return plan;
}

}  // namespace amfcls
