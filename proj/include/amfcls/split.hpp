#pragma once

#include "amfcls/common.hpp"
#include "amfcls/manifest.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace amfcls {

enum class SplitStrategy { kRandom, kGroup };

SplitStrategy parse_split_strategy(const std::string& name);  // "random" | "group"
const char* split_strategy_name(SplitStrategy s);

// Fold assignment at source-image granularity, so crops from one labeled
// image never straddle folds.
struct SplitPlan {
  SplitStrategy strategy = SplitStrategy::kRandom;
  int k = 3;
  uint64_t seed = 0;
  bool stratified = false;  // random strategy only
  std::map<std::string, int> assignment;            // source_image_id -> fold
  std::map<std::string, std::string> domain_of;     // source_image_id -> domain_id

  std::vector<int64_t> fold_image_counts() const;
  std::vector<std::string> images_in_fold(int fold) const;
};

// Shuffles images and deals them round-robin; fold sizes differ by <= 1.
// With stratify_by_label, images are dealt per majority crop label so each
// fold sees a near-equal label mix (off by default).
SplitPlan random_kfold(const Manifest& manifest, int k, uint64_t seed,
                       bool stratify_by_label = false);

// Assigns whole domains to folds, largest domain first into the currently
// smallest fold (by image count); ties go to the lowest fold index.
SplitPlan group_kfold(const Manifest& manifest, int k, uint64_t seed);

struct LeakageViolation {
  enum class Kind {
    kMissingImage,      // image in manifest but not in plan
    kUnknownImage,      // image in plan but not in manifest
    kBadFoldIndex,      // fold outside [0, k)
    kDomainMismatch,    // plan and manifest disagree on an image's domain
    kDomainSpansFolds,  // group plan places one domain in several folds
  };
  Kind kind;
  std::string subject;  // image id or domain id
  std::string detail;
};

struct AuditReport {
  std::vector<LeakageViolation> violations;
  bool ok() const { return violations.empty(); }
  std::string summary() const;
};

// Audits plan coverage and, for group plans, that no domain spans folds.
AuditReport verify_no_leakage(const SplitPlan& plan, const Manifest& manifest);

// Crop-level (train, validation) pair for one held-out fold.
std::pair<Manifest, Manifest> train_val_split(const Manifest& manifest, const SplitPlan& plan,
                                              int val_fold);

// Plain-text plan file: key/value header plus an assignment table, so
// training runs are replayable.
void save_split_plan(const SplitPlan& plan, const std::filesystem::path& path);
SplitPlan load_split_plan(const std::filesystem::path& path);

}  // namespace amfcls
