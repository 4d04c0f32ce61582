#pragma once

#include "amfcls/common.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace amfcls {

// Atypical mitotic figure (AMF) is the positive class everywhere in this
// codebase; sensitivity therefore means atypical recall.
enum class Label : int { kNmf = 0, kAmf = 1 };

Label parse_label(const std::string& text);  // accepts 0/1/NMF/AMF
const char* label_name(Label label);

// One annotated mitotic-figure crop.
struct CropRecord {
  std::string crop_id;
  std::string image_ref;         // path to the crop image, relative to the manifest
  std::string source_image_id;   // labeled image the crop came from; split granularity
  Label label = Label::kNmf;
  std::string domain_id;
  std::string dataset_source;    // e.g. "AMi-Br", "MIDOG25", "OMG-Octo"
};

struct ClassCounts {
  int64_t nmf = 0;
  int64_t amf = 0;
  int64_t total() const { return nmf + amf; }
};

class Manifest {
 public:
  static constexpr int kSchemaVersion = 1;

  Manifest() = default;

  // Validates record invariants (unique crop ids, non-empty keys).
  static Manifest from_records(std::vector<CropRecord> records);

  const std::vector<CropRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  ClassCounts class_counts() const;
  std::map<std::string, int64_t> domain_counts() const;

  // Distinct source image ids in first-appearance order.
  std::vector<std::string> source_image_ids() const;

  // Maps each source image to its domain. Throws if crops of one image
  // disagree on the domain (group splits would be ill-defined).
  std::map<std::string, std::string> domain_by_image() const;

  Manifest subset_by_images(const std::set<std::string>& image_ids) const;

 private:
  explicit Manifest(std::vector<CropRecord> records) : records_(std::move(records)) {}
  std::vector<CropRecord> records_;
};

// Comma-delimited UTF-8 text with the mandatory header
//   crop_id,image_ref,source_image_id,label,domain_id,dataset_source
// One record per line; ids must not contain commas. Errors cite data-row
// numbers (1-based, header excluded).
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

}  // namespace amfcls
