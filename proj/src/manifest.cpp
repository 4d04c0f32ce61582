#include "amfcls/manifest.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

namespace amfcls {

namespace {

const char* kHeader = "crop_id,image_ref,source_image_id,label,domain_id,dataset_source";
constexpr int kNumColumns = 6;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream stream(line);
  while (std::getline(stream, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

void validate_record(const CropRecord& record, const std::string& where) {
  if (record.crop_id.empty()) throw ValidationError("empty crop_id " + where);
  if (record.source_image_id.empty())
    throw ValidationError("empty source_image_id for crop '" + record.crop_id + "' " + where);
  if (record.domain_id.empty())
    throw ValidationError("empty domain_id for crop '" + record.crop_id + "' " + where);
}

}  // namespace

Label parse_label(const std::string& text) {
  if (text == "0" || text == "NMF") return Label::kNmf;
  if (text == "1" || text == "AMF") return Label::kAmf;
  throw ValidationError("label '" + text + "' is not one of 0, 1, NMF, AMF");
}

const char* label_name(Label label) { return label == Label::kAmf ? "AMF" : "NMF"; }

Manifest Manifest::from_records(std::vector<CropRecord> records) {
  std::unordered_map<std::string, std::size_t> seen;
  seen.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const CropRecord& record = records[i];
    validate_record(record, "(record " + std::to_string(i + 1) + ")");
    auto [it, inserted] = seen.emplace(record.crop_id, i + 1);
    if (!inserted) {
      throw ValidationError("duplicate crop_id '" + record.crop_id + "' on rows " +
                            std::to_string(it->second) + " and " + std::to_string(i + 1));
    }
  }
  return Manifest(std::move(records));
}

ClassCounts Manifest::class_counts() const {
  ClassCounts counts;
  for (const CropRecord& record : records_) {
    (record.label == Label::kAmf ? counts.amf : counts.nmf) += 1;
  }
  return counts;
}

std::map<std::string, int64_t> Manifest::domain_counts() const {
  std::map<std::string, int64_t> counts;
  for (const CropRecord& record : records_) counts[record.domain_id] += 1;
  return counts;
}

std::vector<std::string> Manifest::source_image_ids() const {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const CropRecord& record : records_) {
    if (seen.insert(record.source_image_id).second) ids.push_back(record.source_image_id);
  }
  return ids;
}

std::map<std::string, std::string> Manifest::domain_by_image() const {
  std::map<std::string, std::string> domains;
  for (const CropRecord& record : records_) {
    auto [it, inserted] = domains.emplace(record.source_image_id, record.domain_id);
    if (!inserted && it->second != record.domain_id) {
      throw ValidationError("source image '" + record.source_image_id +
                            "' has crops in domains '" + it->second + "' and '" +
                            record.domain_id + "'");
    }
  }
  return domains;
}

Manifest Manifest::subset_by_images(const std::set<std::string>& image_ids) const {
  std::vector<CropRecord> subset;
  for (const CropRecord& record : records_) {
    if (image_ids.count(record.source_image_id)) subset.push_back(record);
  }
  return Manifest(std::move(subset));
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) throw IoError("cannot open manifest file '" + path.string() + "'");

  std::string line;
  if (!std::getline(file, line)) throw ValidationError("manifest '" + path.string() + "' is empty");
  line = strip_cr(line);
  if (line != kHeader) {
    throw ValidationError("manifest '" + path.string() + "' has header '" + line +
                          "', expected '" + kHeader + "'");
  }

  std::vector<CropRecord> records;
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t row = 0;
  while (std::getline(file, line)) {
    line = strip_cr(line);
    ++row;
    if (line.empty()) {
      // Tolerate a trailing blank line only.
      if (file.peek() == EOF) break;
      throw ValidationError("empty row " + std::to_string(row) + " in manifest");
    }
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != kNumColumns) {
      throw ValidationError("row " + std::to_string(row) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(kNumColumns));
    }
    CropRecord record;
    record.crop_id = fields[0];
    record.image_ref = fields[1];
    record.source_image_id = fields[2];
    try {
      record.label = parse_label(fields[3]);
    } catch (const ValidationError& e) {
      throw ValidationError(std::string(e.what()) + " (row " + std::to_string(row) + ")");
    }
    record.domain_id = fields[4];
    record.dataset_source = fields[5];
    validate_record(record, "(row " + std::to_string(row) + ")");

    auto [it, inserted] = seen.emplace(record.crop_id, row);
    if (!inserted) {
      throw ValidationError("duplicate crop_id '" + record.crop_id + "' on rows " +
                            std::to_string(it->second) + " and " + std::to_string(row));
    }
    records.push_back(std::move(record));
  }
  return Manifest::from_records(std::move(records));
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write manifest file '" + path.string() + "'");
  file << kHeader << '\n';
  for (const CropRecord& record : manifest.records()) {
    file << record.crop_id << ',' << record.image_ref << ',' << record.source_image_id << ','
         << static_cast<int>(record.label) << ',' << record.domain_id << ','
         << record.dataset_source << '\n';
  }
  if (!file) throw IoError("failed writing manifest file '" + path.string() + "'");
}

}  // namespace amfcls
