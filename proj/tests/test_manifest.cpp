#include "amfcls/manifest.hpp"

#include <doctest.h>

#include <fstream>

#include "testutil.hpp"

using namespace amfcls;

namespace {

std::filesystem::path write_text(const std::filesystem::path& dir, const std::string& name,
                                 const std::string& content) {
  std::filesystem::path path = dir / name;
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path;
}

constexpr const char* kHeader = "crop_id,image_ref,source_image_id,label,domain_id,dataset_source";

}  // namespace

TEST_CASE("load_manifest parses a well-formed file") {
  auto dir = testutil::temp_dir("manifest_basic");
  auto path = write_text(dir, "m.csv",
                         std::string(kHeader) +
                             "\n"
                             "c1,a.png,i1,0,d1,AMi-Br\n"
                             "c2,b.png,i1,AMF,d1,AMi-Br\n"
                             "c3,c.png,i2,1,d2,MIDOG25\n");
  Manifest m = load_manifest(path);
  REQUIRE(m.size() == 3);
  CHECK(m.records()[0].crop_id == "c1");
  CHECK(m.records()[0].label == Label::kNmf);
  CHECK(m.records()[1].label == Label::kAmf);  // string labels normalize
  CHECK(m.records()[2].label == Label::kAmf);
  CHECK(m.records()[2].dataset_source == "MIDOG25");
}

TEST_CASE("duplicate crop ids are rejected with both row numbers") {
  auto dir = testutil::temp_dir("manifest_dup");
  auto path = write_text(dir, "m.csv",
                         std::string(kHeader) +
                             "\n"
                             "c1,a.png,i1,0,d1,s\n"
                             "dup,b.png,i1,0,d1,s\n"
                             "c3,c.png,i2,1,d2,s\n"
                             "c4,d.png,i2,1,d2,s\n"
                             "dup,e.png,i3,0,d1,s\n");
  try {
    load_manifest(path);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    std::string message = e.what();
    CHECK(message.find("dup") != std::string::npos);
    CHECK(message.find('2') != std::string::npos);
    CHECK(message.find('5') != std::string::npos);
  }
}

TEST_CASE("errors carry row numbers and kinds") {
  auto dir = testutil::temp_dir("manifest_errors");

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_manifest(dir / "absent.csv"), IoError);
  }
  SUBCASE("wrong header") {
    auto path = write_text(dir, "h.csv", "crop,label\nc1,0\n");
    CHECK_THROWS_AS(load_manifest(path), ValidationError);
  }
  SUBCASE("bad label") {
    auto path = write_text(dir, "l.csv", std::string(kHeader) + "\nc1,a.png,i1,2,d1,s\n");
    try {
      load_manifest(path);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("row 1") != std::string::npos);
    }
  }
  SUBCASE("wrong field count") {
    auto path = write_text(dir, "f.csv", std::string(kHeader) + "\nc1,a.png,i1,0,d1\n");
    CHECK_THROWS_AS(load_manifest(path), ValidationError);
  }
  SUBCASE("empty domain") {
    auto path = write_text(dir, "d.csv", std::string(kHeader) + "\nc1,a.png,i1,0,,s\n");
    CHECK_THROWS_AS(load_manifest(path), ValidationError);
  }
}

TEST_CASE("class_counts matches the dataset statistics shape") {
  SUBCASE("empty manifest") {
    Manifest m;
    CHECK(m.class_counts().nmf == 0);
    CHECK(m.class_counts().amf == 0);
  }
  SUBCASE("two per class") {
    std::vector<CropRecord> records;
    records.push_back(testutil::record("c1", "i1", 0, "d1"));
    records.push_back(testutil::record("c2", "i1", 0, "d1"));
    records.push_back(testutil::record("c3", "i2", 1, "d1"));
    records.push_back(testutil::record("c4", "i2", 1, "d1"));
    Manifest m = Manifest::from_records(records);
    CHECK(m.class_counts().nmf == 2);
    CHECK(m.class_counts().amf == 2);
  }
  SUBCASE("published corpus statistics") {
    // 10,191 normal + 1,748 atypical crops over 454 images, 9 domains.
    std::vector<CropRecord> records;
    records.reserve(11939);
    int image = 0;
    for (int i = 0; i < 11939; ++i) {
      if (i % 27 == 0) ++image;
      int label = i < 1748 ? 1 : 0;
      records.push_back(testutil::record("c" + std::to_string(i),
                                         "img" + std::to_string(image % 454), label,
                                         "domain" + std::to_string(image % 9)));
    }
    Manifest m = Manifest::from_records(std::move(records));
    CHECK(m.class_counts().amf == 1748);
    CHECK(m.class_counts().nmf == 10191);
    CHECK(m.class_counts().total() == 11939);
    CHECK(m.domain_counts().size() == 9);
  }
}

TEST_CASE("domain_counts tallies per domain") {
  SUBCASE("single domain") {
    std::vector<CropRecord> records = {testutil::record("c1", "i1", 0, "only")};
    Manifest m = Manifest::from_records(records);
    auto counts = m.domain_counts();
    REQUIRE(counts.size() == 1);
    CHECK(counts.at("only") == 1);
  }
  SUBCASE("counts sum to record count on random manifests") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      int n_images = 3 + static_cast<int>(rng.uniform_index(40));
      int domains = 1 + static_cast<int>(rng.uniform_index(9));
      Manifest m = testutil::synthetic_manifest(n_images, 2, domains, 0.3, seed);
      int64_t domain_total = 0;
      for (const auto& [domain, count] : m.domain_counts()) domain_total += count;
      CHECK(domain_total == static_cast<int64_t>(m.size()));
      ClassCounts cc = m.class_counts();
      CHECK(cc.total() == static_cast<int64_t>(m.size()));
    }
  }
}

TEST_CASE("save then load round-trips a manifest") {
  auto dir = testutil::temp_dir("manifest_roundtrip");
  Manifest m = testutil::synthetic_manifest(25, 3, 4, 0.25, 7);
  auto path = dir / "out.csv";
  save_manifest(m, path);
  Manifest loaded = load_manifest(path);
  REQUIRE(loaded.size() == m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    CHECK(loaded.records()[i].crop_id == m.records()[i].crop_id);
    CHECK(loaded.records()[i].image_ref == m.records()[i].image_ref);
    CHECK(loaded.records()[i].source_image_id == m.records()[i].source_image_id);
    CHECK(loaded.records()[i].label == m.records()[i].label);
    CHECK(loaded.records()[i].domain_id == m.records()[i].domain_id);
    CHECK(loaded.records()[i].dataset_source == m.records()[i].dataset_source);
  }
}

TEST_CASE("domain_by_image rejects images spanning domains") {
  std::vector<CropRecord> records = {testutil::record("c1", "i1", 0, "d1"),
                                     testutil::record("c2", "i1", 0, "d2")};
  Manifest m = Manifest::from_records(records);
  CHECK_THROWS_AS(m.domain_by_image(), ValidationError);
}
