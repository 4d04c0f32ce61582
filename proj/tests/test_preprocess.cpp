#include "amfcls/preprocess.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

#include "testutil.hpp"

using namespace amfcls;

namespace {

Image random_image(int h, int w, uint64_t seed) {
  Rng rng(seed);
  Image img(h, w, 3);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

bool images_equal(const Image& a, const Image& b, float tol = 0.0f) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) return false;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    if (std::abs(a.data[i] - b.data[i]) > tol) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("pad_to_target centers the crop") {
  PreprocessConfig cfg;
  cfg.strategy = ResizeStrategy::kPad;
  cfg.target_size = 224;

  Image img(50, 60, 3);
  for (float& v : img.data) v = 0.25f;
  Image out = pad_to_target(img, cfg);
  REQUIRE(out.height == 224);
  REQUIRE(out.width == 224);

  // Original pixels land at rows 87..136 and cols 82..141.
  for (int r = 0; r < 224; ++r) {
    for (int c = 0; c < 224; ++c) {
      bool inside = r >= 87 && r <= 136 && c >= 82 && c <= 141;
      CHECK(out.at(r, c, 0) == (inside ? 0.25f : 1.0f));
    }
  }
}

TEST_CASE("pad_to_target is identity at target size and rejects oversize") {
  PreprocessConfig cfg;
  Image img = random_image(224, 224, 1);
  CHECK(images_equal(pad_to_target(img, cfg), img));

  Image oversized(300, 100, 3);
  try {
    pad_to_target(oversized, cfg);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("resize") != std::string::npos);
  }
}

TEST_CASE("pad_to_target preserves the pixel multiset plus fill") {
  PreprocessConfig cfg;
  cfg.target_size = 32;
  cfg.pad_fill = {0.5f, 0.5f, 0.5f};
  Image img = random_image(10, 12, 2);
  Image out = pad_to_target(img, cfg);

  std::multiset<float> before(img.data.begin(), img.data.end());
  std::multiset<float> after(out.data.begin(), out.data.end());
  std::size_t fill_count = (32u * 32u - 10u * 12u) * 3u;
  for (std::size_t i = 0; i < fill_count; ++i) before.insert(0.5f);
  CHECK(before == after);
}

TEST_CASE("resize_to_target identity and constants") {
  PreprocessConfig cfg;
  cfg.strategy = ResizeStrategy::kResize;

  Image img = random_image(224, 224, 3);
  Image out = resize_to_target(img, cfg);
  REQUIRE(out.height == 224);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    CHECK(std::abs(out.data[i] - img.data[i]) <= 1e-6f);
  }

  Image constant(100, 100, 3, 0.37f);
  Image up = resize_to_target(constant, cfg);
  REQUIRE(up.height == 224);
  for (float v : up.data) CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));

  Image empty;
  CHECK_THROWS_AS(resize_to_target(empty, cfg), ValidationError);
}

TEST_CASE("resize preserves the mean of a checkerboard within 1%") {
  PreprocessConfig cfg;
  cfg.strategy = ResizeStrategy::kResize;
  Image board(448, 448, 3);
  for (int r = 0; r < 448; ++r)
    for (int c = 0; c < 448; ++c)
      for (int ch = 0; ch < 3; ++ch) board.at(r, c, ch) = ((r + c) % 2 == 0) ? 1.0f : 0.0f;

  double mean_before = 0.0;
  for (float v : board.data) mean_before += v;
  mean_before /= static_cast<double>(board.data.size());

  Image out = resize_to_target(board, cfg);
  double mean_after = 0.0;
  for (float v : out.data) mean_after += v;
  mean_after /= static_cast<double>(out.data.size());

  CHECK(std::abs(mean_after - mean_before) < 0.01 * mean_before);
}

TEST_CASE("augment honors the identity configuration") {
  AugmentationConfig cfg;
  cfg.flip_prob = 0.0f;
  cfg.max_rotation_deg = 0.0f;
  cfg.jitter_strength = 0.0f;
  cfg.crop_scale_lo = 1.0f;
  cfg.crop_scale_hi = 1.0f;
  Image img = random_image(64, 64, 4);
  Rng rng(9);
  CHECK(images_equal(augment(img, cfg, rng), img));
}

TEST_CASE("augment with flip_prob 1 mirrors horizontally") {
  AugmentationConfig cfg;
  cfg.flip_prob = 1.0f;
  cfg.max_rotation_deg = 0.0f;
  cfg.jitter_strength = 0.0f;
  cfg.crop_scale_lo = 1.0f;
  cfg.crop_scale_hi = 1.0f;
  Image img = random_image(32, 48, 5);
  Rng rng(10);
  Image out = augment(img, cfg, rng);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      for (int ch = 0; ch < 3; ++ch) CHECK(out.at(r, c, ch) == img.at(r, img.width - 1 - c, ch));
}

TEST_CASE("augment is deterministic in the rng state") {
  AugmentationConfig cfg;  // defaults: all augmentations active
  Image img = random_image(64, 64, 6);
  Rng rng_a(1234);
  Rng rng_b(1234);
  Image a = augment(img, cfg, rng_a);
  Image b = augment(img, cfg, rng_b);
  CHECK(images_equal(a, b));

  Rng rng_c(99);
  Image c = augment(img, cfg, rng_c);
  CHECK_FALSE(images_equal(a, c));
}

TEST_CASE("normalize and denormalize") {
  NormStats identity{{0, 0, 0}, {1, 1, 1}};
  Image img = random_image(16, 16, 7);
  CHECK(images_equal(normalize(img, identity), img));

  NormStats stats{{0.4f, 0.5f, 0.6f}, {0.2f, 0.25f, 0.3f}};
  Image constant(8, 8, 3);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c)
      for (int ch = 0; ch < 3; ++ch) constant.at(r, c, ch) = stats.mean[ch];
  Image zeros = normalize(constant, stats);
  for (float v : zeros.data) CHECK(v == doctest::Approx(0.0f));

  Image round_trip = denormalize(normalize(img, stats), stats);
  CHECK(images_equal(round_trip, img, 1e-6f));

  NormStats degenerate{{0, 0, 0}, {1, 0, 1}};
  CHECK_THROWS_AS(normalize(img, degenerate), ValidationError);
}

TEST_CASE("eval path applies strategy and normalization only") {
  PreprocessConfig pre;
  pre.strategy = ResizeStrategy::kPad;
  pre.target_size = 96;
  NormStats stats{{0.5f, 0.5f, 0.5f}, {0.5f, 0.5f, 0.5f}};
  Image img = random_image(40, 52, 8);

  Image via_pipeline = prepare_eval(img, pre, stats);
  Image manual = normalize(pad_to_target(img, pre), stats);
  CHECK(images_equal(via_pipeline, manual));
}

TEST_CASE("config validation rejects bad ranges") {
  AugmentationConfig aug;
  aug.flip_prob = 1.5f;
  CHECK_THROWS_AS(validate(aug), ConfigError);
  aug = AugmentationConfig{};
  aug.crop_scale_lo = 0.9f;
  aug.crop_scale_hi = 0.5f;
  CHECK_THROWS_AS(validate(aug), ConfigError);

  PreprocessConfig pre;
  pre.target_size = 0;
  CHECK_THROWS_AS(validate(pre), ConfigError);
}
