#pragma once

#include "amfcls/common.hpp"
#include "amfcls/image.hpp"

#include <array>
#include <cstdint>

namespace amfcls {

enum class ResizeStrategy { kPad, kResize };

ResizeStrategy parse_strategy(const std::string& name);  // "pad" | "resize"
const char* strategy_name(ResizeStrategy s);

struct PreprocessConfig {
  ResizeStrategy strategy = ResizeStrategy::kPad;
  int target_size = 224;
  // H&E backgrounds are near white, so padding defaults to white.
  std::array<float, 3> pad_fill = {1.0f, 1.0f, 1.0f};
};

struct AugmentationConfig {
  float flip_prob = 0.5f;
  float max_rotation_deg = 15.0f;
  float jitter_strength = 0.2f;  // brightness/contrast/saturation factor range
  float crop_scale_lo = 0.8f;    // area fraction for the random resized crop
  float crop_scale_hi = 1.0f;
  uint64_t seed = 0;
};

void validate(const PreprocessConfig& cfg);
void validate(const AugmentationConfig& cfg);

// Per-channel normalization statistics of a backbone.
struct NormStats {
  std::array<float, 3> mean = {0.5f, 0.5f, 0.5f};
  std::array<float, 3> std = {0.5f, 0.5f, 0.5f};
};

// Centers the crop on a pad_fill canvas; no resampling. Errors if the crop
// exceeds target_size (use the resize strategy for oversized inputs).
Image pad_to_target(const Image& img, const PreprocessConfig& cfg);

// Bilinear resample to target_size x target_size (half-pixel centers).
Image resize_to_target(const Image& img, const PreprocessConfig& cfg);

Image apply_strategy(const Image& img, const PreprocessConfig& cfg);

// Random resized crop -> horizontal flip -> rotation -> color jitter.
// Output keeps the input shape; identical rng state gives identical output.
Image augment(const Image& img, const AugmentationConfig& cfg, Rng& rng);

Image normalize(const Image& img, const NormStats& stats);
Image denormalize(const Image& img, const NormStats& stats);

// Train path: strategy -> augment -> normalize.
Image prepare_train(const Image& img, const PreprocessConfig& pre, const AugmentationConfig& aug,
                    const NormStats& stats, Rng& rng);
// Validation/test path: strategy -> normalize only, never augmented.
Image prepare_eval(const Image& img, const PreprocessConfig& pre, const NormStats& stats);

}  // namespace amfcls
