#include "amfcls/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace amfcls {

namespace {

float sample_constant_border(const Image& img, double sy, double sx, int ch, float fill) {
  int y0 = static_cast<int>(std::floor(sy));
  int x0 = static_cast<int>(std::floor(sx));
  double fy = sy - y0;
  double fx = sx - x0;
  auto value = [&](int y, int x) -> float {
    if (y < 0 || y >= img.height || x < 0 || x >= img.width) return fill;
    return img.at(y, x, ch);
  };
  double top = (1.0 - fx) * value(y0, x0) + fx * value(y0, x0 + 1);
  double bottom = (1.0 - fx) * value(y0 + 1, x0) + fx * value(y0 + 1, x0 + 1);
  return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  Image out(out_h, out_w, img.channels);
  double scale_y = static_cast<double>(img.height) / out_h;
  double scale_x = static_cast<double>(img.width) / out_w;
  for (int r = 0; r < out_h; ++r) {
    double sy = (r + 0.5) * scale_y - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
    int y0 = static_cast<int>(std::floor(sy));
    int y1 = std::min(y0 + 1, img.height - 1);
    double fy = sy - y0;
    for (int c = 0; c < out_w; ++c) {
      double sx = (c + 0.5) * scale_x - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
      int x0 = static_cast<int>(std::floor(sx));
      int x1 = std::min(x0 + 1, img.width - 1);
      double fx = sx - x0;
      for (int ch = 0; ch < img.channels; ++ch) {
        double top = (1.0 - fx) * img.at(y0, x0, ch) + fx * img.at(y0, x1, ch);
        double bottom = (1.0 - fx) * img.at(y1, x0, ch) + fx * img.at(y1, x1, ch);
        out.at(r, c, ch) = static_cast<float>((1.0 - fy) * top + fy * bottom);
      }
    }
  }
  return out;
}

Image rotate_bilinear(const Image& img, double angle_deg, float fill) {
  Image out(img.height, img.width, img.channels);
  double theta = angle_deg * M_PI / 180.0;
  double cos_t = std::cos(theta);
  double sin_t = std::sin(theta);
  double cy = (img.height - 1) / 2.0;
  double cx = (img.width - 1) / 2.0;
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      double dy = r - cy;
      double dx = c - cx;
      double sx = cx + cos_t * dx + sin_t * dy;
      double sy = cy - sin_t * dx + cos_t * dy;
      for (int ch = 0; ch < img.channels; ++ch) {
        out.at(r, c, ch) = sample_constant_border(img, sy, sx, ch, fill);
      }
    }
  }
  return out;
}

float luma(const Image& img, int r, int c) {
  return 0.299f * img.at(r, c, 0) + 0.587f * img.at(r, c, 1) + 0.114f * img.at(r, c, 2);
}

void clamp_unit(Image& img) {
  for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace

ResizeStrategy parse_strategy(const std::string& name) {
  if (name == "pad" || name == "PAD") return ResizeStrategy::kPad;
  if (name == "resize" || name == "RESIZE") return ResizeStrategy::kResize;
  throw ConfigError("unknown preprocess strategy '" + name + "' (expected pad or resize)");
}

const char* strategy_name(ResizeStrategy s) {
  return s == ResizeStrategy::kPad ? "pad" : "resize";
}

void validate(const PreprocessConfig& cfg) {
  if (cfg.target_size <= 0) throw ConfigError("target_size must be positive");
  for (float v : cfg.pad_fill) {
    if (v < 0.0f || v > 1.0f) throw ConfigError("pad_fill values must lie in [0,1]");
  }
}

void validate(const AugmentationConfig& cfg) {
  if (cfg.flip_prob < 0.0f || cfg.flip_prob > 1.0f)
    throw ConfigError("flip_prob must lie in [0,1]");
  if (cfg.max_rotation_deg < 0.0f) throw ConfigError("max_rotation_deg must be >= 0");
  if (cfg.jitter_strength < 0.0f || cfg.jitter_strength > 1.0f)
    throw ConfigError("jitter_strength must lie in [0,1]");
  if (cfg.crop_scale_lo <= 0.0f || cfg.crop_scale_hi > 1.0f ||
      cfg.crop_scale_lo > cfg.crop_scale_hi) {
    throw ConfigError("crop_scale range must satisfy 0 < lo <= hi <= 1");
  }
}

Image pad_to_target(const Image& img, const PreprocessConfig& cfg) {
  validate(cfg);
  if (img.empty()) throw ValidationError("pad_to_target: empty image");
  if (img.height > cfg.target_size || img.width > cfg.target_size) {
    throw ValidationError("pad_to_target: input " + std::to_string(img.height) + "x" +
                          std::to_string(img.width) + " exceeds target " +
                          std::to_string(cfg.target_size) +
                          "; use the resize strategy for oversized crops");
  }
  Image out(cfg.target_size, cfg.target_size, img.channels);
  for (int r = 0; r < cfg.target_size; ++r) {
    for (int c = 0; c < cfg.target_size; ++c) {
      for (int ch = 0; ch < img.channels; ++ch) {
        out.at(r, c, ch) = cfg.pad_fill[std::min(ch, 2)];
      }
    }
  }
  int row_offset = (cfg.target_size - img.height) / 2;
  int col_offset = (cfg.target_size - img.width) / 2;
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      for (int ch = 0; ch < img.channels; ++ch) {
        out.at(row_offset + r, col_offset + c, ch) = img.at(r, c, ch);
      }
    }
  }
  return out;
}

Image resize_to_target(const Image& img, const PreprocessConfig& cfg) {
  validate(cfg);
  if (img.empty()) throw ValidationError("resize_to_target: empty image");
  if (img.height == cfg.target_size && img.width == cfg.target_size) return img;
  return resize_bilinear(img, cfg.target_size, cfg.target_size);
}

Image apply_strategy(const Image& img, const PreprocessConfig& cfg) {
  return cfg.strategy == ResizeStrategy::kPad ? pad_to_target(img, cfg)
                                              : resize_to_target(img, cfg);
}

Image augment(const Image& img, const AugmentationConfig& cfg, Rng& rng) {
  validate(cfg);
  if (img.empty()) throw ValidationError("augment: empty image");
  Image out = img;

  // Random resized crop (area fraction in [lo,hi], aspect preserved).
  if (cfg.crop_scale_lo < 1.0f || cfg.crop_scale_hi < 1.0f) {
    double scale = rng.uniform(cfg.crop_scale_lo, cfg.crop_scale_hi);
    double side = std::sqrt(scale);
    int crop_h = std::max(1, static_cast<int>(std::lround(img.height * side)));
    int crop_w = std::max(1, static_cast<int>(std::lround(img.width * side)));
    crop_h = std::min(crop_h, img.height);
    crop_w = std::min(crop_w, img.width);
    int top = static_cast<int>(rng.uniform_index(img.height - crop_h + 1));
    int left = static_cast<int>(rng.uniform_index(img.width - crop_w + 1));
    if (crop_h != img.height || crop_w != img.width) {
      Image crop(crop_h, crop_w, img.channels);
      for (int r = 0; r < crop_h; ++r)
        for (int c = 0; c < crop_w; ++c)
          for (int ch = 0; ch < img.channels; ++ch)
            crop.at(r, c, ch) = out.at(top + r, left + c, ch);
      out = resize_bilinear(crop, img.height, img.width);
    }
  }

  if (rng.bernoulli(cfg.flip_prob)) {
    Image flipped = out;
    for (int r = 0; r < out.height; ++r)
      for (int c = 0; c < out.width; ++c)
        for (int ch = 0; ch < out.channels; ++ch)
          flipped.at(r, c, ch) = out.at(r, out.width - 1 - c, ch);
    out = std::move(flipped);
  }

  if (cfg.max_rotation_deg > 0.0f) {
    double angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    if (angle != 0.0) out = rotate_bilinear(out, angle, 1.0f);
  }

  if (cfg.jitter_strength > 0.0f) {
    float js = cfg.jitter_strength;
    float brightness = static_cast<float>(rng.uniform(1.0 - js, 1.0 + js));
    float contrast = static_cast<float>(rng.uniform(1.0 - js, 1.0 + js));
    float saturation = static_cast<float>(rng.uniform(1.0 - js, 1.0 + js));

    for (float& v : out.data) v *= brightness;

    double mean_gray = 0.0;
    for (int r = 0; r < out.height; ++r)
      for (int c = 0; c < out.width; ++c) mean_gray += luma(out, r, c);
    mean_gray /= static_cast<double>(out.pixel_count());
    for (float& v : out.data)
      v = static_cast<float>((v - mean_gray) * contrast + mean_gray);

    for (int r = 0; r < out.height; ++r) {
      for (int c = 0; c < out.width; ++c) {
        float gray = luma(out, r, c);
        for (int ch = 0; ch < 3 && ch < out.channels; ++ch) {
          out.at(r, c, ch) = gray + (out.at(r, c, ch) - gray) * saturation;
        }
      }
    }
    clamp_unit(out);
  }

  return out;
}

Image normalize(const Image& img, const NormStats& stats) {
  if (img.channels != 3) throw ValidationError("normalize expects a 3-channel image");
  for (float s : stats.std) {
    if (s <= 0.0f) throw ValidationError("normalize: std must be positive per channel");
  }
  Image out = img;
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c)
      for (int ch = 0; ch < 3; ++ch)
        out.at(r, c, ch) = (out.at(r, c, ch) - stats.mean[ch]) / stats.std[ch];
  return out;
}

Image denormalize(const Image& img, const NormStats& stats) {
  if (img.channels != 3) throw ValidationError("denormalize expects a 3-channel image");
  Image out = img;
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c)
      for (int ch = 0; ch < 3; ++ch)
        out.at(r, c, ch) = out.at(r, c, ch) * stats.std[ch] + stats.mean[ch];
  return out;
}

Image prepare_train(const Image& img, const PreprocessConfig& pre, const AugmentationConfig& aug,
                    const NormStats& stats, Rng& rng) {
  return normalize(augment(apply_strategy(img, pre), aug, rng), stats);
}

Image prepare_eval(const Image& img, const PreprocessConfig& pre, const NormStats& stats) {
  return normalize(apply_strategy(img, pre), stats);
}

}  // namespace amfcls
