#pragma once

#include "amfcls/common.hpp"

#include <filesystem>
#include <vector>

namespace amfcls {

// Dense float image, HWC row-major, values in [0,1] for pixel data.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int r, int c, int ch) {
    return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
  float at(int r, int c, int ch) const {
    return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  bool empty() const { return data.empty(); }
};

// Decodes PNG/TIFF/JPEG to float RGB in [0,1].
Image load_image(const std::filesystem::path& path);

// Encodes to 8-bit by the file extension; values clamped to [0,1].
void save_image(const Image& img, const std::filesystem::path& path);

}  // namespace amfcls
