#include "amfcls/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>

namespace amfcls {

Image load_image(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (mat.empty()) throw IoError("cannot decode image '" + path.string() + "'");

  Image img(mat.rows, mat.cols, 3);
  for (int r = 0; r < mat.rows; ++r) {
    const cv::Vec3b* row = mat.ptr<cv::Vec3b>(r);
    for (int c = 0; c < mat.cols; ++c) {
      // OpenCV decodes BGR.
      img.at(r, c, 0) = row[c][2] / 255.0f;
      img.at(r, c, 1) = row[c][1] / 255.0f;
      img.at(r, c, 2) = row[c][0] / 255.0f;
    }
  }
  return img;
}

void save_image(const Image& img, const std::filesystem::path& path) {
  if (img.empty() || img.channels != 3) {
    throw ValidationError("save_image expects a non-empty 3-channel image");
  }
  cv::Mat mat(img.height, img.width, CV_8UC3);
  for (int r = 0; r < img.height; ++r) {
    cv::Vec3b* row = mat.ptr<cv::Vec3b>(r);
    for (int c = 0; c < img.width; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        float v = std::clamp(img.at(r, c, ch), 0.0f, 1.0f);
        row[c][2 - ch] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  if (!cv::imwrite(path.string(), mat)) {
    throw IoError("cannot write image '" + path.string() + "'");
  }
}

}  // namespace amfcls
