#pragma once

#include "amfcls/common.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace amfcls {

// Minimal reader/writer for the safetensors container (F32 tensors only):
// u64 little-endian header size, JSON header, raw tensor bytes.
struct TensorData {
  std::vector<int64_t> shape;
  std::vector<float> values;

  int64_t element_count() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
};

struct SafetensorsFile {
  std::map<std::string, TensorData> tensors;
  std::map<std::string, std::string> metadata;
};

// Keys are laid out in sorted order, so identical content produces an
// identical file byte for byte.
void save_safetensors(const std::filesystem::path& path,
                      const std::map<std::string, TensorData>& tensors,
                      const std::map<std::string, std::string>& metadata);

SafetensorsFile load_safetensors(const std::filesystem::path& path);

}  // namespace amfcls
