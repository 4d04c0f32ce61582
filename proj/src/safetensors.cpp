#include "amfcls/safetensors.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace amfcls {

namespace {
using nlohmann::json;

void write_u64_le(std::ofstream& out, uint64_t value) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

uint64_t read_u64_le(std::ifstream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw ValidationError("safetensors: truncated header length");
  uint64_t value = 0;
  for (int i = 0; i < 8; ++i) value |= static_cast<uint64_t>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void save_safetensors(const std::filesystem::path& path,
                      const std::map<std::string, TensorData>& tensors,
                      const std::map<std::string, std::string>& metadata) {
  json header = json::object();
  if (!metadata.empty()) header["__metadata__"] = metadata;

  uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    if (tensor.element_count() != static_cast<int64_t>(tensor.values.size())) {
      throw ValidationError("safetensors: tensor '" + name + "' shape does not match data size");
    }
    uint64_t bytes = tensor.values.size() * sizeof(float);
    header[name] = {{"dtype", "F32"},
                    {"shape", tensor.shape},
                    {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }

  std::string header_text = header.dump();
  while (header_text.size() % 8 != 0) header_text.push_back(' ');

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  write_u64_le(out, header_text.size());
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& [name, tensor] : tensors) {
    out.write(reinterpret_cast<const char*>(tensor.values.data()),
              static_cast<std::streamsize>(tensor.values.size() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

SafetensorsFile load_safetensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");

  uint64_t header_size = read_u64_le(in);
  if (header_size == 0 || header_size > (1ULL << 30)) {
    throw ValidationError("safetensors: implausible header size in '" + path.string() + "'");
  }
  std::string header_text(header_size, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_size));
  if (!in) throw ValidationError("safetensors: truncated header in '" + path.string() + "'");

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw ValidationError("safetensors: bad JSON header in '" + path.string() + "': " + e.what());
  }

  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  SafetensorsFile file;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") {
      for (const auto& [k, v] : entry.items()) file.metadata[k] = v.get<std::string>();
      continue;
    }
    std::string dtype = entry.at("dtype").get<std::string>();
    if (dtype != "F32") {
      throw ValidationError("safetensors: tensor '" + name + "' has dtype " + dtype +
                            "; only F32 is supported");
    }
    TensorData tensor;
    tensor.shape = entry.at("shape").get<std::vector<int64_t>>();
    auto offsets = entry.at("data_offsets").get<std::vector<uint64_t>>();
    if (offsets.size() != 2 || offsets[1] < offsets[0] || offsets[1] > data.size()) {
      throw ValidationError("safetensors: bad data_offsets for tensor '" + name + "'");
    }
    uint64_t bytes = offsets[1] - offsets[0];
    if (bytes != static_cast<uint64_t>(tensor.element_count()) * sizeof(float)) {
      throw ValidationError("safetensors: tensor '" + name + "' size does not match its shape");
    }
    tensor.values.resize(bytes / sizeof(float));
    std::memcpy(tensor.values.data(), data.data() + offsets[0], bytes);
    file.tensors.emplace(name, std::move(tensor));
  }
  return file;
}

}  // namespace amfcls
