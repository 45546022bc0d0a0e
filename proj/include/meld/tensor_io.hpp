#pragma once

#include "meld/common.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace meld::io {

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct TensorFile {
  std::vector<NamedTensor> tensors;
  nlohmann::json meta;

  const NamedTensor* find(const std::string& name) const;
};

// Layout: "MELT", u64 manifest length, JSON manifest
// {"meta": ..., "tensors": [{"name", "shape", "dtype": "f64", "offset"}]},
// then the little-endian f64 payload. Offsets are relative to the payload.
std::string encode_tensors(const std::vector<NamedTensor>& tensors, const nlohmann::json& meta);
TensorFile decode_tensors(const std::string& bytes);

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                  const nlohmann::json& meta);
TensorFile load_tensors(const std::filesystem::path& path);

}  // namespace meld::io
