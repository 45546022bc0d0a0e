#include "meld/tensor_io.hpp"

#include "meld/feature_io.hpp"

namespace meld::io {

namespace {
constexpr char kMagic[4] = {'M', 'E', 'L', 'T'};
}

const NamedTensor* TensorFile::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string encode_tensors(const std::vector<NamedTensor>& tensors, const nlohmann::json& meta) {
  nlohmann::json manifest{{"meta", meta}, {"tensors", nlohmann::json::array()}};
  std::string payload;
  for (const auto& t : tensors) {
    manifest["tensors"].push_back({{"name", t.name},
                                   {"shape", {t.value.rows(), t.value.cols()}},
                                   {"dtype", "f64"},
                                   {"offset", payload.size()}});
    for (Eigen::Index i = 0; i < t.value.size(); ++i) append_f64(payload, t.value.data()[i]);
  }
  const std::string m = manifest.dump();
  std::string out(kMagic, 4);
  append_u64(out, m.size());
  out += m;
  out += payload;
  return out;
}

TensorFile decode_tensors(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, kMagic, 4) != 0) throw FormatError("not a tensor container");
  const std::uint64_t mlen = load_u64(bytes, 4);
  if (12 + mlen > bytes.size()) throw FormatError("truncated tensor manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(12, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad tensor manifest: ") + e.what());
  }
  const std::size_t base = 12 + mlen;
  TensorFile file;
  file.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    if (entry.at("dtype").get<std::string>() != "f64") throw FormatError("unsupported dtype");
    const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
    const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
    std::size_t off = base + entry.at("offset").get<std::size_t>();
    if (off + static_cast<std::size_t>(rows * cols) * 8 > bytes.size()) throw FormatError("truncated tensor payload");
    NamedTensor t{entry.at("name").get<std::string>(), Matrix(rows, cols)};
    for (Eigen::Index i = 0; i < t.value.size(); ++i, off += 8) t.value.data()[i] = load_f64(bytes, off);
    file.tensors.push_back(std::move(t));
  }
  return file;
}

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                  const nlohmann::json& meta) {
  write_file(path, encode_tensors(tensors, meta));
}

TensorFile load_tensors(const std::filesystem::path& path) { return decode_tensors(read_file(path)); }

}  // namespace meld::io
