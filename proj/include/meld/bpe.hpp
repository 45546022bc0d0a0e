#pragma once

#include "meld/common.hpp"

#include "json.hpp"

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace meld::text {

inline constexpr int kByteAlphabet = 256;

/// Byte-level BPE. Ids 0..255 are raw bytes; merge i produces id 256 + i.
class BpeModel {
 public:
  BpeModel();

  int vocab_size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::pair<int, int>>& merges() const { return merges_; }
  const std::string& token(int id) const;
  /// -1 when the byte string is not a token.
  int id_of(std::string_view token) const;

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  /// Adds a merge of two existing ids; returns the new id. Token byte
  /// strings stay unique, so a merge reproducing an existing token throws.
  int add_merge(int left, int right);

  nlohmann::json to_json() const;
  static BpeModel from_json(const nlohmann::json& j);

 private:
  std::vector<std::pair<int, int>> merges_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Greedy most-frequent-pair merging over the bytes of each line until
/// `target_vocab` tokens exist or no pair occurs at least twice. Ties go to
/// the lexicographically smallest (left, right) token byte strings.
BpeModel train_bpe(std::span<const std::string> corpus, int target_vocab);

/// GPT-2 style printable stand-in for raw bytes, used in the JSON format.
std::string bytes_to_printable(std::string_view bytes);
std::string printable_to_bytes(std::string_view printable);

}  // namespace meld::text
