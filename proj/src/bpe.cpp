#include "meld/bpe.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <map>
#include <unordered_map>

namespace meld::text {

namespace {

// GPT-2 byte <-> code point table: printable Latin-1 bytes map to themselves,
// the rest are shifted above U+0100.
const std::array<char32_t, 256>& byte_table() {
  static const std::array<char32_t, 256> table = [] {
    std::array<char32_t, 256> t{};
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[static_cast<std::size_t>(b)] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[static_cast<std::size_t>(b)] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[static_cast<std::size_t>(b)] = true;
    char32_t next = 256;
    for (int b = 0; b < 256; ++b) {
      t[static_cast<std::size_t>(b)] = direct[static_cast<std::size_t>(b)] ? static_cast<char32_t>(b) : next++;
    }
    return t;
  }();
  return table;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

}  // namespace

std::string bytes_to_printable(std::string_view bytes) {
  std::string out;
  for (unsigned char c : bytes) append_utf8(out, byte_table()[c]);
  return out;
}

std::string printable_to_bytes(std::string_view printable) {
  static const std::unordered_map<char32_t, unsigned char> inverse = [] {
    std::unordered_map<char32_t, unsigned char> m;
    for (int b = 0; b < 256; ++b) m[byte_table()[static_cast<std::size_t>(b)]] = static_cast<unsigned char>(b);
    return m;
  }();
  std::string out;
  std::size_t i = 0;
  while (i < printable.size()) {
    const auto c = static_cast<unsigned char>(printable[i]);
    char32_t cp;
    std::size_t len;
    if (c < 0x80) {
      cp = c;
      len = 1;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      if (i + len > printable.size()) throw FormatError("truncated utf-8 in bpe token");
      cp = static_cast<char32_t>(((c & 0x1F) << 6) | (static_cast<unsigned char>(printable[i + 1]) & 0x3F));
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      if (i + len > printable.size()) throw FormatError("truncated utf-8 in bpe token");
      cp = static_cast<char32_t>(((c & 0x0F) << 12) | ((static_cast<unsigned char>(printable[i + 1]) & 0x3F) << 6) |
                                 (static_cast<unsigned char>(printable[i + 2]) & 0x3F));
    } else {
      throw FormatError("unexpected utf-8 sequence in bpe token");
    }
    const auto it = inverse.find(cp);
    if (it == inverse.end()) throw FormatError("code point outside the byte table in bpe token");
    out.push_back(static_cast<char>(it->second));
    i += len;
  }
  return out;
}

BpeModel::BpeModel() {
  tokens_.reserve(kByteAlphabet);
  for (int b = 0; b < kByteAlphabet; ++b) {
    tokens_.emplace_back(1, static_cast<char>(b));
    index_.emplace(tokens_.back(), b);
  }
}

const std::string& BpeModel::token(int id) const {
  if (id < 0 || id >= vocab_size()) throw RangeError("bpe id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

int BpeModel::id_of(std::string_view tok) const {
  const auto it = index_.find(std::string(tok));
  return it == index_.end() ? -1 : it->second;
}

int BpeModel::add_merge(int left, int right) {
  std::string merged = token(left) + token(right);
  if (index_.contains(merged)) throw ConfigError("bpe merge duplicates an existing token");
  merges_.emplace_back(left, right);
  index_.emplace(merged, vocab_size());
  tokens_.push_back(std::move(merged));
  return vocab_size() - 1;
}

std::vector<int> BpeModel::encode(std::string_view text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(c);
  if (merges_.empty() || ids.size() < 2) return ids;

  std::map<std::pair<int, int>, int> rank;
  for (std::size_t i = 0; i < merges_.size(); ++i) rank.emplace(merges_[i], static_cast<int>(i));

  while (ids.size() >= 2) {
    int best = std::numeric_limits<int>::max();
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      const auto it = rank.find({ids[i], ids[i + 1]});
      if (it != rank.end()) best = std::min(best, it->second);
    }
    if (best == std::numeric_limits<int>::max()) break;
    const auto pair = merges_[static_cast<std::size_t>(best)];
    const int merged = kByteAlphabet + best;
    std::vector<int> next;
    next.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size();) {
      if (i + 1 < ids.size() && ids[i] == pair.first && ids[i + 1] == pair.second) {
        next.push_back(merged);
        i += 2;
      } else {
        next.push_back(ids[i]);
        ++i;
      }
    }
    ids = std::move(next);
  }
  return ids;
}

std::string BpeModel::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) out += token(id);
  return out;
}

nlohmann::json BpeModel::to_json() const {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [a, b] : merges_) {
    merges.push_back(bytes_to_printable(token(a)) + " " + bytes_to_printable(token(b)));
  }
  nlohmann::json vocab = nlohmann::json::object();
  for (int i = 0; i < vocab_size(); ++i) vocab[bytes_to_printable(token(i))] = i;
  return nlohmann::json{{"type", "byte_level_bpe"}, {"merges", merges}, {"vocab", vocab}};
}

BpeModel BpeModel::from_json(const nlohmann::json& j) {
  BpeModel model;
  for (const auto& entry : j.at("merges")) {
    const auto s = entry.get<std::string>();
    const auto space = s.find(' ');
    if (space == std::string::npos) throw FormatError("bpe merge entry without separator: " + s);
    const int left = model.id_of(printable_to_bytes(s.substr(0, space)));
    const int right = model.id_of(printable_to_bytes(s.substr(space + 1)));
    if (left < 0 || right < 0) throw FormatError("bpe merge references unknown token: " + s);
    model.add_merge(left, right);
  }
  if (j.contains("vocab")) {
    const auto& vocab = j.at("vocab");
    if (static_cast<int>(vocab.size()) != model.vocab_size()) throw FormatError("bpe vocab size disagrees with merges");
    for (const auto& [tok, id] : vocab.items()) {
      if (model.id_of(printable_to_bytes(tok)) != id.get<int>()) throw FormatError("bpe vocab id mismatch for " + tok);
    }
  }
  return model;
}

BpeModel train_bpe(std::span<const std::string> corpus, int target_vocab) {
  if (corpus.empty()) throw EmptyInputError("train_bpe: empty corpus");
  if (target_vocab < kByteAlphabet) {
    throw ConfigError("train_bpe: target vocabulary smaller than the 256-byte base alphabet");
  }
  BpeModel model;
  std::vector<std::vector<int>> lines;
  lines.reserve(corpus.size());
  for (const auto& line : corpus) {
    std::vector<int> ids;
    for (unsigned char c : line) ids.push_back(c);
    lines.push_back(std::move(ids));
  }

  while (model.vocab_size() < target_vocab) {
    std::map<std::pair<int, int>, long> counts;
    for (const auto& ids : lines) {
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) ++counts[{ids[i], ids[i + 1]}];
    }
    const std::pair<int, int>* best = nullptr;
    long best_count = 0;
    for (const auto& [pair, count] : counts) {
      // A pair whose concatenation is already a token cannot become a new id.
      if (model.id_of(model.token(pair.first) + model.token(pair.second)) >= 0) continue;
      if (count > best_count) {
        best = &pair;
        best_count = count;
      } else if (count == best_count && best != nullptr) {
        const auto key = std::tie(model.token(pair.first), model.token(pair.second));
        const auto cur = std::tie(model.token(best->first), model.token(best->second));
        if (key < cur) best = &pair;
      }
    }
    if (best == nullptr || best_count < 2) break;
    const auto pair = *best;
    const int merged = model.add_merge(pair.first, pair.second);
    for (auto& ids : lines) {
      std::vector<int> next;
      next.reserve(ids.size());
      for (std::size_t i = 0; i < ids.size();) {
        if (i + 1 < ids.size() && ids[i] == pair.first && ids[i + 1] == pair.second) {
          next.push_back(merged);
          i += 2;
        } else {
          next.push_back(ids[i]);
          ++i;
        }
      }
      ids = std::move(next);
    }
  }
  return model;
}

}  // namespace meld::text
