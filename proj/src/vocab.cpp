#include "meld/vocab.hpp"

#include <string>

namespace meld {

UnifiedVocab make_unified_vocab(int v_text, int k_latent) {
  if (v_text <= 0 || k_latent <= 0) throw ConfigError("vocabulary sizes must be positive");
  UnifiedVocab v;
  v.v_text = v_text;
  v.k_latent = k_latent;
  v.id_tts = v_text + k_latent;
  v.id_stt = v.id_tts + 1;
  v.id_eos = v.id_tts + 2;
  v.total = v_text + k_latent + 3;
  return v;
}

int UnifiedVocab::latent_id(int k) const {
  if (k < 0 || k >= k_latent) throw RangeError("latent index out of range: " + std::to_string(k));
  return v_text + k;
}

int UnifiedVocab::latent_index(int id) const {
  if (!is_latent(id)) throw RangeError("id is not a latent code: " + std::to_string(id));
  return id - v_text;
}

bool UnifiedVocab::is_target_for(Mode mode, int id) const {
  if (id == id_eos) return true;
  return mode == Mode::kTts ? is_latent(id) : is_text(id);
}

void UnifiedVocab::validate_ids(std::span<const int> ids) const {
  for (int id : ids) {
    if (!is_valid(id)) throw RangeError("token id out of range: " + std::to_string(id));
  }
}

nlohmann::json UnifiedVocab::to_json() const {
  return nlohmann::json{{"v_text", v_text}, {"k_latent", k_latent}, {"id_tts", id_tts},
                        {"id_stt", id_stt}, {"id_eos", id_eos},     {"total", total}};
}

UnifiedVocab UnifiedVocab::from_json(const nlohmann::json& j) {
  auto v = make_unified_vocab(j.at("v_text").get<int>(), j.at("k_latent").get<int>());
  if (j.contains("total") && j.at("total").get<int>() != v.total) throw FormatError("vocab total inconsistent with layout");
  return v;
}

}  // namespace meld
