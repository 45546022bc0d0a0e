#pragma once

#include "meld/common.hpp"

#include "json.hpp"

#include <span>
#include <vector>

namespace meld {

enum class Mode { kTts, kStt };

/// Unified id space: [0, v_text) text, [v_text, v_text + k_latent) latent
/// codes, then <TTS>, <STT>, <EOS>.
struct UnifiedVocab {
  int v_text = 0;
  int k_latent = 0;
  int id_tts = 0;
  int id_stt = 0;
  int id_eos = 0;
  int total = 0;

  int latent_id(int k) const;
  int latent_index(int id) const;
  bool is_text(int id) const { return id >= 0 && id < v_text; }
  bool is_latent(int id) const { return id >= v_text && id < v_text + k_latent; }
  bool is_special(int id) const { return id >= v_text + k_latent && id < total; }
  bool is_valid(int id) const { return id >= 0 && id < total; }
  /// Ids that may be emitted as targets in a mode: latents or text, plus <EOS>.
  bool is_target_for(Mode mode, int id) const;

  void validate_ids(std::span<const int> ids) const;

  nlohmann::json to_json() const;
  static UnifiedVocab from_json(const nlohmann::json& j);

  bool operator==(const UnifiedVocab&) const = default;
};

UnifiedVocab make_unified_vocab(int v_text, int k_latent);

}  // namespace meld
