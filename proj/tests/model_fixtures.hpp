#pragma once

#include "meld/codebook.hpp"
#include "meld/corpus.hpp"
#include "meld/model.hpp"
#include "test_util.hpp"

namespace meld::testing {

inline model::ModelConfig tiny_config(int d_mel = 6, int v_text = 10, int k = 4) {
  model::ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_ffn = 32;
  c.d_mel_in = d_mel;
  c.vocab = make_unified_vocab(v_text, k);
  c.max_seq_len = 64;
  c.postnet_filters = 8;
  return c;
}

inline vq::Codebook random_codebook(Rng& rng, int k, int d) {
  vq::Codebook cb;
  cb.codewords = random_matrix(rng, k, d);
  cb.frozen = true;
  return cb;
}

inline std::vector<int> random_tokens(Rng& rng, int n, int v_text) {
  std::vector<int> t;
  for (int i = 0; i < n; ++i) t.push_back(static_cast<int>(rng.uniform_int(0, v_text - 1)));
  return t;
}

/// One TTS and one STT item with random content.
inline std::vector<model::SequenceItem> random_items(Rng& rng, const model::ModelConfig& c, const vq::Codebook& cb,
                                                     int frames_a = 5, int frames_b = 4) {
  std::vector<model::SequenceItem> items;
  items.push_back(corpus::build_tts_sequence(c.vocab, random_tokens(rng, 3, c.vocab.v_text),
                                             random_matrix(rng, frames_a, c.d_mel_in), cb));
  items.push_back(corpus::build_stt_sequence(c.vocab, random_matrix(rng, frames_b, c.d_mel_in),
                                             random_tokens(rng, 2, c.vocab.v_text)));
  return items;
}

}  // namespace meld::testing
