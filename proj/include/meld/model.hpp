#pragma once

#include "meld/autodiff.hpp"
#include "meld/codebook.hpp"
#include "meld/optim.hpp"
#include "meld/tensor_io.hpp"
#include "meld/vocab.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace meld::model {

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_ffn = 256;
  double dropout = 0.1;
  int d_mel_in = 80;
  UnifiedVocab vocab;
  double gmel_dropout = 0.5;
  int max_seq_len = 512;
  int postnet_filters = 64;
  int postnet_width = 5;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  /// Hex FNV-1a hash of the canonical JSON form.
  std::string hash() const;
};

/// Input position marker for a mel frame in SequenceItem::input_ids.
inline constexpr int kFrameInput = -1;

/// One assembled training or inference sequence. Batches are spans of items
/// that are run ragged (concatenated along rows), so there is no padding.
struct SequenceItem {
  Mode mode = Mode::kTts;
  /// Token id per position, or kFrameInput where the input is a mel frame.
  std::vector<int> input_ids;
  /// One row per kFrameInput position, in order.
  Matrix frames;
  /// Hard target id per position, -1 where the position has none.
  /// TTS: only <EOS> at the last frame. STT: text ids and <EOS>.
  std::vector<int> hard_targets;
  /// TTS: position whose output predicts latent z_t, t = 0..T-1.
  std::vector<int> latent_positions;
  /// TTS: frames the reconstruction path must reproduce (T x d).
  Matrix target_frames;
  /// TTS: soft-VQ posterior for each target frame (T x K).
  Matrix soft_targets;
  /// Identifier carried through for diagnostics.
  std::string utt_id;

  int length() const { return static_cast<int>(input_ids.size()); }
  int num_frames() const { return static_cast<int>(frames.rows()); }
  int num_targets() const;
};

struct ForwardOptions {
  /// Trunk dropout and batch statistics in the postnet.
  bool train = false;
  /// Dropout rate inside g_Mel and whether it fires. Test-time dropout sets
  /// active = true with train = false.
  double gmel_rate = 0.0;
  bool gmel_active = false;
};

struct ForwardResult {
  ad::Var hidden;  // N x d_model, output of the final layer norm
  ad::Var logits;  // N x |V|
  std::vector<int> offsets;  // first row of each item
};

class MeldModel {
 public:
  MeldModel(ModelConfig cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }

  /// Three Linear -> GELU -> Dropout layers, d_mel_in -> d_model.
  ad::Var g_mel(ad::Graph& g, ad::Var frames, const ForwardOptions& opt);

  /// Token and frame embeddings plus sinusoidal positions, rows concatenated
  /// over items. `frames_override` (all items' frames stacked) replaces the
  /// item frames when valid; used to differentiate w.r.t. the inputs.
  ad::Var embed(ad::Graph& g, std::span<const SequenceItem> items, const ForwardOptions& opt,
                ad::Var frames_override = {});

  ForwardResult forward(ad::Graph& g, std::span<const SequenceItem> items, const ForwardOptions& opt,
                        ad::Var frames_override = {});

  /// x_hat = Linear(u) + MLP(u) with u = h + g_Mel(c). `codewords` holds the
  /// codeword of each row's latent (zero rows for the "no latent" ablation).
  ad::Var specnet(ad::Graph& g, ad::Var h, ad::Var codewords, const ForwardOptions& opt);

  /// Residual conv(x_hat) of the postnet; `segments` are sequence lengths.
  ad::Var postnet(ad::Graph& g, ad::Var x_hat, std::span<const int> segments, bool train);

  std::vector<io::NamedTensor> export_parameters() const;
  /// Replaces every parameter value; names and shapes must match exactly.
  void import_parameters(const std::vector<io::NamedTensor>& tensors);

 private:
  ad::Var linear(ad::Graph& g, ad::Var x, const std::string& prefix);
  ad::Var block(ad::Graph& g, ad::Var x, int layer, std::span<const int> lengths, bool train);
  int embedding_row(int id) const;

  ModelConfig cfg_;
  ad::ParameterStore params_;
};

/// Sinusoidal positional table (rows = positions).
Matrix positional_encoding(int length, int d_model);

struct Checkpoint {
  ModelConfig config;
  std::vector<io::NamedTensor> params;
  std::vector<io::NamedTensor> optimizer;
  std::int64_t optimizer_steps = 0;
  nlohmann::json meta;
};

/// Writes parameters (and optional optimizer state) with the model config and
/// its hash. `meta` is stored alongside under "meta".
void save_checkpoint(const std::filesystem::path& path, const MeldModel& model, const optim::Adam* opt,
                     const nlohmann::json& meta);
/// Reads a checkpoint; throws FormatError if the stored hash does not match
/// the stored config or, when given, `expected_hash`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_hash = {});
MeldModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace meld::model
