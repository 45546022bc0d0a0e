#include "meld/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace meld::model {

using ad::Graph;
using ad::Var;

// ---- config -------------------------------------------------------------------

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("model.n_layers must be >= 1");
  if (n_heads < 1) throw ConfigError("model.n_heads must be >= 1");
  if (d_model < 1 || d_model % n_heads != 0) {
    throw ConfigError("model.d_model (" + std::to_string(d_model) + ") must be divisible by model.n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  if (d_ffn < 1) throw ConfigError("model.d_ffn must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
  if (!(gmel_dropout >= 0.0 && gmel_dropout < 1.0)) throw ConfigError("model.gmel_dropout must be in [0, 1)");
  if (d_mel_in < 1) throw ConfigError("model.d_mel_in must be >= 1");
  if (max_seq_len < 2) throw ConfigError("model.max_seq_len must be >= 2");
  if (postnet_filters < 1) throw ConfigError("model.postnet_filters must be >= 1");
  if (postnet_width < 1 || postnet_width % 2 == 0) throw ConfigError("model.postnet_width must be odd");
  if (vocab.total != vocab.v_text + vocab.k_latent + 3 || vocab.v_text < 1 || vocab.k_latent < 1) {
    throw ConfigError("model vocabulary layout is invalid");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return nlohmann::json{{"n_layers", n_layers},
                        {"n_heads", n_heads},
                        {"d_model", d_model},
                        {"d_ffn", d_ffn},
                        {"dropout", dropout},
                        {"d_mel_in", d_mel_in},
                        {"vocab", vocab.to_json()},
                        {"gmel_dropout", gmel_dropout},
                        {"max_seq_len", max_seq_len},
                        {"postnet_filters", postnet_filters},
                        {"postnet_width", postnet_width}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ffn = j.at("d_ffn").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.d_mel_in = j.at("d_mel_in").get<int>();
  c.vocab = UnifiedVocab::from_json(j.at("vocab"));
  c.gmel_dropout = j.at("gmel_dropout").get<double>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.postnet_filters = j.at("postnet_filters").get<int>();
  c.postnet_width = j.at("postnet_width").get<int>();
  c.validate();
  return c;
}

std::string ModelConfig::hash() const { return hex64(fnv1a(to_json().dump())); }

int SequenceItem::num_targets() const {
  const auto hard = std::count_if(hard_targets.begin(), hard_targets.end(), [](int t) { return t >= 0; });
  return static_cast<int>(hard) + static_cast<int>(latent_positions.size());
}

// ---- construction -------------------------------------------------------------

namespace {

Matrix random_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols, double std) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * std;
  return m;
}

}  // namespace

MeldModel::MeldModel(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(init_seed);
  const int d = cfg_.d_model;
  auto add_linear = [&](const std::string& prefix, int in, int out) {
    params_.add(prefix + ".w", random_normal(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in))));
    params_.add(prefix + ".b", Matrix::Zero(1, out));
  };
  auto add_norm = [&](const std::string& prefix, int width) {
    params_.add(prefix + ".g", Matrix::Ones(1, width));
    params_.add(prefix + ".b", Matrix::Zero(1, width));
  };

  // Text ids and the three specials share one table; latent ids are never
  // embedded as tokens (TTS inputs are frames).
  params_.add("g_text", random_normal(rng, cfg_.vocab.v_text + 3, d, 0.1));
  add_linear("gmel.0", cfg_.d_mel_in, d);
  add_linear("gmel.1", d, d);
  add_linear("gmel.2", d, d);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l);
    add_norm(p + ".ln1", d);
    add_linear(p + ".q", d, d);
    add_linear(p + ".k", d, d);
    add_linear(p + ".v", d, d);
    add_linear(p + ".o", d, d);
    add_norm(p + ".ln2", d);
    add_linear(p + ".ff1", d, cfg_.d_ffn);
    add_linear(p + ".ff2", cfg_.d_ffn, d);
  }
  add_norm("final_ln", d);
  add_linear("head", d, cfg_.vocab.total);
  add_linear("spec.lin", d, cfg_.d_mel_in);
  add_linear("spec.mlp.0", d, d);
  add_linear("spec.mlp.1", d, d);
  add_linear("spec.mlp.2", d, cfg_.d_mel_in);
  const int w = cfg_.postnet_width;
  const int f = cfg_.postnet_filters;
  const int widths[3][2] = {{cfg_.d_mel_in, f}, {f, f}, {f, cfg_.d_mel_in}};
  for (int l = 0; l < 3; ++l) {
    const std::string p = "post." + std::to_string(l);
    const int cin = widths[l][0];
    const int cout = widths[l][1];
    params_.add(p + ".w", random_normal(rng, w * cin, cout, 1.0 / std::sqrt(static_cast<double>(w * cin))));
    params_.add(p + ".b", Matrix::Zero(1, cout));
    params_.add(p + ".bn.gamma", Matrix::Ones(1, cout));
    params_.add(p + ".bn.beta", Matrix::Zero(1, cout));
    params_.add(p + ".bn.mean", Matrix::Zero(1, cout), false);
    params_.add(p + ".bn.var", Matrix::Ones(1, cout), false);
  }
}

Matrix positional_encoding(int length, int d_model) {
  Matrix pe(length, d_model);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < d_model; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / d_model);
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return pe;
}

// ---- forward pieces -----------------------------------------------------------

Var MeldModel::linear(Graph& g, Var x, const std::string& prefix) {
  return ad::add(ad::matmul(x, g.param(params_.at(prefix + ".w"))), g.param(params_.at(prefix + ".b")));
}

int MeldModel::embedding_row(int id) const {
  const auto& v = cfg_.vocab;
  if (v.is_text(id)) return id;
  if (v.is_special(id)) return id - v.k_latent;
  throw RangeError("token id " + std::to_string(id) + " has no input embedding");
}

Var MeldModel::g_mel(Graph& g, Var frames, const ForwardOptions& opt) {
  if (frames.cols() != cfg_.d_mel_in) {
    throw ShapeError("g_Mel expects frames of width " + std::to_string(cfg_.d_mel_in) + ", got " +
                     std::to_string(frames.cols()));
  }
  Var x = frames;
  for (int l = 0; l < 3; ++l) {
    x = ad::gelu(linear(g, x, "gmel." + std::to_string(l)));
    x = ad::dropout(x, opt.gmel_rate, opt.gmel_active);
  }
  return x;
}

Var MeldModel::embed(Graph& g, std::span<const SequenceItem> items, const ForwardOptions& opt, Var frames_override) {
  std::vector<int> token_rows;
  int n_frames = 0;
  int n_positions = 0;
  for (const auto& it : items) {
    if (it.length() > cfg_.max_seq_len) {
      throw RangeError("sequence length " + std::to_string(it.length()) + " exceeds max_seq_len " +
                       std::to_string(cfg_.max_seq_len));
    }
    int item_frames = 0;
    for (int id : it.input_ids) {
      if (id == kFrameInput) {
        ++item_frames;
      } else {
        token_rows.push_back(embedding_row(id));
      }
    }
    if (item_frames != it.num_frames()) throw ShapeError("frame rows do not match frame positions");
    if (item_frames > 0 && it.frames.cols() != cfg_.d_mel_in) {
      throw ShapeError("frame width " + std::to_string(it.frames.cols()) + " does not match d_mel_in " +
                       std::to_string(cfg_.d_mel_in));
    }
    n_frames += item_frames;
    n_positions += it.length();
  }
  const int d = cfg_.d_model;
  if (n_positions == 0) return g.constant(Matrix::Zero(0, d));

  // Gather order: all token rows first, then all frame rows.
  const int n_tokens = static_cast<int>(token_rows.size());
  std::vector<Var> parts;
  if (n_tokens > 0) parts.push_back(ad::embedding_lookup(g.param(params_.at("g_text")), token_rows));
  if (n_frames > 0) {
    Var frames = frames_override;
    if (!frames.valid()) {
      Matrix all(n_frames, cfg_.d_mel_in);
      int r = 0;
      for (const auto& it : items) {
        if (it.num_frames() == 0) continue;
        all.middleRows(r, it.num_frames()) = it.frames;
        r += it.num_frames();
      }
      frames = g.constant(std::move(all));
    } else if (frames.rows() != n_frames || frames.cols() != cfg_.d_mel_in) {
      throw ShapeError("frame override has the wrong shape");
    }
    parts.push_back(g_mel(g, frames, opt));
  }
  Var table = parts.size() == 1 ? parts[0] : ad::concat_rows(parts);

  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(n_positions));
  Matrix pe(n_positions, d);
  int tok = 0;
  int frm = n_tokens;
  int row = 0;
  int max_len = 0;
  for (const auto& it : items) max_len = std::max(max_len, it.length());
  const Matrix pe_table = positional_encoding(max_len, d);
  for (const auto& it : items) {
    for (int p = 0; p < it.length(); ++p) {
      order.push_back(it.input_ids[static_cast<std::size_t>(p)] == kFrameInput ? frm++ : tok++);
      pe.row(row++) = pe_table.row(p);
    }
  }
  return ad::add(ad::gather_rows(table, order), g.constant(std::move(pe)));
}

Var MeldModel::block(Graph& g, Var x, int layer, std::span<const int> lengths, bool train) {
  const std::string p = "block" + std::to_string(layer);
  const int d = cfg_.d_model;
  const int nh = cfg_.n_heads;
  const int dh = d / nh;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Var xn = ad::layer_norm(x, g.param(params_.at(p + ".ln1.g")), g.param(params_.at(p + ".ln1.b")));
  Var q = linear(g, xn, p + ".q");
  Var k = linear(g, xn, p + ".k");
  Var v = linear(g, xn, p + ".v");

  std::map<int, Matrix> masks;
  std::vector<Var> per_item;
  per_item.reserve(lengths.size());
  Eigen::Index start = 0;
  for (int len : lengths) {
    if (len == 0) continue;
    auto [mit, inserted] = masks.try_emplace(len);
    if (inserted) {
      mit->second = Matrix::Zero(len, len);
      for (int i = 0; i < len; ++i) {
        for (int j = i + 1; j < len; ++j) mit->second(i, j) = 1.0;
      }
    }
    Var qi = ad::slice_rows(q, start, len);
    Var ki = ad::slice_rows(k, start, len);
    Var vi = ad::slice_rows(v, start, len);
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(nh));
    for (int h = 0; h < nh; ++h) {
      Var qh = ad::slice_cols(qi, h * dh, dh);
      Var kh = ad::slice_cols(ki, h * dh, dh);
      Var vh = ad::slice_cols(vi, h * dh, dh);
      Var scores = ad::scale(ad::matmul_nt(qh, kh), inv_sqrt);
      scores = ad::masked_fill(scores, mit->second, -1e30);
      heads.push_back(ad::matmul(ad::softmax(scores, 1), vh));
    }
    per_item.push_back(nh == 1 ? heads[0] : ad::concat_cols(heads));
    start += len;
  }
  Var attn = per_item.size() == 1 ? per_item[0] : ad::concat_rows(per_item);
  attn = ad::dropout(linear(g, attn, p + ".o"), cfg_.dropout, train);
  x = ad::add(x, attn);

  Var xn2 = ad::layer_norm(x, g.param(params_.at(p + ".ln2.g")), g.param(params_.at(p + ".ln2.b")));
  Var ff = linear(g, ad::gelu(linear(g, xn2, p + ".ff1")), p + ".ff2");
  return ad::add(x, ad::dropout(ff, cfg_.dropout, train));
}

ForwardResult MeldModel::forward(Graph& g, std::span<const SequenceItem> items, const ForwardOptions& opt,
                                 Var frames_override) {
  ForwardResult out;
  std::vector<int> lengths;
  int off = 0;
  for (const auto& it : items) {
    out.offsets.push_back(off);
    lengths.push_back(it.length());
    off += it.length();
  }
  Var x = embed(g, items, opt, frames_override);
  if (off == 0) {
    out.hidden = x;
    out.logits = g.constant(Matrix::Zero(0, cfg_.vocab.total));
    return out;
  }
  x = ad::dropout(x, cfg_.dropout, opt.train);
  for (int l = 0; l < cfg_.n_layers; ++l) x = block(g, x, l, lengths, opt.train);
  out.hidden = ad::layer_norm(x, g.param(params_.at("final_ln.g")), g.param(params_.at("final_ln.b")));
  out.logits = linear(g, out.hidden, "head");
  return out;
}

Var MeldModel::specnet(Graph& g, Var h, Var codewords, const ForwardOptions& opt) {
  if (h.cols() != cfg_.d_model) throw ShapeError("specnet: hidden width mismatch");
  if (codewords.rows() != h.rows()) throw ShapeError("specnet: one codeword per hidden row required");
  Var u = ad::add(h, g_mel(g, codewords, opt));
  Var lin = linear(g, u, "spec.lin");
  Var r = ad::gelu(linear(g, u, "spec.mlp.0"));
  r = ad::gelu(linear(g, r, "spec.mlp.1"));
  r = linear(g, r, "spec.mlp.2");
  return ad::add(lin, r);
}

Var MeldModel::postnet(Graph& g, Var x_hat, std::span<const int> segments, bool train) {
  if (x_hat.cols() != cfg_.d_mel_in) throw ShapeError("postnet: frame width mismatch");
  Var x = x_hat;
  for (int l = 0; l < 3; ++l) {
    const std::string p = "post." + std::to_string(l);
    x = ad::conv1d(x, g.param(params_.at(p + ".w")), g.param(params_.at(p + ".b")), cfg_.postnet_width, segments);
    ad::BatchNormState st;
    st.running_mean = &params_.at(p + ".bn.mean").value;
    st.running_var = &params_.at(p + ".bn.var").value;
    x = ad::batch_norm_1d(x, g.param(params_.at(p + ".bn.gamma")), g.param(params_.at(p + ".bn.beta")), train, st);
    if (l < 2) x = ad::tanh(x);
  }
  return x;
}

// ---- persistence --------------------------------------------------------------

std::vector<io::NamedTensor> MeldModel::export_parameters() const {
  std::vector<io::NamedTensor> out;
  for (const auto* p : params_.all()) out.push_back({p->name, p->value});
  return out;
}

void MeldModel::import_parameters(const std::vector<io::NamedTensor>& tensors) {
  if (tensors.size() != params_.size()) throw FormatError("checkpoint parameter count does not match the model");
  for (const auto& t : tensors) {
    if (!params_.contains(t.name)) throw FormatError("checkpoint has unknown parameter " + t.name);
    auto& p = params_.at(t.name);
    if (p.value.rows() != t.value.rows() || p.value.cols() != t.value.cols()) {
      throw FormatError("checkpoint shape mismatch for " + t.name);
    }
    p.value = t.value;
    p.zero_grad();
  }
}

void save_checkpoint(const std::filesystem::path& path, const MeldModel& model, const optim::Adam* opt,
                     const nlohmann::json& meta) {
  std::vector<io::NamedTensor> tensors;
  for (auto& t : model.export_parameters()) tensors.push_back({"param/" + t.name, std::move(t.value)});
  std::int64_t steps = 0;
  if (opt != nullptr) {
    for (auto& t : opt->export_state()) tensors.push_back({"adam/" + t.name, std::move(t.value)});
    steps = opt->steps_taken();
  }
  const nlohmann::json header{{"model_config", model.config().to_json()},
                              {"config_hash", model.config().hash()},
                              {"optimizer_steps", steps},
                              {"meta", meta}};
  io::save_tensors(path, tensors, header);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_hash) {
  auto file = io::load_tensors(path);
  Checkpoint ck;
  try {
    ck.config = ModelConfig::from_json(file.meta.at("model_config"));
    const auto stored = file.meta.at("config_hash").get<std::string>();
    if (stored != ck.config.hash()) throw FormatError("checkpoint config hash does not match its config block");
    if (expected_hash && *expected_hash != stored) {
      throw FormatError("checkpoint config hash " + stored + " does not match expected " + *expected_hash);
    }
    ck.optimizer_steps = file.meta.value("optimizer_steps", std::int64_t{0});
    ck.meta = file.meta.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  for (auto& t : file.tensors) {
    if (t.name.rfind("param/", 0) == 0) {
      ck.params.push_back({t.name.substr(6), std::move(t.value)});
    } else if (t.name.rfind("adam/", 0) == 0) {
      ck.optimizer.push_back({t.name.substr(5), std::move(t.value)});
    } else {
      throw FormatError("unknown tensor in checkpoint: " + t.name);
    }
  }
  return ck;
}

MeldModel model_from_checkpoint(const Checkpoint& ckpt) {
  MeldModel m(ckpt.config, 0);
  m.import_parameters(ckpt.params);
  return m;
}

}  // namespace meld::model
