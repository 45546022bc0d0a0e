#include "meld/config.hpp"

#include <cctype>
#include <charconv>
#include <sstream>

#include "meld/feature_io.hpp"

namespace meld::config {

using nlohmann::json;

namespace {

json model_section(const model::ModelConfig& m) {
  json j = m.to_json();
  j.erase("vocab");
  j.erase("d_mel_in");
  return j;
}

json without(json j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) j.erase(k);
  return j;
}

}  // namespace

json ExperimentConfig::to_json() const {
  json gen = without(generation.to_json(), {"seed", "mode"});
  json tr = without(train.to_json(), {"seed"});
  return json{{"seed", seed},
              {"n_utterances", n_utterances},
              {"mel", io::to_json(mel)},
              {"corpus", without(corpus.to_json(), {"seed", "sample_rate_hz"})},
              {"data", {{"bpe_vocab", data.bpe_vocab}, {"codebook_k", data.codebook_k}, {"kmeans_iters", data.kmeans_iters}}},
              {"model", model_section(model)},
              {"train", tr},
              {"generation", gen},
              {"eval",
               {{"n_utterances", eval.n_utterances},
                {"tts_seeds", eval.tts_seeds},
                {"griffin_lim_iters", eval.griffin_lim_iters},
                {"write_wav", eval.write_wav}}}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  const ExperimentConfig defaults;
  check_against_schema(j, defaults.to_json());
  json full = defaults.to_json();
  full.merge_patch(j);

  ExperimentConfig c;
  c.seed = full.at("seed").get<std::uint64_t>();
  c.n_utterances = full.at("n_utterances").get<int>();
  if (c.n_utterances < 1) throw ConfigError("n_utterances must be >= 1");
  c.mel = io::mel_config_from_json(full.at("mel"));

  json corp = full.at("corpus");
  corp["seed"] = c.corpus_seed();
  corp["sample_rate_hz"] = c.mel.sample_rate_hz;
  c.corpus = corpus::SynthSpec::from_json(corp);
  c.corpus.validate(c.mel.fmax_hz);

  const auto& d = full.at("data");
  c.data.bpe_vocab = d.at("bpe_vocab").get<int>();
  c.data.codebook_k = d.at("codebook_k").get<int>();
  c.data.kmeans_iters = d.at("kmeans_iters").get<int>();
  c.data.kmeans_seed = c.kmeans_seed();
  if (c.data.bpe_vocab < text::kByteAlphabet) throw ConfigError("data.bpe_vocab must be >= 256");
  if (c.data.codebook_k < 2) throw ConfigError("data.codebook_k must be >= 2");
  if (c.data.kmeans_iters < 1) throw ConfigError("data.kmeans_iters must be >= 1");

  json mj = full.at("model");
  mj["d_mel_in"] = c.mel.n_mels * c.mel.stack_factor;
  // Placeholder layout for validation; the real text size comes from the trained BPE.
  mj["vocab"] = make_unified_vocab(c.data.bpe_vocab, c.data.codebook_k).to_json();
  c.model = model::ModelConfig::from_json(mj);

  json tj = full.at("train");
  tj["seed"] = c.train_seed();
  c.train = train::TrainConfig::from_json(tj);

  json gj = full.at("generation");
  gj["seed"] = c.generation_seed();
  c.generation = infer::GenerationConfig::from_json(gj);

  const auto& e = full.at("eval");
  c.eval.n_utterances = e.at("n_utterances").get<int>();
  c.eval.tts_seeds = e.at("tts_seeds").get<int>();
  c.eval.griffin_lim_iters = e.at("griffin_lim_iters").get<int>();
  c.eval.write_wav = e.at("write_wav").get<bool>();
  if (c.eval.n_utterances < 1 || c.eval.tts_seeds < 1 || c.eval.griffin_lim_iters < 1) {
    throw ConfigError("eval counts must be >= 1");
  }
  return c;
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a(to_json().dump())); }

// ---- schema -----------------------------------------------------------------------

void check_against_schema(const json& user, const json& schema, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config " + (path.empty() ? std::string("root") : path) + " must be a table");
  for (const auto& [key, value] : user.items()) {
    const std::string kp = path.empty() ? key : path + "." + key;
    if (!schema.contains(key)) throw ConfigError("unknown config key: " + kp);
    const auto& ref = schema.at(key);
    if (ref.is_object()) {
      check_against_schema(value, ref, kp);
      continue;
    }
    bool ok = false;
    if (ref.is_boolean()) {
      ok = value.is_boolean();
    } else if (ref.is_number_integer()) {
      ok = value.is_number_integer();
    } else if (ref.is_number()) {
      ok = value.is_number();
    } else if (ref.is_string()) {
      ok = value.is_string();
    } else if (ref.is_array()) {
      ok = value.is_array();
      if (ok) {
        for (const auto& el : value) {
          if (!ref.empty() && ref.front().is_number() && !el.is_number()) ok = false;
        }
      }
    }
    if (!ok) throw ConfigError("config key " + kp + " has the wrong type (expected " + ref.type_name() + ")");
  }
}

// ---- TOML subset ----------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string_view strip_comment(std::string_view s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

std::vector<std::string> split_path(std::string_view p) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto dot = p.find('.', start);
    auto part = trim(p.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (part.empty()) throw ConfigError("empty component in key path '" + std::string(p) + "'");
    for (char ch : part) {
      if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-')) {
        throw ConfigError("invalid character in key '" + std::string(part) + "'");
      }
    }
    out.emplace_back(part);
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return out;
}

json& descend(json& root, const std::vector<std::string>& path, std::size_t n) {
  json* cur = &root;
  for (std::size_t i = 0; i < n; ++i) {
    if (!cur->contains(path[i])) (*cur)[path[i]] = json::object();
    cur = &(*cur)[path[i]];
    if (!cur->is_object()) throw ConfigError("key '" + path[i] + "' is both a value and a table");
  }
  return *cur;
}

}  // namespace

json parse_value(std::string_view text) {
  auto s = trim(text);
  if (s.empty()) throw ConfigError("missing value");
  if (s == "true") return true;
  if (s == "false") return false;
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"') throw ConfigError("unterminated string: " + std::string(s));
    std::string out;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
      if (s[i] == '\\' && i + 2 < s.size()) {
        const char e = s[++i];
        out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
      } else {
        out += s[i];
      }
    }
    return out;
  }
  if (s.front() == '[') {
    if (s.back() != ']') throw ConfigError("unterminated array: " + std::string(s));
    json arr = json::array();
    auto body = trim(s.substr(1, s.size() - 2));
    if (body.empty()) return arr;
    std::size_t start = 0;
    bool in_str = false;
    for (std::size_t i = 0; i <= body.size(); ++i) {
      if (i < body.size() && body[i] == '"') in_str = !in_str;
      if (i == body.size() || (body[i] == ',' && !in_str)) {
        auto el = trim(body.substr(start, i - start));
        if (!el.empty()) arr.push_back(parse_value(el));
        start = i + 1;
      }
    }
    return arr;
  }
  std::string num(s);
  num.erase(std::remove(num.begin(), num.end(), '_'), num.end());
  const bool is_float = num.find_first_of(".eE") != std::string::npos && num.find("0x") == std::string::npos;
  if (!is_float) {
    std::int64_t v = 0;
    const auto* end = num.data() + num.size();
    const auto r = std::from_chars(num.data() + (num.front() == '+' ? 1 : 0), end, v);
    if (r.ec == std::errc() && r.ptr == end) return v;
  } else {
    try {
      std::size_t used = 0;
      const double v = std::stod(num, &used);
      if (used == num.size()) return v;
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("cannot parse value '" + std::string(s) + "'");
}

json parse_toml(std::string_view text) {
  json root = json::object();
  std::vector<std::string> section;
  std::istringstream is{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    try {
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("malformed section header");
        section = split_path(line.substr(1, line.size() - 2));
        descend(root, section, section.size());
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("expected key = value");
      auto key = split_path(line.substr(0, eq));
      std::vector<std::string> full = section;
      full.insert(full.end(), key.begin(), key.end());
      json& parent = descend(root, full, full.size() - 1);
      if (parent.contains(full.back())) throw ConfigError("duplicate key " + full.back());
      parent[full.back()] = parse_value(line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return root;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  auto path = split_path(std::string_view(assignment).substr(0, eq));
  json& parent = descend(j, path, path.size() - 1);
  const auto value_text = std::string_view(assignment).substr(eq + 1);
  json value;
  try {
    value = parse_value(value_text);
  } catch (const ConfigError&) {
    // Bare words are accepted as strings on the command line (mode=tts).
    value = std::string(trim(value_text));
  }
  parent[path.back()] = value;
}

ExperimentConfig load_experiment(const std::optional<std::filesystem::path>& file,
                                 const std::vector<std::string>& overrides,
                                 const std::optional<std::string>& env_seed) {
  json j = json::object();
  if (file) j = parse_toml(io::read_file(*file));
  for (const auto& o : overrides) apply_override(j, o);
  if (env_seed && !env_seed->empty()) {
    std::uint64_t s = 0;
    const auto* end = env_seed->data() + env_seed->size();
    const auto r = std::from_chars(env_seed->data(), end, s);
    if (r.ec != std::errc() || r.ptr != end) throw ConfigError("MELD_SEED must be a non-negative integer");
    j["seed"] = s;
  }
  return ExperimentConfig::from_json(j);
}

}  // namespace meld::config
