#include "scpr/config/run_config.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

namespace scpr {

namespace {

const std::pair<const char*, const char*> kDefaults[] = {
    {"model.d_model", "64"},
    {"model.n_layers", "2"},
    {"model.n_heads", "4"},
    {"model.max_seq_len", "256"},
    {"model.seq2seq", "false"},
    {"model.tie_embeddings", "true"},
    {"head.kind", "softmax"},
    {"head.k1", "20"},
    {"head.k2", "100"},
    {"head.use_mi", "false"},
    {"head.mi_rows", "3"},
    {"head.mi_cols", "3"},
    {"head.mos_components", "3"},
    {"head.copy_bias", "-20"},
    {"head.ptr_bias", "0"},
    {"head.sentinel_bias", "0"},
    {"train.profile", "default"},
    {"train.lr", "1e-3"},
    {"train.beta1", "0.9"},
    {"train.beta2", "0.999"},
    {"train.eps", "1e-6"},
    {"train.weight_decay", "1.2e-6"},
    {"train.warmup_steps", "1000"},
    {"train.batch_size", "8"},
    {"train.steps", "1000"},
    {"train.seq_len", "64"},
    {"train.seed", "1"},
    {"train.checkpoint_every", "0"},
    {"train.clip_norm", "1.0"},
    {"train.log_every", "1"},
    {"data.format", "text"},
    {"data.train", ""},
    {"data.valid", ""},
    {"data.vocab", ""},
    {"data.vocab_cap", "0"},
    {"eval.batch_size", "8"},
    {"bench.vocab", "1000,10000"},
    {"bench.d_model", "128"},
    {"bench.heads", "softmax,mos,cpr"},
    {"bench.k1", "20"},
    {"bench.k2", "100"},
    {"bench.mos_components", "3"},
    {"bench.use_mi", "false"},
    {"bench.context", "200"},
    {"bench.reps", "30"},
    {"bench.warmup", "3"},
    {"bench.seed", "1"},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t n = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), n);
  if (r.ec != std::errc{} || r.ptr != v.data() + v.size() || v.empty())
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return n;
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& [k, v] : kDefaults) values_.emplace(k, v);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
  set_[key] = true;
}

void RunConfig::load(std::istream& in, const std::string& source) {
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    const std::string t = trim(line.substr(0, line.find('#')));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    if (!known(key))
      throw ConfigError(source + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
    set(key, trim(t.substr(eq + 1)));
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  load(in, path);
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  return parse_u64(key, get(key));
}

std::size_t RunConfig::get_size(const std::string& key) const {
  return static_cast<std::size_t>(get_u64(key));
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' expects true or false, got '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  const std::string& v = get(key);
  std::size_t b = 0;
  while (b <= v.size()) {
    const auto e = std::min(v.find(',', b), v.size());
    const std::string item = trim(v.substr(b, e - b));
    if (!item.empty()) out.push_back(item);
    b = e + 1;
  }
  return out;
}

ModelConfig RunConfig::model_config(std::size_t vocab_size) const {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.d_model = get_size("model.d_model");
  m.n_layers = get_size("model.n_layers");
  m.n_heads = get_size("model.n_heads");
  m.max_seq_len = get_size("model.max_seq_len");
  m.seq2seq = get_bool("model.seq2seq");
  m.tie_embeddings = get_bool("model.tie_embeddings");
  m.validate();
  return m;
}

HeadConfig RunConfig::head_config() const {
  HeadConfig h;
  h.kind = parse_head_kind(get("head.kind"));
  h.k1 = get_size("head.k1");
  h.k2 = get_size("head.k2");
  h.use_mi = get_bool("head.use_mi");
  h.mi_rows = get_size("head.mi_rows");
  h.mi_cols = get_size("head.mi_cols");
  h.mos_components = get_size("head.mos_components");
  h.copy_bias = get_double("head.copy_bias");
  h.ptr_bias = get_double("head.ptr_bias");
  h.sentinel_bias = get_double("head.sentinel_bias");
  return h;
}

TrainConfig RunConfig::train_config() const {
  const std::string& profile = get("train.profile");
  TrainConfig t;
  if (profile == "paper-lm") t = TrainConfig::paper_lm();
  else if (profile != "default") throw ConfigError("unknown train.profile '" + profile + "' (expected default or paper-lm)");
  auto pick_d = [&](const char* key, double& field) {
    if (profile == "default" || explicitly_set(key)) field = get_double(key);
  };
  auto pick_s = [&](const char* key, std::size_t& field) {
    if (profile == "default" || explicitly_set(key)) field = get_size(key);
  };
  pick_d("train.lr", t.optim.lr);
  pick_d("train.beta1", t.optim.beta1);
  pick_d("train.beta2", t.optim.beta2);
  pick_d("train.eps", t.optim.eps);
  pick_d("train.weight_decay", t.optim.weight_decay);
  pick_s("train.warmup_steps", t.optim.warmup_steps);
  pick_s("train.batch_size", t.batch_size);
  pick_s("train.steps", t.steps);
  pick_s("train.seq_len", t.seq_len);
  pick_s("train.checkpoint_every", t.checkpoint_every);
  pick_d("train.clip_norm", t.clip_norm);
  t.seed = get_u64("train.seed");
  t.validate();
  return t;
}

BenchSpec RunConfig::bench_spec() const {
  BenchSpec b;
  b.vocab_sizes.clear();
  for (const auto& v : get_list("bench.vocab")) b.vocab_sizes.push_back(parse_u64("bench.vocab", v));
  b.d_models.clear();
  for (const auto& v : get_list("bench.d_model")) b.d_models.push_back(parse_u64("bench.d_model", v));
  for (const auto& name : get_list("bench.heads")) {
    HeadConfig h;
    h.kind = parse_head_kind(name);
    h.k1 = get_size("bench.k1");
    h.k2 = get_size("bench.k2");
    h.mos_components = get_size("bench.mos_components");
    h.use_mi = get_bool("bench.use_mi");
    b.heads.push_back(h);
  }
  b.context = get_size("bench.context");
  b.reps = get_size("bench.reps");
  b.warmup = get_size("bench.warmup");
  b.seed = get_u64("bench.seed");
  b.validate();
  return b;
}

void RunConfig::write(std::ostream& out) const {
  for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
}

}  // namespace scpr
