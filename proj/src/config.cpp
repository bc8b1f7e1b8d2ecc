#include "hiersum/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hiersum/errors.hpp"

namespace hiersum {

namespace {

std::string strip(const std::string& s) {
  const size_t begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const size_t end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

KvMap parse_kv_text(const std::string& text) {
  KvMap kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = strip(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key=value, got \"" +
                            line + "\"");
    }
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));
    if (key.empty()) {
      throw ValidationError("config line " + std::to_string(lineno) + ": empty key");
    }
    kv[key] = value;
  }
  return kv;
}

KvMap load_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_kv_text(buf.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

std::string format_kv_text(const KvMap& kv) {
  std::string out;
  for (const auto& [key, value] : kv) {
    out += key;
    out += '=';
    out += value;
    out += '\n';
  }
  return out;
}

namespace {

const std::string* find(const KvMap& kv, const std::string& key) {
  auto it = kv.find(key);
  return it == kv.end() ? nullptr : &it->second;
}

}  // namespace

bool kv_bool(const KvMap& kv, const std::string& key, bool fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw ValidationError("config key '" + key + "': expected true/false, got \"" + *v + "\"");
}

int kv_int(const KvMap& kv, const std::string& key, int fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  try {
    size_t pos = 0;
    const int out = std::stoi(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': expected integer, got \"" + *v + "\"");
  }
}

double kv_double(const KvMap& kv, const std::string& key, double fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  try {
    size_t pos = 0;
    const double out = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': expected number, got \"" + *v + "\"");
  }
}

uint64_t kv_uint64(const KvMap& kv, const std::string& key, uint64_t fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  try {
    size_t pos = 0;
    const uint64_t out = std::stoull(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': expected unsigned integer, got \"" + *v +
                          "\"");
  }
}

std::string kv_string(const KvMap& kv, const std::string& key, const std::string& fallback) {
  const std::string* v = find(kv, key);
  return v ? *v : fallback;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void model_config_to_kv(const ModelConfig& config, KvMap& kv) {
  kv["d_model"] = std::to_string(config.d_model);
  kv["n_heads"] = std::to_string(config.n_heads);
  kv["d_ff"] = std::to_string(config.d_ff);
  kv["n_enc_layers"] = std::to_string(config.n_enc_layers);
  kv["n_dec_layers"] = std::to_string(config.n_dec_layers);
  kv["vocab_size"] = std::to_string(config.vocab_size);
  kv["max_positions"] = std::to_string(config.max_positions);
  kv["src_trunc"] = std::to_string(config.src_trunc);
  kv["tgt_trunc"] = std::to_string(config.tgt_trunc);
  kv["use_sod"] = config.use_sod ? "true" : "false";
  kv["hier_enc"] = config.hier_enc ? "true" : "false";
  kv["hier_dec"] = config.hier_dec ? "true" : "false";
  kv["pos_restart"] = config.pos_restart ? "true" : "false";
  kv["dropout"] = format_double(config.dropout);
}

ModelConfig model_config_from_kv(const KvMap& kv, ModelConfig defaults) {
  ModelConfig c = defaults;
  c.d_model = kv_int(kv, "d_model", c.d_model);
  c.n_heads = kv_int(kv, "n_heads", c.n_heads);
  c.d_ff = kv_int(kv, "d_ff", c.d_ff);
  c.n_enc_layers = kv_int(kv, "n_enc_layers", c.n_enc_layers);
  c.n_dec_layers = kv_int(kv, "n_dec_layers", c.n_dec_layers);
  c.vocab_size = kv_int(kv, "vocab_size", c.vocab_size);
  c.max_positions = kv_int(kv, "max_positions", c.max_positions);
  c.src_trunc = kv_int(kv, "src_trunc", c.src_trunc);
  c.tgt_trunc = kv_int(kv, "tgt_trunc", c.tgt_trunc);
  c.use_sod = kv_bool(kv, "use_sod", c.use_sod);
  c.hier_enc = kv_bool(kv, "hier_enc", c.hier_enc);
  c.hier_dec = kv_bool(kv, "hier_dec", c.hier_dec);
  c.pos_restart = kv_bool(kv, "pos_restart", c.pos_restart);
  c.dropout = kv_double(kv, "dropout", c.dropout);
  return c;
}

void train_config_to_kv(const TrainConfig& config, KvMap& kv) {
  kv["learning_rate"] = format_double(config.learning_rate);
  kv["beta1"] = format_double(config.beta1);
  kv["beta2"] = format_double(config.beta2);
  kv["eps"] = format_double(config.eps);
  kv["warmup_steps"] = std::to_string(config.warmup_steps);
  kv["weight_decay"] = format_double(config.weight_decay);
  kv["grad_clip"] = format_double(config.grad_clip);
  kv["batch_size"] = std::to_string(config.batch_size);
  kv["max_steps"] = std::to_string(config.max_steps);
  kv["seed"] = std::to_string(config.seed);
  kv["eval_every"] = std::to_string(config.eval_every);
  if (!config.checkpoint_path.empty()) kv["checkpoint_path"] = config.checkpoint_path;
  if (!config.metrics_path.empty()) kv["metrics_path"] = config.metrics_path;
}

void ExperimentSpec::validate() const {
  if ((model.hier_enc || model.hier_dec) && !model.use_sod) {
    throw ValidationError(
        "hierarchical attention needs start-of-document tokens: set use_sod=true");
  }
  train.validate();
  if (gen.min_length < 1 || gen.max_length < gen.min_length) {
    throw ValidationError("generation lengths must satisfy 1 <= min_length <= max_length");
  }
}

namespace {

const std::vector<std::string>& experiment_keys() {
  static const std::vector<std::string> keys = {
      "train_data",  "eval_data",     "out_dir",      "d_model",       "n_heads",
      "d_ff",        "n_enc_layers",  "n_dec_layers", "max_positions", "src_trunc",
      "tgt_trunc",   "use_sod",       "hier_enc",     "hier_dec",      "pos_restart",
      "dropout",     "learning_rate", "beta1",        "beta2",         "eps",
      "warmup_steps", "weight_decay", "grad_clip",    "batch_size",    "max_steps",
      "seed",        "eval_every",    "checkpoint_path", "metrics_path", "max_length",
      "min_length"};
  return keys;
}

}  // namespace

ExperimentSpec experiment_from_kv(const KvMap& kv) {
  const std::vector<std::string>& known = experiment_keys();
  for (const auto& [key, value] : kv) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ValidationError("unknown config key '" + key + "'");
    }
  }
  ExperimentSpec spec;
  spec.model = model_config_from_kv(kv);
  spec.train = train_config_from_kv(kv);
  spec.gen.max_length = kv_int(kv, "max_length", spec.model.tgt_trunc);
  spec.gen.min_length = kv_int(kv, "min_length", 1);
  spec.train_data = kv_string(kv, "train_data", "");
  spec.eval_data = kv_string(kv, "eval_data", "");
  spec.out_dir = kv_string(kv, "out_dir", "");
  spec.validate();
  return spec;
}

KvMap experiment_to_kv(const ExperimentSpec& spec) {
  KvMap kv;
  model_config_to_kv(spec.model, kv);
  kv.erase("vocab_size");
  train_config_to_kv(spec.train, kv);
  kv["max_length"] = std::to_string(spec.gen.max_length);
  kv["min_length"] = std::to_string(spec.gen.min_length);
  if (!spec.train_data.empty()) kv["train_data"] = spec.train_data;
  if (!spec.eval_data.empty()) kv["eval_data"] = spec.eval_data;
  if (!spec.out_dir.empty()) kv["out_dir"] = spec.out_dir;
  return kv;
}

std::vector<AblationRow> ablation_grid() {
  return {
      {"full", true, true, true, true},
      {"no_posres", true, true, true, false},
      {"no_hierdec", true, true, false, true},
      {"no_hierdec_no_posres", true, true, false, false},
      {"sod_only", true, false, false, false},
      {"plain", false, false, false, false},
  };
}

void apply_ablation_row(const AblationRow& row, ModelConfig& model) {
  model.use_sod = row.use_sod;
  model.hier_enc = row.hier_enc;
  model.hier_dec = row.hier_dec;
  model.pos_restart = row.pos_restart;
}

TrainConfig train_config_from_kv(const KvMap& kv, TrainConfig defaults) {
  TrainConfig c = defaults;
  c.learning_rate = kv_double(kv, "learning_rate", c.learning_rate);
  c.beta1 = kv_double(kv, "beta1", c.beta1);
  c.beta2 = kv_double(kv, "beta2", c.beta2);
  c.eps = kv_double(kv, "eps", c.eps);
  c.warmup_steps = kv_int(kv, "warmup_steps", c.warmup_steps);
  c.weight_decay = kv_double(kv, "weight_decay", c.weight_decay);
  c.grad_clip = kv_double(kv, "grad_clip", c.grad_clip);
  c.batch_size = kv_int(kv, "batch_size", c.batch_size);
  c.max_steps = kv_int(kv, "max_steps", c.max_steps);
  c.seed = kv_uint64(kv, "seed", c.seed);
  c.eval_every = kv_int(kv, "eval_every", c.eval_every);
  c.checkpoint_path = kv_string(kv, "checkpoint_path", c.checkpoint_path);
  c.metrics_path = kv_string(kv, "metrics_path", c.metrics_path);
  return c;
}

}  // namespace hiersum
