#pragma once

#include <map>
#include <string>
#include <vector>

#include "hiersum/decode.hpp"
#include "hiersum/model.hpp"
#include "hiersum/optim.hpp"

namespace hiersum {

using KvMap = std::map<std::string, std::string>;

/// Parses "key=value" lines; '#' starts a comment, blank lines are skipped.
KvMap parse_kv_text(const std::string& text);
KvMap load_kv_file(const std::string& path);
/// One sorted "key=value" line per entry.
std::string format_kv_text(const KvMap& kv);

bool kv_bool(const KvMap& kv, const std::string& key, bool fallback);
int kv_int(const KvMap& kv, const std::string& key, int fallback);
double kv_double(const KvMap& kv, const std::string& key, double fallback);
uint64_t kv_uint64(const KvMap& kv, const std::string& key, uint64_t fallback);
std::string kv_string(const KvMap& kv, const std::string& key, const std::string& fallback);

/// Exact round-trip formatting for doubles.
std::string format_double(double v);

void model_config_to_kv(const ModelConfig& config, KvMap& kv);
/// Applies the keys present in kv on top of the passed-in defaults.
ModelConfig model_config_from_kv(const KvMap& kv, ModelConfig defaults = {});

void train_config_to_kv(const TrainConfig& config, KvMap& kv);
TrainConfig train_config_from_kv(const KvMap& kv, TrainConfig defaults = {});

/// One experiment: dataset paths plus model, optimizer, and generation
/// settings. vocab_size is always derived from the training data, never
/// read from a config file.
struct ExperimentSpec {
  ModelConfig model;
  TrainConfig train;
  GenerationConfig gen;
  std::string train_data;
  std::string eval_data;
  std::string out_dir;

  /// Rejects hierarchical attention without start-of-document tokens.
  void validate() const;
};

/// Strict parse of a whole experiment config: unknown keys are errors.
ExperimentSpec experiment_from_kv(const KvMap& kv);
KvMap experiment_to_kv(const ExperimentSpec& spec);

/// One row of the component ablation grid.
struct AblationRow {
  std::string name;
  bool use_sod;
  bool hier_enc;
  bool hier_dec;
  bool pos_restart;
};

/// The six studied configurations, from the full method down to the plain
/// baseline with every component off.
std::vector<AblationRow> ablation_grid();

void apply_ablation_row(const AblationRow& row, ModelConfig& model);

}  // namespace hiersum
