#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hiersum/analysis.hpp"
#include "hiersum/checkpoint.hpp"
#include "hiersum/config.hpp"
#include "hiersum/data.hpp"
#include "hiersum/decode.hpp"
#include "hiersum/errors.hpp"
#include "hiersum/model.hpp"
#include "hiersum/rouge.hpp"
#include "hiersum/trace.hpp"
#include "hiersum/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hiersum;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

KvMap merged_config(const std::string& path, const std::vector<std::string>& overrides) {
  KvMap kv = load_kv_file(path);
  for (const std::string& entry : overrides) {
    const size_t eq = entry.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ValidationError("--set expects key=value, got \"" + entry + "\"");
    }
    kv[entry.substr(0, eq)] = entry.substr(eq + 1);
  }
  return kv;
}

std::string default_out_dir() {
  const char* env = std::getenv("HIERSUM_OUT_DIR");
  return env && *env ? env : ".";
}

void fill_paths(ExperimentSpec& spec) {
  if (spec.out_dir.empty()) spec.out_dir = default_out_dir();
  if (spec.train.checkpoint_path.empty()) {
    spec.train.checkpoint_path = (fs::path(spec.out_dir) / "model.ckpt").string();
  }
  if (spec.train.metrics_path.empty()) {
    spec.train.metrics_path = (fs::path(spec.out_dir) / "metrics.jsonl").string();
  }
}

std::vector<MultiDocExample> encode_all(const std::vector<RawExample>& raw,
                                        const Vocabulary& vocab) {
  std::vector<MultiDocExample> out;
  out.reserve(raw.size());
  for (const RawExample& r : raw) out.push_back(encode_example(r, vocab));
  return out;
}

struct RunOutcome {
  TrainResult result;
  int64_t params = 0;
};

RunOutcome run_experiment(ExperimentSpec spec, const std::string& resume_path) {
  fill_paths(spec);
  if (spec.train_data.empty()) throw ValidationError("train_data is required");
  fs::create_directories(spec.out_dir);

  const std::vector<RawExample> train_raw = load_jsonl(spec.train_data);
  std::vector<RawExample> eval_raw;
  if (!spec.eval_data.empty()) eval_raw = load_jsonl(spec.eval_data);

  const std::string vocab_path = (fs::path(spec.out_dir) / "vocab.txt").string();
  std::optional<Archive> resume;
  Vocabulary vocab;
  if (!resume_path.empty()) {
    resume = load_archive(resume_path);
    vocab = Vocabulary::load(vocab_path);
  } else {
    std::error_code ec;
    fs::remove(spec.train.metrics_path, ec);
    std::vector<std::string> texts;
    for (const RawExample& r : train_raw) {
      for (const std::string& d : r.documents) texts.push_back(d);
      texts.push_back(r.summary);
    }
    vocab = Vocabulary::build(texts, 1);
    vocab.save(vocab_path);
  }

  ModelConfig mc = spec.model;
  mc.vocab_size = vocab.size();
  mc.validate();
  spec.gen.validate(mc);

  HierTransformer model(mc, spec.train.seed);
  OptimizerState opt;
  if (resume) load_checkpoint_into(*resume, model, &opt);

  KvMap resolved = experiment_to_kv(spec);
  resolved["vocab_size"] = std::to_string(mc.vocab_size);
  std::ofstream cfg_out(fs::path(spec.out_dir) / "config.resolved.cfg");
  cfg_out << format_kv_text(resolved);
  if (!cfg_out) throw IoError("cannot write resolved config in " + spec.out_dir);
  cfg_out.close();

  const std::vector<MultiDocExample> train_enc = encode_all(train_raw, vocab);
  const std::vector<MultiDocExample> eval_enc = encode_all(eval_raw, vocab);

  RunOutcome outcome;
  outcome.params = model.param_count();
  outcome.result = train_loop(model, opt, train_enc, eval_enc, vocab, spec.train);
  return outcome;
}

void print_eval(const char* label, const EvalMetrics& m) {
  if (m.n_examples == 0) return;
  std::printf("%s: loss %.4f | token accuracy %.4f | exact match %.4f | r1 %.4f r2 %.4f rL %.4f\n",
              label, m.loss, m.token_accuracy, m.exact_match, m.rouge.rouge1.f1, m.rouge.rouge2.f1,
              m.rouge.rougeL.f1);
}

int cmd_gen_data(uint64_t seed, int count, std::vector<int> docs, std::vector<int> facts,
                 const std::string& out) {
  SyntheticConfig sc;
  sc.seed = seed;
  sc.count = count;
  if (!docs.empty()) {
    sc.n_docs_min = docs.front();
    sc.n_docs_max = docs.back();
  }
  if (!facts.empty()) {
    sc.facts_min = facts.front();
    sc.facts_max = facts.back();
  }
  const std::vector<RawExample> examples = gen_synthetic(sc);
  write_jsonl(out, examples);
  std::printf("wrote %zu examples to %s\n", examples.size(), out.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& resume_path) {
  const ExperimentSpec spec = experiment_from_kv(merged_config(config_path, overrides));
  const RunOutcome outcome = run_experiment(spec, resume_path);
  std::printf("trained %lld parameters for %zu steps; final train loss %.4f\n",
              static_cast<long long>(outcome.params), outcome.result.step_losses.size(),
              outcome.result.step_losses.empty() ? 0.0 : outcome.result.step_losses.back());
  print_eval("eval", outcome.result.final_eval);
  return 0;
}

int cmd_generate(const std::string& ckpt, const std::string& input, const std::string& out,
                 std::string vocab_path, const std::string& trace_dir, const std::string& format,
                 int max_length, int min_length) {
  const Archive archive = load_archive(ckpt);
  ModelConfig mc = model_config_of_archive(archive);
  mc.validate();
  if (vocab_path.empty()) vocab_path = (fs::path(ckpt).parent_path() / "vocab.txt").string();
  const Vocabulary vocab = Vocabulary::load(vocab_path);
  if (vocab.size() != mc.vocab_size) {
    throw ValidationError("vocabulary at " + vocab_path + " has " + std::to_string(vocab.size()) +
                          " tokens but the checkpoint was trained with " +
                          std::to_string(mc.vocab_size));
  }
  HierTransformer model(mc, 0);
  load_checkpoint_into(archive, model, nullptr);

  GenerationConfig gen;
  gen.max_length = max_length > 0 ? max_length : mc.tgt_trunc;
  gen.min_length = min_length;
  gen.validate(mc);

  const std::vector<RawExample> raw = load_jsonl(input, false);
  if (raw.empty()) throw ValidationError("no examples in " + input);
  const std::vector<MultiDocExample> enc = encode_all(raw, vocab);
  BatchConfig bc;
  bc.use_sod = mc.use_sod;
  bc.pos_restart = mc.pos_restart;
  bc.src_trunc = mc.src_trunc;
  bc.tgt_trunc = mc.tgt_trunc;
  const MultiDocBatch mb = make_batch(enc, bc);

  const bool tracing = !trace_dir.empty();
  if (tracing) fs::create_directories(trace_dir);

  std::ofstream sink(out);
  if (!sink) throw IoError("cannot write output file: " + out);
  for (int b = 0; b < mb.batch; ++b) {
    const GenerationResult r = greedy_generate_row(model, mb, b, gen, tracing);
    std::vector<int> tokens = r.tokens;
    if (!tokens.empty() && tokens.back() == gen.stop_token) tokens.pop_back();
    const std::string text = vocab.decode(tokens);
    if (format == "text") {
      sink << text << '\n';
    } else {
      json line;
      line["id"] = b;
      line["summary"] = text;
      sink << line.dump() << '\n';
    }
    if (tracing) {
      char name[32];
      std::snprintf(name, sizeof(name), "trace_%05d.bin", b);
      save_trace(build_trace(mb, b, r.enc_trace, r.step_traces),
                 (fs::path(trace_dir) / name).string());
    }
  }
  if (!sink) throw IoError("failed while writing output file: " + out);
  std::printf("wrote %d summaries to %s\n", mb.batch, out.c_str());
  if (tracing) std::printf("wrote %d traces to %s\n", mb.batch, trace_dir.c_str());
  return 0;
}

std::vector<std::string> read_summaries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open file: " + path);
  std::vector<std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string text = line;
    if (!line.empty() && line[0] == '{') {
      json obj;
      try {
        obj = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ValidationError(path + " line " + std::to_string(lineno) + ": " + e.what());
      }
      if (!obj.contains("summary") || !obj["summary"].is_string()) {
        throw ValidationError(path + " line " + std::to_string(lineno) +
                              ": missing \"summary\" string");
      }
      text = obj["summary"].get<std::string>();
    }
    out.push_back(text);
  }
  return out;
}

int cmd_evaluate(const std::string& hyp_path, const std::string& ref_path,
                 const std::string& out) {
  const std::vector<std::string> hyps = read_summaries(hyp_path);
  const std::vector<std::string> refs = read_summaries(ref_path);
  if (hyps.empty()) throw ValidationError("no hypotheses in " + hyp_path);
  if (hyps.size() != refs.size()) {
    throw ValidationError("line counts differ: " + std::to_string(hyps.size()) + " hypotheses vs " +
                          std::to_string(refs.size()) + " references");
  }
  std::ofstream sink;
  if (!out.empty()) {
    sink.open(out);
    if (!sink) throw IoError("cannot write output file: " + out);
  }
  auto entry_json = [](const RougeEntry& e) {
    return json{{"precision", e.precision}, {"recall", e.recall}, {"f1", e.f1}};
  };
  for (size_t i = 0; i < hyps.size(); ++i) {
    if (!sink.is_open()) break;
    const RougeScore s = rouge_score(hyps[i], refs[i]);
    json line;
    line["id"] = i;
    line["rouge1"] = entry_json(s.rouge1);
    line["rouge2"] = entry_json(s.rouge2);
    line["rougeL"] = entry_json(s.rougeL);
    sink << line.dump() << '\n';
  }
  const RougeScore corpus = rouge_corpus(hyps, refs);
  if (sink.is_open()) {
    json line;
    line["corpus"] = true;
    line["rouge1"] = entry_json(corpus.rouge1);
    line["rouge2"] = entry_json(corpus.rouge2);
    line["rougeL"] = entry_json(corpus.rougeL);
    sink << line.dump() << '\n';
  }
  std::printf("rouge1 %.4f | rouge2 %.4f | rougeL %.4f over %zu pairs\n", corpus.rouge1.f1,
              corpus.rouge2.f1, corpus.rougeL.f1, hyps.size());
  return 0;
}

std::vector<AttentionTrace> load_trace_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".bin") {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no trace files in " + dir);
  std::vector<AttentionTrace> traces;
  traces.reserve(files.size());
  for (const std::string& f : files) traces.push_back(load_trace(f));
  return traces;
}

int cmd_analyze(const std::string& trace_dir, const std::string& baseline_dir,
                const std::string& out) {
  const std::vector<AttentionTrace> traces = load_trace_dir(trace_dir);
  const SelfDocReport mass = self_doc_mass(traces);
  const CdsReport dev = cds(traces);

  std::ofstream sink;
  if (!out.empty()) {
    sink.open(out);
    if (!sink) throw IoError("cannot write output file: " + out);
    for (size_t i = 0; i < traces.size(); ++i) {
      json line;
      line["example"] = i;
      line["self_doc_mass"] = mass.per_example[i];
      line["cds"] = dev.per_example[i];
      line["n_tokens"] = dev.per_token[i].size();
      sink << line.dump() << '\n';
    }
    json corpus;
    corpus["corpus"] = true;
    corpus["self_doc_mass"] = mass.corpus_mean;
    corpus["cds"] = dev.corpus_mean;
    sink << corpus.dump() << '\n';
  }
  std::printf("self-document mass %.6f | cross-document deviation %.6f over %zu traces\n",
              mass.corpus_mean, dev.corpus_mean, traces.size());

  if (!baseline_dir.empty()) {
    const std::vector<AttentionTrace> base = load_trace_dir(baseline_dir);
    const SelfDocReport base_mass = self_doc_mass(base);
    const CdsReport base_dev = cds(base);
    auto ratio_line = [&](const char* metric, double value, double baseline) {
      const double ratio = baseline != 0.0 ? value / baseline : 0.0;
      if (sink.is_open()) {
        json line;
        line["comparison"] = metric;
        line["value"] = value;
        line["baseline"] = baseline;
        line["ratio"] = ratio;
        sink << line.dump() << '\n';
      }
      std::printf("%s ratio vs baseline: %.6f\n", metric, ratio);
    };
    ratio_line("self_doc_mass", mass.corpus_mean, base_mass.corpus_mean);
    ratio_line("cds", dev.corpus_mean, base_dev.corpus_mean);
  }
  if (sink.is_open() && !sink) throw IoError("failed while writing output file: " + out);
  return 0;
}

int cmd_ablate(const std::string& base_config, const std::vector<std::string>& overrides,
               const std::string& out_dir) {
  const ExperimentSpec base = experiment_from_kv(merged_config(base_config, overrides));
  if (base.train_data.empty()) throw ValidationError("train_data is required");
  if (base.eval_data.empty()) {
    throw ValidationError("eval_data is required to compare the grid rows");
  }
  fs::create_directories(out_dir);

  struct RowResult {
    AblationRow row;
    double loss;
    EvalMetrics eval;
  };
  std::vector<RowResult> rows;
  const std::vector<AblationRow> grid = ablation_grid();
  for (size_t i = 0; i < grid.size(); ++i) {
    ExperimentSpec spec = base;
    apply_ablation_row(grid[i], spec.model);
    spec.out_dir = (fs::path(out_dir) / ("row" + std::to_string(i) + "_" + grid[i].name)).string();
    spec.train.checkpoint_path.clear();
    spec.train.metrics_path.clear();
    spec.validate();
    std::printf("[row %zu] %s: sod=%d hier_enc=%d hier_dec=%d pos_restart=%d\n", i,
                grid[i].name.c_str(), grid[i].use_sod, grid[i].hier_enc, grid[i].hier_dec,
                grid[i].pos_restart);
    const RunOutcome outcome = run_experiment(spec, "");
    print_eval("  eval", outcome.result.final_eval);
    rows.push_back({grid[i],
                    outcome.result.step_losses.empty() ? 0.0 : outcome.result.step_losses.back(),
                    outcome.result.final_eval});
  }

  const std::string table_path = (fs::path(out_dir) / "ablation.jsonl").string();
  std::ofstream sink(table_path);
  if (!sink) throw IoError("cannot write output file: " + table_path);
  const RowResult& full = rows.front();
  for (size_t i = 0; i < rows.size(); ++i) {
    const RowResult& r = rows[i];
    json line;
    line["row"] = i;
    line["name"] = r.row.name;
    line["use_sod"] = r.row.use_sod;
    line["hier_enc"] = r.row.hier_enc;
    line["hier_dec"] = r.row.hier_dec;
    line["pos_restart"] = r.row.pos_restart;
    line["train_loss"] = r.loss;
    line["eval_loss"] = r.eval.loss;
    line["token_accuracy"] = r.eval.token_accuracy;
    line["exact_match"] = r.eval.exact_match;
    line["rouge1"] = r.eval.rouge.rouge1.f1;
    line["rouge2"] = r.eval.rouge.rouge2.f1;
    line["rougeL"] = r.eval.rouge.rougeL.f1;
    line["delta_eval_loss"] = r.eval.loss - full.eval.loss;
    line["delta_token_accuracy"] = r.eval.token_accuracy - full.eval.token_accuracy;
    line["delta_rouge1"] = r.eval.rouge.rouge1.f1 - full.eval.rouge.rouge1.f1;
    line["delta_rouge2"] = r.eval.rouge.rouge2.f1 - full.eval.rouge.rouge2.f1;
    line["delta_rougeL"] = r.eval.rouge.rougeL.f1 - full.eval.rouge.rougeL.f1;
    sink << line.dump() << '\n';
  }
  if (!sink) throw IoError("failed while writing output file: " + table_path);

  std::printf("\n%-22s %4s %4s %4s %4s %10s %8s %8s %8s\n", "row", "sod", "enc", "dec", "pos",
              "eval_loss", "acc", "r1", "d_r1");
  for (const RowResult& r : rows) {
    std::printf("%-22s %4s %4s %4s %4s %10.4f %8.4f %8.4f %+8.4f\n", r.row.name.c_str(),
                r.row.use_sod ? "y" : "n", r.row.hier_enc ? "y" : "n", r.row.hier_dec ? "y" : "n",
                r.row.pos_restart ? "y" : "n", r.eval.loss, r.eval.token_accuracy,
                r.eval.rouge.rouge1.f1, r.eval.rouge.rouge1.f1 - full.eval.rouge.rouge1.f1);
  }
  std::printf("table written to %s\n", table_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical multi-document summarization experiments"};
  app.require_subcommand(1);

  uint64_t seed = 0;
  int count = 100;
  std::vector<int> docs;
  std::vector<int> facts;
  std::string out;
  CLI::App* gen_data = app.add_subcommand("gen-data", "Write a synthetic key-value merge dataset");
  gen_data->add_option("--seed", seed, "Generator seed");
  gen_data->add_option("--count", count, "Number of examples");
  gen_data->add_option("--n-docs", docs, "Documents per example (one value or min max)")
      ->expected(1, 2);
  gen_data->add_option("--facts", facts, "Facts per document (one value or min max)")
      ->expected(1, 2);
  gen_data->add_option("--out", out, "Output JSONL path")->required();

  std::string config_path;
  std::string resume_path;
  std::vector<std::string> overrides;
  CLI::App* train = app.add_subcommand("train", "Train a model from a key=value config file");
  train->add_option("--config", config_path, "Experiment config file")->required();
  train->add_option("--resume", resume_path, "Checkpoint to continue from");
  train->add_option("--set", overrides, "Override a config key (key=value, repeatable)");

  std::string ckpt, input, vocab_path, trace_dir, format = "jsonl";
  int max_length = 0, min_length = 1;
  CLI::App* generate = app.add_subcommand("generate", "Greedy-decode summaries from a checkpoint");
  generate->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  generate->add_option("--input", input, "Input JSONL with documents")->required();
  generate->add_option("--out", out, "Output path")->required();
  generate->add_option("--vocab", vocab_path, "Vocabulary path (default: vocab.txt next to ckpt)");
  generate->add_option("--trace", trace_dir, "Directory for attention traces");
  generate->add_option("--format", format, "Output format: jsonl or text")
      ->check(CLI::IsMember({"jsonl", "text"}));
  generate->add_option("--max-length", max_length, "Maximum summary length (default: model cap)");
  generate->add_option("--min-length", min_length, "Minimum summary length");

  std::string hyp_path, ref_path;
  CLI::App* evaluate = app.add_subcommand("evaluate", "Score hypotheses against references");
  evaluate->add_option("--hyp", hyp_path, "Hypotheses (JSONL with summary, or plain text)")
      ->required();
  evaluate->add_option("--ref", ref_path, "References (JSONL with summary, or plain text)")
      ->required();
  evaluate->add_option("--out", out, "Per-example report JSONL path");

  std::string baseline_dir;
  CLI::App* analyze = app.add_subcommand("analyze", "Attention statistics over saved traces");
  analyze->add_option("--trace-dir", trace_dir, "Directory of trace files")->required();
  analyze->add_option("--baseline-dir", baseline_dir, "Second trace directory to compare against");
  analyze->add_option("--out", out, "Report JSONL path");

  std::string out_dir;
  CLI::App* ablate = app.add_subcommand("ablate", "Train and compare the component ablation grid");
  ablate->add_option("--base-config", config_path, "Experiment config file shared by all rows")
      ->required();
  ablate->add_option("--out-dir", out_dir, "Directory for row outputs and the delta table")
      ->required();
  ablate->add_option("--set", overrides, "Override a config key (key=value, repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (gen_data->parsed()) return cmd_gen_data(seed, count, docs, facts, out);
    if (train->parsed()) return cmd_train(config_path, overrides, resume_path);
    if (generate->parsed()) {
      return cmd_generate(ckpt, input, out, vocab_path, trace_dir, format, max_length, min_length);
    }
    if (evaluate->parsed()) return cmd_evaluate(hyp_path, ref_path, out);
    if (analyze->parsed()) return cmd_analyze(trace_dir, baseline_dir, out);
    if (ablate->parsed()) return cmd_ablate(config_path, overrides, out_dir);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
