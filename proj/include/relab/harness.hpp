#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "relab/corpus.hpp"
#include "relab/judge.hpp"
#include "relab/metrics.hpp"
#include "relab/perturb.hpp"
#include "relab/prompting.hpp"

namespace relab {

// One prompt the run uses: a built-in id, or a template file with an
// explicit parse format.
struct PromptSpec {
  std::string id;
  std::filesystem::path file;  // empty = built-in
  std::optional<ParseFormat> format;
};

// The single declarative run configuration. Secrets stay in environment
// variables; everything else lives here so the config digest pins the run.
struct HarnessConfig {
  uint64_t master_seed = 1;
  int pool_depth = 10;
  // A (model, prompt, condition) cell whose missing-label rate exceeds this
  // makes the CLI exit with code 2.
  double missing_threshold = 0.2;
  size_t nonrel_n = 50;

  std::filesystem::path queries_path;
  std::filesystem::path passages_path;
  std::filesystem::path qrels_path;
  std::filesystem::path word_pool_path;
  std::vector<std::pair<std::filesystem::path, std::string>> runs;  // path, tag
  std::filesystem::path out_dir;

  std::vector<PromptSpec> prompts;
  std::vector<ModelConfig> models;
  std::vector<Condition> conditions;  // for gullibility runs

  // Comparison constants copied verbatim into the report summary.
  std::map<std::string, double> baselines{
      {"human_p_label1", kHumanPLabel1Baseline}};

  // Raw config bytes, kept for the digest.
  std::string raw_text;
};

// Parses and validates the JSON config file; relative paths are resolved
// against the config file's directory. Unknown keys are rejected.
HarnessConfig load_config(const std::filesystem::path& path);

struct PriceTable {
  // model_id -> (price_in_per_1k, price_out_per_1k) in USD
  std::map<std::string, std::pair<double, double>> per_model;
};
PriceTable price_table(const std::vector<ModelConfig>& models);

// Loaded and cross-checked inputs. judged_pool is the top-k union filtered
// to human-judged pairs; with no run files configured it falls back to all
// judged pairs.
struct Collection {
  std::vector<Query> queries;
  std::map<std::string, Passage> passages;
  std::vector<Judgement> qrels;
  std::map<QidPid, int> human_grades;
  std::set<QidPid> judged_pool;
  WordPool word_pool;  // empty unless word_pool_path is set
};
Collection ingest(const HarnessConfig& config);

struct RunManifest {
  std::string run_id;
  std::string config_digest;
  uint64_t master_seed = 0;
  std::string command;
  std::string started;   // ISO 8601 UTC wall-clock; not covered by the
  std::string finished;  // byte-stability guarantee of the report files
  std::map<std::string, long long> counts_per_condition;
  // "model|prompt|condition" -> missing-label rate over persisted records
  std::map<std::string, double> missing_rates;
  // "model|prompt" -> sampled non-relevant pairs (reused across that cell's
  // conditions) and the shortfall against nonrel_n
  std::map<std::string, std::pair<std::vector<QidPid>, size_t>> nonrel_samples;
  long long tokens_in = 0;
  long long tokens_out = 0;
  bool tokens_estimated_any = false;
  double estimated_cost_usd = 0.0;
  std::filesystem::path path;  // where manifest.json was written
};

using ModelPrompt = std::pair<std::string, std::string>;
using ModelPromptCondition = std::tuple<std::string, std::string, std::string>;

struct NaturalRunResult {
  std::map<ModelPrompt, AgreementReport> agreement;
  std::map<ModelPrompt, QueryMatchReport> query_match;
  RunManifest manifest;
};

// Labels every judged (qid,pid) once per (model, prompt), resuming from the
// persisted label store, then recomputes and emits the agreement reports.
NaturalRunResult run_natural(const HarnessConfig& config);

struct GullibilityRunResult {
  std::map<ModelPromptCondition, GullibilityReport> reports;
  // (model, condition key) -> MAE averaged over the prompts where defined
  std::map<ModelPrompt, Stat> prompt_averaged;
  RunManifest manifest;
};

// Builds the configured adversarial conditions, labels them, and emits
// gullibility reports. NonRelP conditions need the natural run's labels for
// the same (model, prompt) to define the doubly-non-relevant pool.
GullibilityRunResult run_gullibility(const HarnessConfig& config);

struct CorrelationResult {
  // family is "keyword_stuffing" or "instruction"
  std::map<std::string, CorrelationReport> by_family;
  RunManifest manifest;
};

// Pearson's rho between agreement kappa and mean gullibility MAE per
// (model, prompt) cell, from the previously emitted report summary.
CorrelationResult correlate(const HarnessConfig& config);

// Mean per-label USD cost scaled to 10000 labels, per (model, prompt).
// Throws ConfigError when a record's model is missing from the table.
std::map<ModelPrompt, double> cost_per_10k(
    const std::vector<LabelRecord>& records, const PriceTable& prices);

struct CostResult {
  std::map<ModelPrompt, double> per_10k;
  RunManifest manifest;
};
CostResult cost_report(const HarnessConfig& config);

// Recomputes every report from the persisted label store without calling
// any backend; the recovery path after an interrupted run.
struct ReportResult {
  NaturalRunResult natural;
  GullibilityRunResult gullibility;
  RunManifest manifest;
};
ReportResult rebuild_reports(const HarnessConfig& config);

// Loads inputs, pools, and validates; returns the counts manifest.
RunManifest ingest_summary(const HarnessConfig& config);

// JSONL label store access (used by the run functions and by tests).
std::vector<LabelRecord> load_label_records(const std::filesystem::path& path);

// Deterministic demo/test collection: queries.tsv, passages.jsonl,
// qrels.txt, run_a.txt, and word_pool.txt under dir. Vocabulary is shared
// between queries, passages, and the word pool, so random passages overlap
// queries only by chance.
struct SynthSpec {
  size_t n_queries = 20;
  size_t n_passages = 200;
  size_t vocab = 5000;
  size_t pool_tokens = 12000;
  size_t judged_per_query = 10;
  size_t passage_words = 50;
  size_t query_words = 4;
  uint64_t seed = 1;
};
void write_synthetic_collection(const std::filesystem::path& dir,
                                const SynthSpec& spec);

}  // namespace relab
