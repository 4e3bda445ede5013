#include "relab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "relab/errors.hpp"
#include "relab/parsing.hpp"
#include "relab/rng.hpp"

namespace relab {

namespace {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Formatting helpers

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fmt_money(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_stat(const Stat& s) {
  return s.defined() ? fmt_double(*s.value) : std::string();
}

// Accumulates "name: reason" notes for the CSV reason column.
void note_undefined(std::string* out, const char* name, const Stat& s) {
  if (s.defined()) return;
  if (!out->empty()) *out += "; ";
  *out += name;
  *out += ": ";
  *out += s.reason;
}

std::string iso_now() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (const char c : s) {
    if (c == '"') quoted += "\"\"";
    else quoted.push_back(c);
  }
  quoted += '"';
  return quoted;
}

void write_csv(const std::filesystem::path& path, const std::string& header,
               const std::vector<std::vector<std::string>>& rows) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write file: " + path.string());
  out << header << '\n';
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << csv_field(row[i]);
    }
    out << '\n';
  }
}

std::string read_file_or_empty(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string cell_key(const std::string& model, const std::string& prompt) {
  return model + "|" + prompt;
}

std::string cell_key(const std::string& model, const std::string& prompt,
                     const std::string& condition) {
  return model + "|" + prompt + "|" + condition;
}

// ---------------------------------------------------------------------------
// Config file

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* key : allowed) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown key \"" + item.key() + "\" in " + where);
    }
  }
}

uint64_t parse_seed_value(const json& v) {
  if (v.is_number_unsigned()) return v.get<uint64_t>();
  if (v.is_number_integer()) {
    const long long s = v.get<long long>();
    if (s < 0) throw ConfigError("master_seed must be non-negative");
    return static_cast<uint64_t>(s);
  }
  if (v.is_string()) {
    try {
      size_t pos = 0;
      const uint64_t s = std::stoull(v.get<std::string>(), &pos);
      if (pos != v.get<std::string>().size()) throw std::invalid_argument("");
      return s;
    } catch (const std::exception&) {
      throw ConfigError("master_seed string is not a decimal integer");
    }
  }
  throw ConfigError("master_seed must be an integer or a decimal string");
}

ModelConfig parse_model(const json& m, const std::filesystem::path& base) {
  (void)base;
  if (!m.is_object()) throw ConfigError("each model must be an object");
  check_keys(m,
             {"model_id", "endpoint", "auth_env", "temperature", "top_p",
              "frequency_penalty", "presence_penalty", "max_retries",
              "max_parallel", "retry_base_ms", "price_in_per_1k",
              "price_out_per_1k", "content_pointer", "tokens_in_pointer",
              "tokens_out_pointer", "mock", "grade", "thresholds"},
             "models[]");
  ModelConfig config;
  if (m.contains("model_id")) config.model_id = m["model_id"].get<std::string>();
  if (m.contains("endpoint")) config.endpoint = m["endpoint"].get<std::string>();
  if (m.contains("auth_env")) config.auth_env = m["auth_env"].get<std::string>();
  if (m.contains("temperature")) config.temperature = m["temperature"].get<double>();
  if (m.contains("top_p")) config.top_p = m["top_p"].get<double>();
  if (m.contains("frequency_penalty")) {
    config.frequency_penalty = m["frequency_penalty"].get<double>();
  }
  if (m.contains("presence_penalty")) {
    config.presence_penalty = m["presence_penalty"].get<double>();
  }
  if (m.contains("max_retries")) config.max_retries = m["max_retries"].get<int>();
  if (m.contains("max_parallel")) {
    config.max_parallel = m["max_parallel"].get<int>();
  }
  if (m.contains("retry_base_ms")) {
    config.retry_base_ms = m["retry_base_ms"].get<int>();
  }
  if (m.contains("price_in_per_1k")) {
    config.price_in_per_1k = m["price_in_per_1k"].get<double>();
  }
  if (m.contains("price_out_per_1k")) {
    config.price_out_per_1k = m["price_out_per_1k"].get<double>();
  }
  if (m.contains("content_pointer")) {
    config.content_pointer = m["content_pointer"].get<std::string>();
  }
  if (m.contains("tokens_in_pointer")) {
    config.tokens_in_pointer = m["tokens_in_pointer"].get<std::string>();
  }
  if (m.contains("tokens_out_pointer")) {
    config.tokens_out_pointer = m["tokens_out_pointer"].get<std::string>();
  }
  if (m.contains("mock")) config.mock_kind = m["mock"].get<std::string>();
  if (m.contains("grade")) config.mock_grade = m["grade"].get<int>();
  if (m.contains("thresholds")) {
    const auto& t = m["thresholds"];
    if (!t.is_array() || t.size() != 3) {
      throw ConfigError("thresholds must be an array of 3 numbers");
    }
    for (size_t i = 0; i < 3; ++i) {
      config.keyword_thresholds[i] = t[i].get<double>();
    }
  }
  if (config.model_id.empty()) config.model_id = config.mock_kind;
  if (config.model_id.empty()) {
    throw ConfigError("a model needs a model_id (or a mock kind)");
  }
  if (config.mock_kind.empty() && config.endpoint.empty()) {
    throw ConfigError("model " + config.model_id +
                      " needs an endpoint or a mock kind");
  }
  if (config.max_parallel < 1) {
    throw ConfigError("model " + config.model_id + ": max_parallel must be >= 1");
  }
  if (config.max_retries < 0) {
    throw ConfigError("model " + config.model_id + ": max_retries must be >= 0");
  }
  if (config.price_in_per_1k < 0 || config.price_out_per_1k < 0) {
    throw ConfigError("model " + config.model_id + ": prices must be >= 0");
  }
  return config;
}

}  // namespace

HarnessConfig load_config(const std::filesystem::path& path) {
  const std::string text = read_file_or_empty(path);
  if (text.empty()) throw ConfigError("cannot read config file: " + path.string());
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": bad JSON: " + e.what());
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  check_keys(root,
             {"master_seed", "pool_depth", "missing_threshold", "nonrel_n",
              "paths", "prompts", "models", "conditions", "baselines"},
             "config");

  HarnessConfig config;
  config.raw_text = text;
  const std::filesystem::path base = path.parent_path();
  const auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };

  if (root.contains("master_seed")) {
    config.master_seed = parse_seed_value(root["master_seed"]);
  }
  if (root.contains("pool_depth")) {
    config.pool_depth = root["pool_depth"].get<int>();
    if (config.pool_depth < 1) throw ConfigError("pool_depth must be >= 1");
  }
  if (root.contains("missing_threshold")) {
    config.missing_threshold = root["missing_threshold"].get<double>();
    if (config.missing_threshold < 0 || config.missing_threshold > 1) {
      throw ConfigError("missing_threshold must be in [0,1]");
    }
  }
  if (root.contains("nonrel_n")) {
    const long long n = root["nonrel_n"].get<long long>();
    if (n < 1) throw ConfigError("nonrel_n must be >= 1");
    config.nonrel_n = static_cast<size_t>(n);
  }

  if (!root.contains("paths") || !root["paths"].is_object()) {
    throw ConfigError("config needs a \"paths\" object");
  }
  const json& paths = root["paths"];
  check_keys(paths,
             {"queries", "passages", "qrels", "word_pool", "runs", "out_dir"},
             "paths");
  if (paths.contains("queries")) {
    config.queries_path = resolve(paths["queries"].get<std::string>());
  }
  if (paths.contains("passages")) {
    config.passages_path = resolve(paths["passages"].get<std::string>());
  }
  if (paths.contains("qrels")) {
    config.qrels_path = resolve(paths["qrels"].get<std::string>());
  }
  if (paths.contains("word_pool")) {
    config.word_pool_path = resolve(paths["word_pool"].get<std::string>());
  }
  if (paths.contains("runs")) {
    for (const auto& run : paths["runs"]) {
      if (!run.is_object() || !run.contains("path") || !run.contains("tag")) {
        throw ConfigError("each run needs {\"path\": ..., \"tag\": ...}");
      }
      check_keys(run, {"path", "tag"}, "paths.runs[]");
      config.runs.emplace_back(resolve(run["path"].get<std::string>()),
                               run["tag"].get<std::string>());
    }
  }
  if (!paths.contains("out_dir")) {
    throw ConfigError("paths needs an \"out_dir\"");
  }
  config.out_dir = resolve(paths["out_dir"].get<std::string>());

  if (!root.contains("prompts") || !root["prompts"].is_array() ||
      root["prompts"].empty()) {
    throw ConfigError("config needs a non-empty \"prompts\" array");
  }
  std::set<std::string> prompt_ids;
  for (const auto& entry : root["prompts"]) {
    PromptSpec spec;
    if (entry.is_string()) {
      spec.id = entry.get<std::string>();
    } else if (entry.is_object()) {
      check_keys(entry, {"id", "file", "format"}, "prompts[]");
      if (!entry.contains("id")) throw ConfigError("prompt entry needs an id");
      spec.id = entry["id"].get<std::string>();
      if (entry.contains("file")) {
        spec.file = resolve(entry["file"].get<std::string>());
        if (!entry.contains("format")) {
          throw ConfigError("file prompt " + spec.id +
                            " needs a \"format\" (single_number, "
                            "category_last_line, or scored_object)");
        }
      }
      if (entry.contains("format")) {
        spec.format = parse_format_from_string(entry["format"].get<std::string>());
      }
    } else {
      throw ConfigError("each prompt must be a string id or an object");
    }
    if (!prompt_ids.insert(spec.id).second) {
      throw ConfigError("duplicate prompt id: " + spec.id);
    }
    config.prompts.push_back(std::move(spec));
  }

  if (root.contains("models")) {
    if (!root["models"].is_array()) {
      throw ConfigError("\"models\" must be an array");
    }
    std::set<std::string> ids;
    for (const auto& m : root["models"]) {
      ModelConfig mc = parse_model(m, base);
      if (!ids.insert(mc.model_id).second) {
        throw ConfigError("duplicate model_id: " + mc.model_id);
      }
      config.models.push_back(std::move(mc));
    }
  }

  if (root.contains("baselines")) {
    if (!root["baselines"].is_object()) {
      throw ConfigError("\"baselines\" must be an object of numbers");
    }
    for (const auto& item : root["baselines"].items()) {
      if (!item.value().is_number()) {
        throw ConfigError("baseline " + item.key() + " must be a number");
      }
      config.baselines[item.key()] = item.value().get<double>();
    }
  }

  if (root.contains("conditions")) {
    if (!root["conditions"].is_array()) {
      throw ConfigError("\"conditions\" must be an array of condition keys");
    }
    std::set<std::string> keys;
    for (const auto& c : root["conditions"]) {
      const Condition cond = condition_from_key(c.get<std::string>());
      if (cond.kind == ConditionKind::natural) {
        throw ConfigError(
            "\"conditions\" lists gullibility conditions; the natural pass "
            "is the `run natural` command");
      }
      if (!keys.insert(cond.key()).second) {
        throw ConfigError("duplicate condition: " + cond.key());
      }
      config.conditions.push_back(cond);
    }
  }
  return config;
}

PriceTable price_table(const std::vector<ModelConfig>& models) {
  PriceTable table;
  for (const auto& m : models) {
    table.per_model[m.model_id] = {m.price_in_per_1k, m.price_out_per_1k};
  }
  return table;
}

Collection ingest(const HarnessConfig& config) {
  Collection c;
  if (!config.queries_path.empty()) {
    c.queries = load_queries(config.queries_path);
  }
  if (!config.passages_path.empty()) {
    for (auto& p : load_passages(config.passages_path)) {
      c.passages.emplace(p.pid, std::move(p));
    }
  }
  if (!config.qrels_path.empty()) {
    c.qrels = load_qrels(config.qrels_path);
    for (const auto& j : c.qrels) c.human_grades[{j.qid, j.pid}] = j.grade;
  }
  if (!config.word_pool_path.empty()) {
    c.word_pool = load_word_pool(config.word_pool_path);
  }
  if (!config.runs.empty()) {
    std::vector<std::vector<RunEntry>> runs;
    for (const auto& [path, tag] : config.runs) {
      runs.push_back(load_run(path, tag));
    }
    c.judged_pool = filter_judged(pool_top_k(runs, config.pool_depth), c.qrels);
  } else {
    // No run files: judge the whole qrels (the pool is the judged set).
    for (const auto& j : c.qrels) c.judged_pool.insert({j.qid, j.pid});
  }
  return c;
}

namespace {

// ---------------------------------------------------------------------------
// Label store: append-only JSONL keyed by (model, prompt, condition, qid,
// pid). On load, a later line for the same key supersedes an earlier one, so
// a retried failure overwrites its errored record.

using StoreKey =
    std::tuple<std::string, std::string, std::string, std::string, std::string>;

StoreKey key_of(const LabelRecord& r) {
  return {r.model_id, r.prompt_id, r.condition_key, r.qid, r.pid};
}

json record_to_json(const LabelRecord& r) {
  json j{{"model", r.model_id},     {"prompt", r.prompt_id},
         {"condition", r.condition_key}, {"qid", r.qid},
         {"pid", r.pid},            {"raw", r.raw_response},
         {"tokens_in", r.tokens_in}, {"tokens_out", r.tokens_out}};
  if (r.parsed_grade) j["grade"] = *r.parsed_grade;
  if (!r.aux_scores.empty()) j["aux"] = r.aux_scores;
  if (r.tokens_estimated) j["tokens_estimated"] = true;
  if (r.error) j["error"] = *r.error;
  return j;
}

LabelRecord record_from_json(const json& j) {
  LabelRecord r;
  r.model_id = j.at("model").get<std::string>();
  r.prompt_id = j.at("prompt").get<std::string>();
  r.condition_key = j.at("condition").get<std::string>();
  r.qid = j.at("qid").get<std::string>();
  r.pid = j.at("pid").get<std::string>();
  r.raw_response = j.at("raw").get<std::string>();
  r.tokens_in = j.at("tokens_in").get<long long>();
  r.tokens_out = j.at("tokens_out").get<long long>();
  if (j.contains("grade")) r.parsed_grade = j["grade"].get<int>();
  if (j.contains("aux")) {
    for (const auto& item : j["aux"].items()) {
      r.aux_scores[item.key()] = item.value().get<double>();
    }
  }
  if (j.contains("tokens_estimated")) {
    r.tokens_estimated = j["tokens_estimated"].get<bool>();
  }
  if (j.contains("error")) r.error = j["error"].get<std::string>();
  return r;
}

class LabelStore {
 public:
  explicit LabelStore(const std::filesystem::path& path) : path_(path) {
    if (std::filesystem::exists(path)) {
      for (const auto& r : load_label_records(path)) {
        records_[key_of(r)] = r;
      }
    }
    if (path.has_parent_path()) {
      std::filesystem::create_directories(path.parent_path());
    }
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw LoadError("cannot open label store: " + path.string());
  }

  // A record "holds" its key once a response was received; errored records
  // are kept but the task is retried on the next run.
  bool done(const StoreKey& key) const {
    const auto it = records_.find(key);
    return it != records_.end() && !it->second.error;
  }

  void append(LabelRecord record) {
    std::lock_guard<std::mutex> lock(mu_);
    out_ << record_to_json(record).dump() << '\n';
    out_.flush();
    records_[key_of(record)] = std::move(record);
  }

  std::vector<LabelRecord> sorted_records() const {
    std::vector<LabelRecord> out;
    out.reserve(records_.size());
    for (const auto& [key, record] : records_) out.push_back(record);
    return out;
  }

 private:
  std::filesystem::path path_;
  std::map<StoreKey, LabelRecord> records_;
  std::ofstream out_;
  std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Labelling engine

std::vector<PromptTemplate> resolve_prompts(const HarnessConfig& config) {
  std::vector<PromptTemplate> out;
  std::set<std::string> ids;
  for (const auto& spec : config.prompts) {
    PromptTemplate tpl;
    if (spec.file.empty()) {
      tpl = builtin_prompt(spec.id);
      if (spec.format) tpl.parse_format = *spec.format;
    } else {
      tpl = load_prompt_template(spec.file, spec.id, spec.format.value());
    }
    if (!ids.insert(tpl.id).second) {
      throw ConfigError("duplicate prompt id: " + tpl.id);
    }
    out.push_back(std::move(tpl));
  }
  return out;
}

// Runs one (model, prompt, condition) batch with bounded concurrency.
// Records stream into the store as they complete; report code re-sorts, so
// completion order never matters.
void label_batch(Labeller& labeller, const std::vector<LabelTask>& tasks,
                 const std::string& prompt_id, const std::string& condition_key,
                 int max_parallel, LabelStore& store) {
  if (tasks.empty()) return;
  std::atomic<size_t> next{0};
  const auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const LabelTask& task = tasks[i];
      LabelRecord record;
      record.qid = task.qid;
      record.pid = task.pid;
      record.condition_key = condition_key;
      record.prompt_id = prompt_id;
      record.model_id = labeller.model_id();
      try {
        BackendResult result = labeller.label(task);
        record.raw_response = std::move(result.raw_response);
        record.tokens_in = result.tokens_in;
        record.tokens_out = result.tokens_out;
        record.tokens_estimated = result.tokens_estimated;
        record.error = std::move(result.error);
        if (!record.error) {
          ParsedLabel parsed = parse_label(record.raw_response, task.format);
          record.parsed_grade = parsed.grade;
          record.aux_scores = std::move(parsed.aux);
        }
      } catch (const std::exception& e) {
        record.error = std::string("backend_exception: ") + e.what();
      }
      store.append(std::move(record));
    }
  };
  const int threads =
      std::max(1, std::min<int>(max_parallel,
                                static_cast<int>(tasks.size())));
  if (threads == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

struct Engine {
  const HarnessConfig* config = nullptr;
  Collection collection;
  std::vector<PromptTemplate> prompts;
  std::unique_ptr<LabelStore> store;
  RunManifest manifest;
  std::map<std::string, const Query*> query_by_id;
};

std::string config_digest(const HarnessConfig& config) {
  uint64_t h = fnv1a64(config.raw_text);
  const auto fold = [&](const char* role, const std::filesystem::path& path) {
    if (path.empty()) return;
    h = fnv1a64(role, h);
    h = fnv1a64(read_file_or_empty(path), h);
  };
  fold("queries", config.queries_path);
  fold("passages", config.passages_path);
  fold("qrels", config.qrels_path);
  fold("word_pool", config.word_pool_path);
  for (const auto& [path, tag] : config.runs) {
    h = fnv1a64(tag, h);
    fold("run", path);
  }
  for (const auto& spec : config.prompts) fold("prompt", spec.file);
  return seed_hex(h);
}

Engine open_engine(const HarnessConfig& config, const std::string& command) {
  Engine engine;
  engine.config = &config;
  engine.collection = ingest(config);
  engine.prompts = resolve_prompts(config);
  for (const auto& q : engine.collection.queries) {
    engine.query_by_id[q.qid] = &q;
  }
  std::filesystem::create_directories(config.out_dir);
  engine.store = std::make_unique<LabelStore>(config.out_dir / "labels.jsonl");
  engine.manifest.command = command;
  engine.manifest.started = iso_now();
  engine.manifest.master_seed = config.master_seed;
  engine.manifest.config_digest = config_digest(config);
  engine.manifest.run_id =
      "run-" + seed_hex(fnv1a64(engine.manifest.config_digest + "|" +
                                std::to_string(config.master_seed)))
                   .substr(0, 12);
  return engine;
}

const Query& query_or_throw(const Engine& engine, const std::string& qid) {
  const auto it = engine.query_by_id.find(qid);
  if (it == engine.query_by_id.end()) {
    throw ConfigError("query " + qid + " is judged but missing from queries");
  }
  return *it->second;
}

// ---------------------------------------------------------------------------
// Reports from the persisted store

struct GroupedRecords {
  std::map<ModelPrompt, std::vector<const LabelRecord*>> natural;
  std::map<ModelPromptCondition, std::vector<const LabelRecord*>> adversarial;
};

GroupedRecords group_records(const std::vector<LabelRecord>& records) {
  GroupedRecords grouped;
  for (const auto& r : records) {
    if (r.condition_key == "Natural") {
      grouped.natural[{r.model_id, r.prompt_id}].push_back(&r);
    } else {
      grouped.adversarial[{r.model_id, r.prompt_id, r.condition_key}].push_back(
          &r);
    }
  }
  return grouped;
}

AgreementReport build_agreement(const std::vector<const LabelRecord*>& records,
                                const std::map<QidPid, int>& human_grades) {
  std::vector<std::pair<int, int>> pairs;
  long long missing = 0;
  for (const LabelRecord* r : records) {
    if (!r->parsed_grade) {
      ++missing;
      continue;
    }
    const auto it = human_grades.find({r->qid, r->pid});
    if (it == human_grades.end()) continue;  // not a judged pair; skip
    pairs.emplace_back(it->second, *r->parsed_grade);
  }
  return agreement_report(pairs, missing);
}

QueryMatchReport build_query_match(
    const std::vector<const LabelRecord*>& records, const Engine& engine) {
  std::vector<CellItem> items;
  for (const LabelRecord* r : records) {
    if (!r->parsed_grade) continue;
    const auto human = engine.collection.human_grades.find({r->qid, r->pid});
    const auto passage = engine.collection.passages.find(r->pid);
    const auto query = engine.query_by_id.find(r->qid);
    if (human == engine.collection.human_grades.end() ||
        passage == engine.collection.passages.end() ||
        query == engine.query_by_id.end()) {
      continue;
    }
    items.push_back(CellItem{
        human->second, *r->parsed_grade,
        query_match_ratio(*query->second, passage->second)});
  }
  return query_match_by_cell(items);
}

GullibilityReport build_gullibility(
    const std::string& condition_key,
    const std::vector<const LabelRecord*>& records) {
  GullibilityReport report;
  report.condition = condition_from_key(condition_key);
  std::vector<int> labels;
  for (const LabelRecord* r : records) {
    if (r->parsed_grade) labels.push_back(*r->parsed_grade);
    else ++report.n_missing;
  }
  report.n = static_cast<long long>(labels.size());
  report.mae = labels.empty()
                   ? Stat::undefined("all labels unparsable")
                   : Stat::of(gullibility_mae(labels));
  return report;
}

// ---------------------------------------------------------------------------
// Emission

json load_summary(const std::filesystem::path& out_dir) {
  const std::string text = read_file_or_empty(out_dir / "summary.json");
  if (text.empty()) return json::object();
  try {
    json j = json::parse(text);
    if (j.is_object()) return j;
  } catch (const json::exception&) {
    // fall through: a corrupt summary is rebuilt from scratch
  }
  return json::object();
}

void save_summary(const std::filesystem::path& out_dir, const json& summary) {
  std::ofstream out(out_dir / "summary.json", std::ios::binary);
  if (!out) {
    throw LoadError("cannot write " + (out_dir / "summary.json").string());
  }
  out << summary.dump(2) << '\n';
}

json stat_json(const Stat& s) {
  if (s.defined()) return *s.value;
  return nullptr;
}

void emit_agreement(const std::map<ModelPrompt, AgreementReport>& reports,
                    const std::map<ModelPrompt, QueryMatchReport>& match,
                    const std::map<std::string, double>& baselines,
                    const std::filesystem::path& out_dir, json* summary) {
  (*summary)["baselines"] = baselines;
  std::vector<std::vector<std::string>> rows;
  json section = json::array();
  for (const auto& [cell, report] : reports) {
    std::string reason;
    note_undefined(&reason, "kappa", report.kappa);
    note_undefined(&reason, "alpha", report.alpha);
    note_undefined(&reason, "mae_binary", report.mae_binary);
    note_undefined(&reason, "mae_graded", report.mae_graded);
    note_undefined(&reason, "accuracy", report.accuracy);
    note_undefined(&reason, "prec_label0", report.prec_label0);
    note_undefined(&reason, "prec_label1", report.prec_label1);
    note_undefined(&reason, "p_label1", report.p_label1);
    rows.push_back({cell.first, cell.second, fmt_stat(report.kappa),
                    fmt_stat(report.alpha), fmt_stat(report.mae_binary),
                    fmt_stat(report.mae_graded), fmt_stat(report.accuracy),
                    fmt_stat(report.prec_label0), fmt_stat(report.prec_label1),
                    fmt_stat(report.p_label1), std::to_string(report.n),
                    std::to_string(report.n_missing), reason});
    section.push_back(json{{"model", cell.first},
                           {"prompt", cell.second},
                           {"kappa", stat_json(report.kappa)},
                           {"alpha", stat_json(report.alpha)},
                           {"mae_binary", stat_json(report.mae_binary)},
                           {"mae_graded", stat_json(report.mae_graded)},
                           {"accuracy", stat_json(report.accuracy)},
                           {"prec_label0", stat_json(report.prec_label0)},
                           {"prec_label1", stat_json(report.prec_label1)},
                           {"p_label1", stat_json(report.p_label1)},
                           {"n", report.n},
                           {"n_missing", report.n_missing},
                           {"reason", reason}});
  }
  write_csv(out_dir / "agreement.csv",
            "model,prompt,kappa,alpha,mae_binary,mae_graded,accuracy,"
            "prec_label0,prec_label1,p_label1,n,n_missing,reason",
            rows);
  (*summary)["agreement"] = std::move(section);

  rows.clear();
  json match_section = json::array();
  for (const auto& [cell, report] : match) {
    std::string reason;
    note_undefined(&reason, "tp_ratio", report.tp_ratio);
    note_undefined(&reason, "tn_ratio", report.tn_ratio);
    note_undefined(&reason, "fp_ratio", report.fp_ratio);
    note_undefined(&reason, "fn_ratio", report.fn_ratio);
    rows.push_back({cell.first, cell.second, fmt_stat(report.tp_ratio),
                    fmt_stat(report.tn_ratio), fmt_stat(report.fp_ratio),
                    fmt_stat(report.fn_ratio), reason});
    match_section.push_back(json{{"model", cell.first},
                                 {"prompt", cell.second},
                                 {"tp_ratio", stat_json(report.tp_ratio)},
                                 {"tn_ratio", stat_json(report.tn_ratio)},
                                 {"fp_ratio", stat_json(report.fp_ratio)},
                                 {"fn_ratio", stat_json(report.fn_ratio)},
                                 {"reason", reason}});
  }
  write_csv(out_dir / "querymatch.csv",
            "model,prompt,tp_ratio,tn_ratio,fp_ratio,fn_ratio,reason", rows);
  (*summary)["query_match"] = std::move(match_section);
}

void emit_gullibility(
    const std::map<ModelPromptCondition, GullibilityReport>& reports,
    const std::map<ModelPrompt, Stat>& averaged,
    const std::filesystem::path& out_dir, json* summary) {
  std::vector<std::vector<std::string>> rows;
  json section = json::array();
  for (const auto& [cell, report] : reports) {
    const auto& [model, prompt, condition] = cell;
    std::string reason;
    note_undefined(&reason, "mae", report.mae);
    rows.push_back({model, prompt, condition, fmt_stat(report.mae),
                    std::to_string(report.n), std::to_string(report.n_missing),
                    reason});
    section.push_back(json{{"model", model},
                           {"prompt", prompt},
                           {"condition", condition},
                           {"mae", stat_json(report.mae)},
                           {"n", report.n},
                           {"n_missing", report.n_missing},
                           {"reason", reason}});
  }
  write_csv(out_dir / "gullibility.csv",
            "model,prompt,condition,mae,n,n_missing,reason", rows);
  (*summary)["gullibility"] = std::move(section);

  rows.clear();
  json avg_section = json::array();
  for (const auto& [cell, stat] : averaged) {
    const auto& [model, condition] = cell;
    std::string reason;
    note_undefined(&reason, "mean_mae", stat);
    rows.push_back({model, condition, fmt_stat(stat), reason});
    avg_section.push_back(json{{"model", model},
                               {"condition", condition},
                               {"mean_mae", stat_json(stat)},
                               {"reason", reason}});
  }
  write_csv(out_dir / "gullibility_prompt_avg.csv",
            "model,condition,mean_mae,reason", rows);
  (*summary)["gullibility_prompt_avg"] = std::move(avg_section);
}

std::map<ModelPrompt, Stat> average_over_prompts(
    const std::map<ModelPromptCondition, GullibilityReport>& reports) {
  std::map<ModelPrompt, std::vector<double>> values;  // (model, condition)
  std::map<ModelPrompt, bool> seen;
  for (const auto& [cell, report] : reports) {
    const auto& [model, prompt, condition] = cell;
    (void)prompt;
    seen[{model, condition}] = true;
    if (report.mae.defined()) {
      values[{model, condition}].push_back(*report.mae.value);
    }
  }
  std::map<ModelPrompt, Stat> averaged;
  for (const auto& [cell, present] : seen) {
    (void)present;
    const auto it = values.find(cell);
    if (it == values.end() || it->second.empty()) {
      averaged[cell] = Stat::undefined("no prompt produced a defined MAE");
      continue;
    }
    double sum = 0.0;
    for (const double v : it->second) sum += v;
    averaged[cell] = Stat::of(sum / static_cast<double>(it->second.size()));
  }
  return averaged;
}

double record_cost(const LabelRecord& r, const PriceTable& prices,
                   bool strict) {
  const auto it = prices.per_model.find(r.model_id);
  if (it == prices.per_model.end()) {
    if (strict) {
      throw ConfigError("model " + r.model_id + " has no price table entry");
    }
    return 0.0;
  }
  return static_cast<double>(r.tokens_in) / 1000.0 * it->second.first +
         static_cast<double>(r.tokens_out) / 1000.0 * it->second.second;
}

// Commands that do not themselves draw NonRelP samples keep the pairs the
// last gullibility run recorded, so the manifest never loses them.
void carry_over_nonrel(Engine* engine) {
  RunManifest& manifest = engine->manifest;
  if (!manifest.nonrel_samples.empty()) return;
  const std::string text =
      read_file_or_empty(engine->config->out_dir / "manifest.json");
  if (text.empty()) return;
  json previous;
  try {
    previous = json::parse(text);
  } catch (const json::exception&) {
    return;
  }
  if (!previous.is_object() || !previous.contains("nonrel_samples") ||
      !previous["nonrel_samples"].is_object()) {
    return;
  }
  for (const auto& item : previous["nonrel_samples"].items()) {
    std::vector<QidPid> pairs;
    for (const auto& pair : item.value().at("pairs")) {
      pairs.emplace_back(pair.at(0).get<std::string>(),
                         pair.at(1).get<std::string>());
    }
    manifest.nonrel_samples[item.key()] = {
        std::move(pairs), item.value().at("shortfall").get<size_t>()};
  }
}

void finalize_manifest(Engine* engine) {
  carry_over_nonrel(engine);
  const HarnessConfig& config = *engine->config;
  RunManifest& manifest = engine->manifest;
  const auto records = engine->store->sorted_records();
  const PriceTable prices = price_table(config.models);

  std::map<std::string, std::vector<const LabelRecord*>> by_cell;
  std::map<std::string, std::set<QidPid>> pairs_by_condition;
  manifest.tokens_in = 0;
  manifest.tokens_out = 0;
  manifest.tokens_estimated_any = false;
  manifest.estimated_cost_usd = 0.0;
  for (const auto& r : records) {
    by_cell[cell_key(r.model_id, r.prompt_id, r.condition_key)].push_back(&r);
    pairs_by_condition[r.condition_key].insert({r.qid, r.pid});
    manifest.tokens_in += r.tokens_in;
    manifest.tokens_out += r.tokens_out;
    manifest.tokens_estimated_any |= r.tokens_estimated;
    manifest.estimated_cost_usd += record_cost(r, prices, /*strict=*/false);
  }
  manifest.missing_rates.clear();
  for (const auto& [cell, cell_records] : by_cell) {
    long long missing = 0;
    for (const LabelRecord* r : cell_records) {
      if (!r->parsed_grade) ++missing;
    }
    manifest.missing_rates[cell] = static_cast<double>(missing) /
                                   static_cast<double>(cell_records.size());
  }
  // Recorded labels overwrite per-condition counts; counts seeded from the
  // pool (the ingest command, before any labelling) survive when the store
  // has nothing for that condition yet.
  for (const auto& [condition, pairs] : pairs_by_condition) {
    manifest.counts_per_condition[condition] =
        static_cast<long long>(pairs.size());
  }
  manifest.finished = iso_now();

  json nonrel = json::object();
  for (const auto& [cell, sample] : manifest.nonrel_samples) {
    json pairs = json::array();
    for (const auto& [qid, pid] : sample.first) {
      pairs.push_back(json::array({qid, pid}));
    }
    nonrel[cell] = json{{"pairs", std::move(pairs)},
                        {"shortfall", sample.second},
                        {"note",
                         "sampled once per model|prompt and reused across "
                         "that cell's NonRelP conditions"}};
  }
  const json j{{"run_id", manifest.run_id},
               {"config_digest", manifest.config_digest},
               {"master_seed", std::to_string(manifest.master_seed)},
               {"command", manifest.command},
               {"started", manifest.started},
               {"finished", manifest.finished},
               {"counts_per_condition", manifest.counts_per_condition},
               {"missing_rates", manifest.missing_rates},
               {"nonrel_samples", std::move(nonrel)},
               {"tokens_in", manifest.tokens_in},
               {"tokens_out", manifest.tokens_out},
               {"tokens_estimated_any", manifest.tokens_estimated_any},
               {"estimated_cost_usd", manifest.estimated_cost_usd}};
  manifest.path = config.out_dir / "manifest.json";
  std::ofstream out(manifest.path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + manifest.path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Natural and gullibility passes

void require_labelling_config(const HarnessConfig& config) {
  if (config.models.empty()) {
    throw ConfigError("config has no models to label with");
  }
}

NaturalRunResult natural_reports(Engine* engine) {
  NaturalRunResult result;
  const auto records = engine->store->sorted_records();
  const GroupedRecords grouped = group_records(records);
  for (const auto& [cell, cell_records] : grouped.natural) {
    result.agreement[cell] =
        build_agreement(cell_records, engine->collection.human_grades);
    result.query_match[cell] = build_query_match(cell_records, *engine);
  }
  return result;
}

GullibilityRunResult gullibility_reports(Engine* engine) {
  GullibilityRunResult result;
  const auto records = engine->store->sorted_records();
  const GroupedRecords grouped = group_records(records);
  for (const auto& [cell, cell_records] : grouped.adversarial) {
    result.reports[cell] =
        build_gullibility(std::get<2>(cell), cell_records);
  }
  result.prompt_averaged = average_over_prompts(result.reports);
  return result;
}

}  // namespace

std::vector<LabelRecord> load_label_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open label store: " + path.string());
  std::vector<LabelRecord> records;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) +
                      ": bad label record: " + e.what());
    }
  }
  return records;
}

NaturalRunResult run_natural(const HarnessConfig& config) {
  require_labelling_config(config);
  Engine engine = open_engine(config, "run natural");
  if (engine.collection.judged_pool.empty()) {
    throw ConfigError("the judged pool is empty; check qrels and run files");
  }

  // Pre-render one task list per prompt; identical across models.
  std::map<std::string, std::vector<LabelTask>> tasks_by_prompt;
  for (const auto& tpl : engine.prompts) {
    auto& tasks = tasks_by_prompt[tpl.id];
    for (const auto& [qid, pid] : engine.collection.judged_pool) {
      const Query& query = query_or_throw(engine, qid);
      const auto passage = engine.collection.passages.find(pid);
      if (passage == engine.collection.passages.end()) {
        throw ConfigError("passage " + pid + " is judged but missing from "
                          "the passage file");
      }
      LabelTask task;
      task.qid = qid;
      task.pid = pid;
      task.query_text = query.text;
      task.passage_text = passage->second.text;
      task.prompt = render(tpl, query, passage->second);
      task.format = tpl.parse_format;
      tasks.push_back(std::move(task));
    }
  }

  for (const auto& model : config.models) {
    const auto labeller = make_labeller(model, engine.collection.qrels);
    for (const auto& tpl : engine.prompts) {
      std::vector<LabelTask> pending;
      for (const auto& task : tasks_by_prompt[tpl.id]) {
        if (!engine.store->done(
                {model.model_id, tpl.id, "Natural", task.qid, task.pid})) {
          pending.push_back(task);
        }
      }
      label_batch(*labeller, pending, tpl.id, "Natural", model.max_parallel,
                  *engine.store);
    }
  }

  NaturalRunResult result = natural_reports(&engine);
  json summary = load_summary(config.out_dir);
  emit_agreement(result.agreement, result.query_match, config.baselines,
                 config.out_dir, &summary);
  save_summary(config.out_dir, summary);
  finalize_manifest(&engine);
  result.manifest = engine.manifest;
  return result;
}

GullibilityRunResult run_gullibility(const HarnessConfig& config) {
  require_labelling_config(config);
  if (config.conditions.empty()) {
    throw ConfigError("config has no gullibility conditions");
  }
  Engine engine = open_engine(config, "run gullibility");
  if (engine.collection.queries.empty()) {
    throw ConfigError("gullibility conditions need queries");
  }

  bool any_nonrel = false;
  for (const auto& condition : config.conditions) {
    if (condition.is_rand_p() && engine.collection.word_pool.tokens.empty()) {
      throw ConfigError("condition " + condition.key() +
                        " needs paths.word_pool");
    }
    if (condition.is_nonrel_p()) any_nonrel = true;
  }
  if (any_nonrel && engine.collection.passages.empty()) {
    throw ConfigError("NonRelP conditions need paths.passages");
  }

  // Shared instances for the RandP family (same for every model and prompt).
  std::map<std::string, std::vector<TestInstance>> shared_instances;
  for (const auto& condition : config.conditions) {
    if (!condition.is_rand_p()) continue;
    ConditionInputs inputs;
    inputs.queries = &engine.collection.queries;
    inputs.word_pool = &engine.collection.word_pool;
    shared_instances[condition.key()] =
        build_condition_set(condition, inputs, config.master_seed);
  }

  // NonRelP pools depend on each (model, prompt)'s natural labels, so those
  // instances are built per cell; the sample is drawn once per cell and
  // reused across its NonRelP conditions.
  const auto store_records = engine.store->sorted_records();
  std::map<ModelPrompt, std::vector<Judgement>> natural_labels;
  for (const auto& r : store_records) {
    if (r.condition_key != "Natural" || !r.parsed_grade) continue;
    natural_labels[{r.model_id, r.prompt_id}].push_back(
        Judgement{r.qid, r.pid, *r.parsed_grade, JudgementSource::labeller});
  }

  std::map<ModelPrompt, std::vector<QidPid>> nonrel_pairs;
  if (any_nonrel) {
    for (const auto& model : config.models) {
      for (const auto& tpl : engine.prompts) {
        const ModelPrompt cell{model.model_id, tpl.id};
        const auto it = natural_labels.find(cell);
        if (it == natural_labels.end()) {
          throw ConfigError("NonRelP conditions need a prior natural run for "
                            "model " + model.model_id + " / prompt " + tpl.id);
        }
        const uint64_t seed =
            stable_seed({std::to_string(config.master_seed), "nonrel",
                         model.model_id, tpl.id});
        try {
          NonRelSample sample = sample_nonrel(engine.collection.qrels,
                                              it->second, config.nonrel_n,
                                              seed);
          engine.manifest.nonrel_samples[cell_key(model.model_id, tpl.id)] = {
              sample.pairs, sample.shortfall};
          nonrel_pairs[cell] = std::move(sample.pairs);
        } catch (const std::invalid_argument& e) {
          throw ConfigError("model " + model.model_id + " / prompt " + tpl.id +
                            ": " + e.what());
        }
      }
    }
  }

  // Everything generated, deduplicated across cells, for instances.jsonl.
  std::map<std::tuple<std::string, std::string, std::string>, TestInstance>
      all_instances;
  const auto remember = [&](const std::vector<TestInstance>& instances) {
    for (const auto& inst : instances) {
      all_instances.emplace(
          std::make_tuple(inst.condition.key(), inst.qid, inst.passage.pid),
          inst);
    }
  };
  for (const auto& [key, instances] : shared_instances) remember(instances);

  for (const auto& model : config.models) {
    const auto labeller = make_labeller(model, engine.collection.qrels);
    for (const auto& tpl : engine.prompts) {
      for (const auto& condition : config.conditions) {
        const std::string cond_key = condition.key();
        std::vector<TestInstance> cell_instances;
        if (condition.is_rand_p()) {
          cell_instances = shared_instances[cond_key];
        } else {
          ConditionInputs inputs;
          inputs.queries = &engine.collection.queries;
          inputs.pairs = &nonrel_pairs[{model.model_id, tpl.id}];
          inputs.passages = &engine.collection.passages;
          cell_instances =
              build_condition_set(condition, inputs, config.master_seed);
          remember(cell_instances);
        }
        std::vector<LabelTask> pending;
        for (const auto& inst : cell_instances) {
          if (engine.store->done({model.model_id, tpl.id, cond_key, inst.qid,
                                  inst.passage.pid})) {
            continue;
          }
          const Query& query = query_or_throw(engine, inst.qid);
          LabelTask task;
          task.qid = inst.qid;
          task.pid = inst.passage.pid;
          task.query_text = query.text;
          task.passage_text = inst.passage.text;
          task.prompt = render(tpl, query, inst.passage);
          task.format = tpl.parse_format;
          pending.push_back(std::move(task));
        }
        label_batch(*labeller, pending, tpl.id, cond_key, model.max_parallel,
                    *engine.store);
      }
    }
  }

  std::vector<TestInstance> instance_list;
  instance_list.reserve(all_instances.size());
  for (const auto& [key, inst] : all_instances) instance_list.push_back(inst);
  save_instances(instance_list, config.out_dir / "instances.jsonl");

  GullibilityRunResult result = gullibility_reports(&engine);
  json summary = load_summary(config.out_dir);
  emit_gullibility(result.reports, result.prompt_averaged, config.out_dir,
                   &summary);
  save_summary(config.out_dir, summary);
  finalize_manifest(&engine);
  result.manifest = engine.manifest;
  return result;
}

CorrelationResult correlate(const HarnessConfig& config) {
  Engine engine = open_engine(config, "correlate");
  const json summary = load_summary(config.out_dir);
  if (!summary.contains("agreement") || !summary.contains("gullibility")) {
    throw ConfigError(
        "correlate needs agreement and gullibility reports; run "
        "`run natural` and `run gullibility` first");
  }

  std::map<ModelPrompt, double> kappa;
  for (const auto& row : summary["agreement"]) {
    if (row.contains("kappa") && row["kappa"].is_number()) {
      kappa[{row["model"].get<std::string>(),
             row["prompt"].get<std::string>()}] = row["kappa"].get<double>();
    }
  }
  std::map<std::string, std::map<ModelPrompt, std::vector<double>>> maes;
  for (const auto& row : summary["gullibility"]) {
    if (!row.contains("mae") || !row["mae"].is_number()) continue;
    const Condition condition =
        condition_from_key(row["condition"].get<std::string>());
    std::string family;
    if (condition.injects_query()) family = "keyword_stuffing";
    else if (condition.injects_instruction()) family = "instruction";
    else continue;  // plain RandP baselines are not attacks
    maes[family][{row["model"].get<std::string>(),
                  row["prompt"].get<std::string>()}]
        .push_back(row["mae"].get<double>());
  }

  CorrelationResult result;
  for (const auto& [family, cells] : maes) {
    CorrelationReport report;
    std::vector<std::pair<double, double>> points;
    for (const auto& [cell, values] : cells) {
      const auto k = kappa.find(cell);
      if (k == kappa.end() || values.empty()) continue;
      double sum = 0.0;
      for (const double v : values) sum += v;
      const double mean = sum / static_cast<double>(values.size());
      points.emplace_back(k->second, mean);
      report.points.push_back(
          CorrelationPoint{cell.first, cell.second, k->second, mean});
    }
    report.rho = pearson(points);
    result.by_family[family] = std::move(report);
  }

  std::vector<std::vector<std::string>> rows;
  std::vector<std::vector<std::string>> point_rows;
  json section = json::array();
  for (const auto& [family, report] : result.by_family) {
    std::string reason;
    note_undefined(&reason, "rho", report.rho);
    rows.push_back({family, fmt_stat(report.rho),
                    std::to_string(report.points.size()), reason});
    json points = json::array();
    for (const auto& p : report.points) {
      point_rows.push_back({family, p.model_id, p.prompt_id,
                            fmt_double(p.kappa), fmt_double(p.mean_mae)});
      points.push_back(json{{"model", p.model_id},
                            {"prompt", p.prompt_id},
                            {"kappa", p.kappa},
                            {"mean_mae", p.mean_mae}});
    }
    section.push_back(json{{"family", family},
                           {"rho", stat_json(report.rho)},
                           {"n_points", report.points.size()},
                           {"reason", reason},
                           {"points", std::move(points)}});
  }
  write_csv(config.out_dir / "correlation.csv", "family,rho,n_points,reason",
            rows);
  write_csv(config.out_dir / "correlation_points.csv",
            "family,model,prompt,kappa,mean_mae", point_rows);
  json merged = summary;
  merged["correlation"] = std::move(section);
  save_summary(config.out_dir, merged);
  finalize_manifest(&engine);
  result.manifest = engine.manifest;
  return result;
}

std::map<ModelPrompt, double> cost_per_10k(
    const std::vector<LabelRecord>& records, const PriceTable& prices) {
  std::map<ModelPrompt, std::pair<double, long long>> sums;  // cost, count
  for (const auto& r : records) {
    auto& [cost, count] = sums[{r.model_id, r.prompt_id}];
    cost += record_cost(r, prices, /*strict=*/true);
    ++count;
  }
  std::map<ModelPrompt, double> out;
  for (const auto& [cell, sum] : sums) {
    out[cell] = sum.first / static_cast<double>(sum.second) * 10000.0;
  }
  return out;
}

CostResult cost_report(const HarnessConfig& config) {
  Engine engine = open_engine(config, "cost");
  const auto records = engine.store->sorted_records();
  if (records.empty()) {
    throw ConfigError("no labels recorded yet; run a labelling pass first");
  }
  CostResult result;
  result.per_10k = cost_per_10k(records, price_table(config.models));

  std::map<ModelPrompt, std::tuple<long long, long long, long long>> usage;
  for (const auto& r : records) {
    auto& [n, tin, tout] = usage[{r.model_id, r.prompt_id}];
    ++n;
    tin += r.tokens_in;
    tout += r.tokens_out;
  }
  std::vector<std::vector<std::string>> rows;
  json section = json::array();
  for (const auto& [cell, per_10k] : result.per_10k) {
    const auto& [n, tin, tout] = usage[cell];
    rows.push_back({cell.first, cell.second, std::to_string(n),
                    std::to_string(tin), std::to_string(tout),
                    fmt_money(per_10k)});
    section.push_back(json{{"model", cell.first},
                           {"prompt", cell.second},
                           {"n_records", n},
                           {"tokens_in", tin},
                           {"tokens_out", tout},
                           {"cost_per_10k_usd", per_10k}});
  }
  write_csv(config.out_dir / "cost.csv",
            "model,prompt,n_records,tokens_in,tokens_out,cost_per_10k_usd",
            rows);
  json summary = load_summary(config.out_dir);
  summary["cost"] = std::move(section);
  save_summary(config.out_dir, summary);
  finalize_manifest(&engine);
  result.manifest = engine.manifest;
  return result;
}

ReportResult rebuild_reports(const HarnessConfig& config) {
  Engine engine = open_engine(config, "report");
  ReportResult result;
  result.natural = natural_reports(&engine);
  result.gullibility = gullibility_reports(&engine);
  json summary = load_summary(config.out_dir);
  emit_agreement(result.natural.agreement, result.natural.query_match,
                 config.baselines, config.out_dir, &summary);
  emit_gullibility(result.gullibility.reports,
                   result.gullibility.prompt_averaged, config.out_dir,
                   &summary);
  save_summary(config.out_dir, summary);
  finalize_manifest(&engine);
  result.manifest = engine.manifest;
  result.natural.manifest = engine.manifest;
  result.gullibility.manifest = engine.manifest;
  return result;
}

RunManifest ingest_summary(const HarnessConfig& config) {
  Engine engine = open_engine(config, "ingest");
  engine.manifest.counts_per_condition["Natural"] =
      static_cast<long long>(engine.collection.judged_pool.size());
  finalize_manifest(&engine);
  return engine.manifest;
}

void write_synthetic_collection(const std::filesystem::path& dir,
                                const SynthSpec& spec) {
  if (spec.n_queries < 1 || spec.n_passages < 1 || spec.vocab < 2 ||
      spec.query_words < 1 || spec.passage_words < 1 ||
      spec.judged_per_query < 1 || spec.pool_tokens < 1) {
    throw ConfigError("synthetic collection sizes must be >= 1");
  }
  if (spec.n_passages < spec.judged_per_query) {
    throw ConfigError("need at least judged_per_query passages");
  }
  if (spec.query_words > spec.vocab) {
    throw ConfigError("query_words cannot exceed the vocabulary size");
  }
  std::filesystem::create_directories(dir);
  SplitMix64 rng(spec.seed);
  const auto word = [](size_t i) { return "w" + std::to_string(i); };
  const auto pad_width = [](size_t n) {
    return std::to_string(n).size();
  };
  const auto padded = [&](char prefix, size_t i, size_t total) {
    std::string digits = std::to_string(i + 1);
    std::string out(1, prefix);
    out.append(pad_width(total) - digits.size(), '0');
    out += digits;
    return out;
  };

  std::vector<Query> queries;
  for (size_t i = 0; i < spec.n_queries; ++i) {
    std::set<size_t> chosen;
    while (chosen.size() < spec.query_words) {
      chosen.insert(static_cast<size_t>(rng.bounded(spec.vocab)));
    }
    std::string text;
    for (const size_t w : chosen) {
      if (!text.empty()) text.push_back(' ');
      text += word(w);
    }
    queries.push_back(Query{padded('q', i, spec.n_queries), text});
  }
  save_queries(queries, dir / "queries.tsv");

  std::vector<Passage> passages;
  for (size_t i = 0; i < spec.n_passages; ++i) {
    std::string text;
    for (size_t k = 0; k < spec.passage_words; ++k) {
      if (!text.empty()) text.push_back(' ');
      text += word(static_cast<size_t>(rng.bounded(spec.vocab)));
    }
    Passage p;
    p.pid = padded('p', i, spec.n_passages);
    p.text = std::move(text);
    passages.push_back(std::move(p));
  }
  save_passages(passages, dir / "passages.jsonl");

  // Each query judges a contiguous block of passages with grades cycling
  // 0..3, so both binary classes appear for every query.
  std::vector<Judgement> qrels;
  std::set<QidPid> judged;
  for (size_t i = 0; i < spec.n_queries; ++i) {
    for (size_t j = 0; j < spec.judged_per_query; ++j) {
      const size_t idx = (i * spec.judged_per_query + j) % spec.n_passages;
      const Judgement judgement{queries[i].qid, passages[idx].pid,
                                static_cast<int>(j % 4),
                                JudgementSource::human};
      if (judged.insert({judgement.qid, judgement.pid}).second) {
        qrels.push_back(judgement);
      }
    }
  }
  save_qrels(qrels, dir / "qrels.txt");

  // One run per collection: the judged block fills ranks 1..k-1, an
  // unjudged distractor sits at rank k, and the last judged passage lands
  // just outside the pool depth, exercising both pooling and filtering.
  std::vector<RunEntry> run;
  for (size_t i = 0; i < spec.n_queries; ++i) {
    int rank = 1;
    const auto push = [&](size_t idx) {
      run.push_back(RunEntry{queries[i].qid, passages[idx].pid, rank,
                             static_cast<double>(
                                 spec.judged_per_query + 2 - rank),
                             "synth"});
      ++rank;
    };
    for (size_t j = 0; j + 1 < spec.judged_per_query; ++j) {
      push((i * spec.judged_per_query + j) % spec.n_passages);
    }
    const size_t distractor =
        (i * spec.judged_per_query + spec.judged_per_query + 3) %
        spec.n_passages;
    if (!judged.count({queries[i].qid, passages[distractor].pid})) {
      push(distractor);
    }
    push((i * spec.judged_per_query + spec.judged_per_query - 1) %
         spec.n_passages);
  }
  save_run(run, dir / "run_a.txt");

  WordPool pool;
  for (size_t i = 0; i < spec.pool_tokens; ++i) {
    pool.tokens.push_back(word(static_cast<size_t>(rng.bounded(spec.vocab))));
  }
  save_word_pool(pool, dir / "word_pool.txt");
}

}  // namespace relab
