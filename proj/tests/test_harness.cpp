#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relab/corpus.hpp"
#include "relab/errors.hpp"
#include "relab/harness.hpp"
#include "relab/metrics.hpp"
#include "relab/perturb.hpp"

using namespace relab;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           ("relab_harness_" + std::to_string(counter.fetch_add(1)) + "_" +
            std::to_string(reinterpret_cast<uintptr_t>(this) & 0xffff));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void spit(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << content;
}

size_t line_count(const fs::path& path) {
  const std::string text = slurp(path);
  size_t lines = 0;
  for (const char c : text) {
    if (c == '\n') ++lines;
  }
  return lines;
}

// The default demo collection, generated once and shared read-only.
const fs::path& synth_dir() {
  static TempDir dir;
  static bool written = false;
  if (!written) {
    write_synthetic_collection(dir.path, SynthSpec{});
    written = true;
  }
  return dir.path;
}

ModelConfig mock_model(const std::string& id, const std::string& kind) {
  ModelConfig m;
  m.model_id = id;
  m.mock_kind = kind;
  return m;
}

HarnessConfig base_config(const fs::path& data, const fs::path& out,
                          bool with_runs = true) {
  HarnessConfig config;
  config.master_seed = 7;
  config.queries_path = data / "queries.tsv";
  config.passages_path = data / "passages.jsonl";
  config.qrels_path = data / "qrels.txt";
  config.word_pool_path = data / "word_pool.txt";
  if (with_runs) config.runs = {{data / "run_a.txt", "run_a"}};
  config.out_dir = out;
  config.prompts.push_back(PromptSpec{"basic", {}, std::nullopt});
  return config;
}

// Five hand-placed pairs where token overlap and human relevance disagree:
// two look relevant but are not (stuffed), one is relevant without overlap.
void write_overlap_trap(const fs::path& dir) {
  spit(dir / "queries.tsv", "q1\talpha beta\n");
  spit(dir / "passages.jsonl",
       R"({"pid": "p1", "text": "alpha beta filler words"})"
       "\n"
       R"({"pid": "p2", "text": "alpha beta gamma"})"
       "\n"
       R"({"pid": "p3", "text": "unrelated text entirely"})"
       "\n"
       R"({"pid": "p4", "text": "none of those"})"
       "\n"
       R"({"pid": "p5", "text": "alpha beta too"})"
       "\n");
  spit(dir / "qrels.txt",
       "q1 0 p1 0\n"
       "q1 0 p2 3\n"
       "q1 0 p3 3\n"
       "q1 0 p4 0\n"
       "q1 0 p5 1\n");
  spit(dir / "word_pool.txt", "one two three four five six\n");
}

}  // namespace

TEST_CASE("load_config parses, resolves, and validates") {
  TempDir tmp;
  write_overlap_trap(tmp.path);
  fs::create_directories(tmp.path / "nested");
  spit(tmp.path / "nested" / "grade.txt",
       "Rate {query} against {passage} from 0 to 3.");

  const json valid{
      {"master_seed", "18446744073709551615"},  // UINT64_MAX, as a string
      {"pool_depth", 5},
      {"missing_threshold", 0.1},
      {"nonrel_n", 9},
      {"paths",
       json{{"queries", "queries.tsv"},
            {"passages", "passages.jsonl"},
            {"qrels", "qrels.txt"},
            {"word_pool", "word_pool.txt"},
            {"runs", json::array({json{{"path", "runs_do_not_exist.txt"},
                                       {"tag", "bm25"}}})},
            {"out_dir", "out"}}},
      {"prompts",
       json::array({"basic", json{{"id", "custom"},
                                  {"file", "nested/grade.txt"},
                                  {"format", "single_number"}}})},
      {"models", json::array({json{{"mock", "oracle"}},
                              json{{"model_id", "kw"},
                                   {"mock", "keyword"},
                                   {"thresholds",
                                    json::array({0.1, 0.2, 0.3})}}})},
      {"conditions", json::array({"RandP_Q@100", "NonRelP_Inst"})},
      {"baselines", json{{"human_p_label1", 0.4}, {"extra_ref", 1.5}}},
  };

  SUBCASE("a valid config round-trips with resolved paths") {
    spit(tmp.path / "config.json", valid.dump(2));
    const HarnessConfig config = load_config(tmp.path / "config.json");
    CHECK(config.master_seed == UINT64_MAX);
    CHECK(config.pool_depth == 5);
    CHECK(config.missing_threshold == 0.1);
    CHECK(config.nonrel_n == 9);
    CHECK(config.queries_path == tmp.path / "queries.tsv");
    CHECK(config.out_dir == tmp.path / "out");
    REQUIRE(config.runs.size() == 1);
    CHECK(config.runs[0].first == tmp.path / "runs_do_not_exist.txt");
    CHECK(config.runs[0].second == "bm25");
    REQUIRE(config.prompts.size() == 2);
    CHECK(config.prompts[0].id == "basic");
    CHECK(config.prompts[0].file.empty());
    CHECK(config.prompts[1].file == tmp.path / "nested" / "grade.txt");
    CHECK(config.prompts[1].format == ParseFormat::single_number);
    REQUIRE(config.models.size() == 2);
    CHECK(config.models[0].model_id == "oracle");  // falls back to the mock
    CHECK(config.models[1].keyword_thresholds ==
          std::array<double, 3>{0.1, 0.2, 0.3});
    REQUIRE(config.conditions.size() == 2);
    CHECK(config.conditions[0].key() == "RandP_Q@100");
    CHECK(config.baselines.at("human_p_label1") == 0.4);
    CHECK(config.baselines.at("extra_ref") == 1.5);
    CHECK_FALSE(config.raw_text.empty());
  }

  const auto expect_rejected = [&](json broken, const std::string& why) {
    CAPTURE(why);
    spit(tmp.path / "config.json", broken.dump(2));
    CHECK_THROWS_AS(load_config(tmp.path / "config.json"), ConfigError);
  };

  SUBCASE("unknown keys are rejected at every level") {
    json j = valid;
    j["surprise"] = 1;
    expect_rejected(j, "top-level");
    j = valid;
    j["paths"]["qrles"] = "typo.txt";
    expect_rejected(j, "paths");
    j = valid;
    j["models"][0]["temprature"] = 0.5;
    expect_rejected(j, "model");
  }

  SUBCASE("structural mistakes are rejected") {
    json j = valid;
    j["paths"].erase("out_dir");
    expect_rejected(j, "missing out_dir");
    j = valid;
    j.erase("prompts");
    expect_rejected(j, "missing prompts");
    j = valid;
    j["prompts"] = json::array({json{{"id", "custom"},
                                     {"file", "nested/grade.txt"}}});
    expect_rejected(j, "file prompt without format");
    j = valid;
    j["models"] = json::array({json{{"mock", "oracle"}},
                               json{{"mock", "oracle"}}});
    expect_rejected(j, "duplicate model ids");
    j = valid;
    j["prompts"] = json::array({"basic", "basic"});
    expect_rejected(j, "duplicate prompts");  // caught when prompts resolve
  }

  SUBCASE("bad values are rejected") {
    json j = valid;
    j["master_seed"] = -4;
    expect_rejected(j, "negative seed");
    j = valid;
    j["master_seed"] = "12x";
    expect_rejected(j, "non-decimal seed string");
    j = valid;
    j["missing_threshold"] = 1.5;
    expect_rejected(j, "threshold above 1");
    j = valid;
    j["conditions"] = json::array({"Natural"});
    expect_rejected(j, "Natural is not a gullibility condition");
    j = valid;
    j["conditions"] = json::array({"RandP_Q@100", "RandP_Q@100"});
    expect_rejected(j, "duplicate condition");
    j = valid;
    j["conditions"] = json::array({"RandP"});
    expect_rejected(j, "RandP without a length");
    j = valid;
    j["baselines"]["human_p_label1"] = "high";
    expect_rejected(j, "baseline must be a number");
  }
}

TEST_CASE("synthetic collection generation is deterministic") {
  TempDir a;
  TempDir b;
  write_synthetic_collection(a.path, SynthSpec{});
  write_synthetic_collection(b.path, SynthSpec{});
  for (const char* name : {"queries.tsv", "passages.jsonl", "qrels.txt",
                           "run_a.txt", "word_pool.txt"}) {
    CAPTURE(name);
    CHECK(slurp(a.path / name) == slurp(b.path / name));
  }

  // A different seed changes the data.
  TempDir c;
  SynthSpec reseeded;
  reseeded.seed = 2;
  write_synthetic_collection(c.path, reseeded);
  CHECK(slurp(a.path / "passages.jsonl") != slurp(c.path / "passages.jsonl"));
}

TEST_CASE("ingest pools the run files and falls back to all judged pairs") {
  TempDir out;
  HarnessConfig config = base_config(synth_dir(), out.path / "o");

  const Collection with_runs = ingest(config);
  CHECK(with_runs.queries.size() == 20);
  CHECK(with_runs.passages.size() == 200);
  CHECK(with_runs.qrels.size() == 200);
  CHECK(with_runs.human_grades.size() == 200);
  // Ranks 1-9 of each ranking are judged; the distractor at rank 10 is not
  // and the judged pair at rank 11 is outside the pool depth.
  CHECK(with_runs.judged_pool.size() == 180);
  CHECK(with_runs.word_pool.tokens.size() == 12000);

  config.runs.clear();
  const Collection no_runs = ingest(config);
  CHECK(no_runs.judged_pool.size() == 200);

  // Every pooled pair is judged.
  for (const auto& pair : with_runs.judged_pool) {
    CHECK(with_runs.human_grades.count(pair) == 1);
  }
}

TEST_CASE("ingest_summary reports the pool under the natural condition") {
  TempDir out;
  const HarnessConfig config = base_config(synth_dir(), out.path / "o");
  const RunManifest manifest = ingest_summary(config);
  CHECK(manifest.command == "ingest");
  CHECK(manifest.counts_per_condition.at("Natural") == 180);
  CHECK_FALSE(manifest.run_id.empty());
  CHECK(fs::exists(out.path / "o" / "manifest.json"));
}

TEST_CASE("an oracle labeller agrees perfectly with the human judgements") {
  TempDir out;
  HarnessConfig config = base_config(synth_dir(), out.path / "o");
  config.models.push_back(mock_model("oracle", "oracle"));

  const NaturalRunResult result = run_natural(config);
  const auto& report = result.agreement.at({"oracle", "basic"});
  REQUIRE(report.kappa.defined());
  CHECK(*report.kappa.value == 1.0);
  REQUIRE(report.alpha.defined());
  CHECK(*report.alpha.value == 1.0);
  CHECK(*report.mae_binary.value == 0.0);
  CHECK(*report.mae_graded.value == 0.0);
  CHECK(*report.accuracy.value == 1.0);
  CHECK(report.n == 180);
  CHECK(report.n_missing == 0);
  // 4 of the 9 pooled grades per query binarize to relevant.
  CHECK(*report.p_label1.value == doctest::Approx(80.0 / 180.0));

  CHECK(result.manifest.command == "run natural");
  CHECK(result.manifest.counts_per_condition.at("Natural") == 180);
  CHECK(result.manifest.missing_rates.at("oracle|basic|Natural") == 0.0);
  CHECK(result.manifest.tokens_estimated_any);
  CHECK(result.manifest.tokens_in > 0);

  CHECK(line_count(out.path / "o" / "labels.jsonl") == 180);
  CHECK(fs::exists(out.path / "o" / "agreement.csv"));
  CHECK(fs::exists(out.path / "o" / "querymatch.csv"));

  const json summary = json::parse(slurp(out.path / "o" / "summary.json"));
  REQUIRE(summary.contains("agreement"));
  CHECK(summary["agreement"][0]["kappa"] == 1.0);
  CHECK(summary["baselines"]["human_p_label1"] == 0.33);

  // The agreement CSV carries one data row for the single cell.
  const std::string csv = slurp(out.path / "o" / "agreement.csv");
  CHECK(csv.rfind("model,prompt,kappa,alpha,", 0) == 0);
  CHECK(line_count(out.path / "o" / "agreement.csv") == 2);
}

TEST_CASE("a constant labeller lands at exactly zero kappa") {
  TempDir out;
  HarnessConfig config = base_config(synth_dir(), out.path / "o");
  ModelConfig constant = mock_model("always3", "constant");
  constant.mock_grade = 3;
  config.models.push_back(constant);

  const NaturalRunResult result = run_natural(config);
  const auto& report = result.agreement.at({"always3", "basic"});
  REQUIRE(report.kappa.defined());
  CHECK(*report.kappa.value == 0.0);  // exact: observed == expected agreement
  REQUIRE(report.p_label1.defined());
  CHECK(*report.p_label1.value == 1.0);
  REQUIRE(report.alpha.defined());
  CHECK(*report.alpha.value < 0.0);  // worse than chance on ordinal distance
  CHECK(*report.mae_graded.value > 0.0);
}

TEST_CASE("a keyword labeller is fooled by overlap, not by its absence") {
  TempDir tmp;
  write_overlap_trap(tmp.path);
  HarnessConfig config = base_config(tmp.path, tmp.path / "out",
                                     /*with_runs=*/false);
  config.models.push_back(mock_model("kw", "keyword"));

  const NaturalRunResult result = run_natural(config);

  // Join the stored labels with the human grades: overlap-without-relevance
  // produces false positives twice as often as relevance-without-overlap
  // produces false negatives in this fixture.
  const auto records = load_label_records(tmp.path / "out" / "labels.jsonl");
  REQUIRE(records.size() == 5);
  const std::map<std::string, int> human{
      {"p1", 0}, {"p2", 3}, {"p3", 3}, {"p4", 0}, {"p5", 1}};
  ConfusionMatrix m;
  for (const auto& r : records) {
    REQUIRE(r.parsed_grade.has_value());
    const int h = binarize(human.at(r.pid));
    const int l = binarize(*r.parsed_grade);
    if (h == 1 && l == 1) ++m.tp;
    else if (h == 0 && l == 0) ++m.tn;
    else if (h == 0 && l == 1) ++m.fp;
    else ++m.fn;
  }
  CHECK(m.fp == 2);
  CHECK(m.fn == 1);
  CHECK(m.tp == 1);
  CHECK(m.tn == 1);

  // The false positives sit at full overlap; the true negatives at none.
  const auto& match = result.query_match.at({"kw", "basic"});
  REQUIRE(match.fp_ratio.defined());
  REQUIRE(match.tn_ratio.defined());
  CHECK(*match.fp_ratio.value == 1.0);
  CHECK(*match.tn_ratio.value == 0.0);
  CHECK(*match.fp_ratio.value > *match.tn_ratio.value);
}

TEST_CASE("NonRelP conditions require the natural run's labels") {
  TempDir out;
  HarnessConfig config = base_config(synth_dir(), out.path / "o");
  config.models.push_back(mock_model("kw", "keyword"));
  config.conditions.push_back(condition_from_key("NonRelP_Q"));
  CHECK_THROWS_WITH_AS(run_gullibility(config),
                       doctest::Contains("natural"), ConfigError);
}

TEST_CASE("gullibility run: stuffing fools keyword matching maximally") {
  TempDir out;
  HarnessConfig config = base_config(synth_dir(), out.path / "o");
  config.nonrel_n = 15;
  config.models.push_back(mock_model("kw", "keyword"));
  config.models.push_back(mock_model("oracle", "oracle"));
  for (const char* key : {"RandP@100", "RandP_Q@100", "RandP_Inst@100",
                          "NonRelP_Q", "NonRelP_Inst"}) {
    config.conditions.push_back(condition_from_key(key));
  }

  run_natural(config);  // NonRelP needs the natural labels
  const GullibilityRunResult result = run_gullibility(config);

  // Injecting the full query drives the overlap ratio to 1, so the keyword
  // labeller answers 3 for every instance: MAE is exactly 3.
  const auto& stuffed =
      result.reports.at({"kw", "basic", "RandP_Q@100"});
  REQUIRE(stuffed.mae.defined());
  CHECK(*stuffed.mae.value == 3.0);
  CHECK(stuffed.n == 20);
  CHECK(stuffed.n_missing == 0);

  const auto& nonrel_stuffed =
      result.reports.at({"kw", "basic", "NonRelP_Q"});
  REQUIRE(nonrel_stuffed.mae.defined());
  CHECK(*nonrel_stuffed.mae.value == 3.0);

  // Random passages almost never cover enough query words to score.
  const auto& baseline = result.reports.at({"kw", "basic", "RandP@100"});
  REQUIRE(baseline.mae.defined());
  CHECK(*baseline.mae.value < 1.0);
  CHECK(*stuffed.mae.value - *baseline.mae.value >= 2.0);

  // Instructions do not add query words, so they cannot move a keyword
  // labeller beyond its baseline.
  const auto& instructed =
      result.reports.at({"kw", "basic", "RandP_Inst@100"});
  REQUIRE(instructed.mae.defined());
  CHECK(*instructed.mae.value < 1.0);

  // The oracle knows nothing about generated pids and sampled pairs carry
  // human grade 0, so it stays at zero deviation everywhere.
  for (const char* key : {"RandP@100", "RandP_Q@100", "RandP_Inst@100",
                          "NonRelP_Q", "NonRelP_Inst"}) {
    CAPTURE(key);
    const auto& report = result.reports.at({"oracle", "basic", key});
    REQUIRE(report.mae.defined());
    CHECK(*report.mae.value == 0.0);
  }

  // Prompt-averaged MAE equals the single prompt's value.
  const Stat& avg = result.prompt_averaged.at({"kw", "RandP_Q@100"});
  REQUIRE(avg.defined());
  CHECK(*avg.value == 3.0);

  // Bookkeeping: one instance per query for RandP conditions, the sampled
  // pairs for NonRelP, and the shared sample recorded in the manifest.
  CHECK(result.manifest.counts_per_condition.at("RandP_Q@100") == 20);
  const auto& sample = result.manifest.nonrel_samples.at("kw|basic");
  CHECK(sample.first.size() == 15);
  CHECK(sample.second == 0);  // no shortfall against nonrel_n
  CHECK(result.manifest.nonrel_samples.count("oracle|basic") == 1);

  CHECK(fs::exists(out.path / "o" / "instances.jsonl"));
  CHECK(line_count(out.path / "o" / "instances.jsonl") > 60);
  CHECK(fs::exists(out.path / "o" / "gullibility.csv"));
  CHECK(fs::exists(out.path / "o" / "gullibility_prompt_avg.csv"));

  const json summary = json::parse(slurp(out.path / "o" / "summary.json"));
  CHECK(summary.contains("agreement"));  // preserved from the natural run
  CHECK(summary.contains("gullibility"));
  CHECK(summary.contains("gullibility_prompt_avg"));
}

TEST_CASE("interrupted runs resume without relabelling finished work") {
  TempDir out;
  HarnessConfig config = base_config(synth_dir(), out.path / "o");
  config.models.push_back(mock_model("oracle", "oracle"));

  run_natural(config);
  const fs::path store_path = out.path / "o" / "labels.jsonl";
  const std::string full_store = slurp(store_path);
  const std::string agreement_csv = slurp(out.path / "o" / "agreement.csv");
  REQUIRE(line_count(store_path) == 180);

  // Chop the store in half at a line boundary, as a crash would.
  size_t cut = 0;
  for (size_t i = 0, newlines = 0; i < full_store.size(); ++i) {
    if (full_store[i] == '\n' && ++newlines == 90) {
      cut = i + 1;
      break;
    }
  }
  spit(store_path, full_store.substr(0, cut));

  const NaturalRunResult resumed = run_natural(config);
  CHECK(line_count(store_path) == 180);
  CHECK(slurp(out.path / "o" / "agreement.csv") == agreement_csv);
  CHECK(resumed.agreement.at({"oracle", "basic"}).n == 180);

  // No key may appear twice after the resume.
  std::set<std::string> keys;
  for (const auto& r : load_label_records(store_path)) {
    CHECK(keys.insert(r.model_id + "|" + r.prompt_id + "|" + r.condition_key +
                      "|" + r.qid + "|" + r.pid)
              .second);
  }
}

TEST_CASE("errored records are retried; unparsable answers are kept") {
  TempDir out;
  HarnessConfig config = base_config(synth_dir(), out.path / "o");
  config.models.push_back(mock_model("oracle", "oracle"));
  run_natural(config);

  const fs::path store_path = out.path / "o" / "labels.jsonl";
  std::vector<json> lines;
  {
    std::istringstream in(slurp(store_path));
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) lines.push_back(json::parse(line));
    }
  }
  REQUIRE(lines.size() == 180);

  // Record 0: the model answered, but with free text nothing can parse.
  lines[0].erase("grade");
  lines[0]["raw"] = "It deeply depends on the reader's intent.";
  // Record 1: the backend failed; no answer was ever received.
  lines[1].erase("grade");
  lines[1]["error"] = "transport: connection refused (3 attempts)";

  std::string doctored;
  for (const auto& l : lines) doctored += l.dump() + "\n";
  spit(store_path, doctored);

  const NaturalRunResult rerun = run_natural(config);

  // The errored task was retried and superseded; the unparsable answer is a
  // final result and stays.
  CHECK(line_count(store_path) == 181);
  const auto records = load_label_records(store_path);
  std::map<std::string, LabelRecord> latest;
  for (const auto& r : records) {
    latest[r.qid + "|" + r.pid] = r;
  }
  const std::string unparsable_key =
      lines[0]["qid"].get<std::string>() + "|" +
      lines[0]["pid"].get<std::string>();
  const std::string errored_key = lines[1]["qid"].get<std::string>() + "|" +
                                  lines[1]["pid"].get<std::string>();
  CHECK_FALSE(latest.at(unparsable_key).parsed_grade.has_value());
  CHECK_FALSE(latest.at(unparsable_key).error.has_value());
  CHECK(latest.at(errored_key).parsed_grade.has_value());
  CHECK_FALSE(latest.at(errored_key).error.has_value());

  const auto& report = rerun.agreement.at({"oracle", "basic"});
  CHECK(report.n == 179);
  CHECK(report.n_missing == 1);
  CHECK(rerun.manifest.missing_rates.at("oracle|basic|Natural") ==
        doctest::Approx(1.0 / 180.0));
}

TEST_CASE("reports are byte-identical across reruns and thread counts") {
  const auto run_all = [&](const fs::path& out, int parallel) {
    HarnessConfig config = base_config(synth_dir(), out);
    config.nonrel_n = 10;
    ModelConfig kw = mock_model("kw", "keyword");
    kw.max_parallel = parallel;
    config.models.push_back(kw);
    for (const char* key : {"RandP@60", "RandP_Q@60", "NonRelP_Inst"}) {
      config.conditions.push_back(condition_from_key(key));
    }
    run_natural(config);
    run_gullibility(config);
  };

  TempDir serial;
  TempDir threaded;
  run_all(serial.path / "o", 1);
  run_all(threaded.path / "o", 7);

  for (const char* name :
       {"agreement.csv", "querymatch.csv", "gullibility.csv",
        "gullibility_prompt_avg.csv", "instances.jsonl", "summary.json"}) {
    CAPTURE(name);
    CHECK(slurp(serial.path / "o" / name) == slurp(threaded.path / "o" / name));
  }
}

TEST_CASE("correlate joins kappa with mean attack MAE per family") {
  TempDir tmp;
  write_overlap_trap(tmp.path);

  const auto cell = [](const char* prompt, double kappa) {
    return json{{"model", "m"}, {"prompt", prompt}, {"kappa", kappa}};
  };
  const auto attack = [](const char* prompt, const char* condition,
                         double mae) {
    return json{{"model", "m"},
                {"prompt", prompt},
                {"condition", condition},
                {"mae", mae}};
  };

  SUBCASE("a collinear fixture lands at exactly -1") {
    HarnessConfig config =
        base_config(tmp.path, tmp.path / "out", /*with_runs=*/false);
    fs::create_directories(config.out_dir);
    json summary;
    summary["agreement"] = json::array(
        {cell("p1", 0.2), cell("p2", 0.5), cell("p3", 0.8)});
    // Two stuffing conditions per cell whose mean is the target value, one
    // instruction condition, and a plain RandP row that must be ignored.
    summary["gullibility"] = json::array({
        attack("p1", "RandP_Q@100", 2.0),
        attack("p1", "NonRelP_Q", 2.8),  // mean 2.4
        attack("p2", "RandP_Q@100", 1.0),
        attack("p2", "NonRelP_Q", 2.0),  // mean 1.5
        attack("p3", "RandP_Q@100", 0.2),
        attack("p3", "NonRelP_Q", 1.0),  // mean 0.6
        attack("p1", "RandP_Inst@100", 2.4),
        attack("p2", "RandP_Inst@100", 1.5),
        attack("p3", "RandP_Inst@100", 0.6),
        attack("p1", "RandP@100", 9.9),  // baseline, not an attack
    });
    spit(config.out_dir / "summary.json", summary.dump(2) + "\n");

    const CorrelationResult result = correlate(config);
    const auto& stuffing = result.by_family.at("keyword_stuffing");
    REQUIRE(stuffing.rho.defined());
    CHECK(*stuffing.rho.value == -1.0);  // exactly: the points are collinear
    REQUIRE(stuffing.points.size() == 3);
    CHECK(stuffing.points[0].mean_mae == doctest::Approx(2.4));

    const auto& instruction = result.by_family.at("instruction");
    REQUIRE(instruction.rho.defined());
    CHECK(*instruction.rho.value == -1.0);

    CHECK(fs::exists(config.out_dir / "correlation.csv"));
    CHECK(fs::exists(config.out_dir / "correlation_points.csv"));
    const json merged = json::parse(slurp(config.out_dir / "summary.json"));
    CHECK(merged.contains("agreement"));  // prior sections preserved
    REQUIRE(merged.contains("correlation"));
    CHECK(merged["correlation"][0]["rho"] == -1.0);
  }

  SUBCASE("a noisy inverse relationship correlates strongly negatively") {
    HarnessConfig config =
        base_config(tmp.path, tmp.path / "out2", /*with_runs=*/false);
    fs::create_directories(config.out_dir);
    json summary;
    summary["agreement"] = json::array({cell("p1", 0.1), cell("p2", 0.3),
                                        cell("p3", 0.6), cell("p4", 0.9)});
    summary["gullibility"] = json::array({
        attack("p1", "RandP_Q@100", 2.9),
        attack("p2", "RandP_Q@100", 2.2),
        attack("p3", "RandP_Q@100", 1.2),
        attack("p4", "RandP_Q@100", 0.4),
    });
    spit(config.out_dir / "summary.json", summary.dump(2) + "\n");
    const CorrelationResult result = correlate(config);
    const auto& stuffing = result.by_family.at("keyword_stuffing");
    REQUIRE(stuffing.rho.defined());
    CHECK(*stuffing.rho.value < -0.9);
  }

  SUBCASE("degenerate inputs make rho undefined, not zero") {
    HarnessConfig config =
        base_config(tmp.path, tmp.path / "out3", /*with_runs=*/false);
    fs::create_directories(config.out_dir);
    json summary;
    summary["agreement"] = json::array(
        {cell("p1", 0.5), cell("p2", 0.5), cell("p3", 0.5)});
    summary["gullibility"] = json::array({
        attack("p1", "RandP_Q@100", 2.0),
        attack("p2", "RandP_Q@100", 1.0),
        attack("p3", "RandP_Q@100", 0.5),
    });
    spit(config.out_dir / "summary.json", summary.dump(2) + "\n");
    const CorrelationResult result = correlate(config);
    const auto& stuffing = result.by_family.at("keyword_stuffing");
    CHECK_FALSE(stuffing.rho.defined());
    CHECK_FALSE(stuffing.rho.reason.empty());
  }

  SUBCASE("correlate refuses to run before the reports exist") {
    HarnessConfig config =
        base_config(tmp.path, tmp.path / "out4", /*with_runs=*/false);
    CHECK_THROWS_WITH_AS(correlate(config),
                         doctest::Contains("run natural"), ConfigError);
  }
}

TEST_CASE("cost per 10k labels matches the worked example") {
  // 1000 prompt tokens at $0.01/1k plus 100 completion tokens at $0.03/1k
  // is $0.013 per label: $130 per 10,000.
  PriceTable prices;
  prices.per_model["m"] = {0.01, 0.03};

  std::vector<LabelRecord> records;
  for (int i = 0; i < 3; ++i) {
    LabelRecord r;
    r.model_id = "m";
    r.prompt_id = "p";
    r.tokens_in = 1000;
    r.tokens_out = 100;
    records.push_back(r);
  }
  const auto costs = cost_per_10k(records, prices);
  CHECK(costs.at({"m", "p"}) == doctest::Approx(130.0).epsilon(1e-12));

  LabelRecord stranger;
  stranger.model_id = "unknown";
  stranger.prompt_id = "p";
  records.push_back(stranger);
  CHECK_THROWS_WITH_AS(cost_per_10k(records, prices),
                       doctest::Contains("price"), ConfigError);
}

TEST_CASE("cost_report prices the stored labels and writes cost.csv") {
  TempDir out;
  HarnessConfig config = base_config(synth_dir(), out.path / "o");
  ModelConfig oracle = mock_model("oracle", "oracle");
  oracle.price_in_per_1k = 0.01;
  oracle.price_out_per_1k = 0.03;
  config.models.push_back(oracle);

  SUBCASE("an empty store is an error, not a $0 report") {
    CHECK_THROWS_AS(cost_report(config), ConfigError);
  }

  SUBCASE("after a run the report prices every cell") {
    run_natural(config);
    const CostResult result = cost_report(config);
    REQUIRE(result.per_10k.count({"oracle", "basic"}) == 1);
    CHECK(result.per_10k.at({"oracle", "basic"}) > 0.0);

    const std::string csv = slurp(out.path / "o" / "cost.csv");
    CHECK(csv.rfind("model,prompt,n_records,tokens_in,tokens_out,"
                    "cost_per_10k_usd",
                    0) == 0);
    // Money is printed with two decimals.
    const size_t last_comma = csv.rfind(',');
    const std::string money = csv.substr(last_comma + 1);
    CHECK(money.find('.') != std::string::npos);
    CHECK(money.size() >= 4);

    const json summary = json::parse(slurp(out.path / "o" / "summary.json"));
    CHECK(summary.contains("cost"));
  }
}

TEST_CASE("label store rejects corrupt lines with their line number") {
  TempDir tmp;
  spit(tmp.path / "labels.jsonl",
       R"({"model":"m","prompt":"p","condition":"Natural","qid":"q","pid":"x",)"
       R"("raw":"2","tokens_in":1,"tokens_out":1,"grade":2})"
       "\n"
       "this is not json\n");
  CHECK_THROWS_WITH_AS(load_label_records(tmp.path / "labels.jsonl"),
                       doctest::Contains(":2"), LoadError);
}
