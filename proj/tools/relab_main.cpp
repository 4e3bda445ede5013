#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "relab/errors.hpp"
#include "relab/harness.hpp"

namespace {

// Exit codes: 0 success, 1 configuration or data error, 2 a labelling cell
// exceeded the missing-label-rate threshold.
constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitMissing = 2;

void print_manifest(const relab::RunManifest& manifest) {
  std::printf("manifest: %s\n", manifest.path.string().c_str());
}

int check_missing(const relab::RunManifest& manifest, double threshold) {
  int code = kExitOk;
  for (const auto& [cell, rate] : manifest.missing_rates) {
    if (rate > threshold) {
      std::fprintf(stderr,
                   "warning: %s missing-label rate %.3f exceeds threshold "
                   "%.3f\n",
                   cell.c_str(), rate, threshold);
      code = kExitMissing;
    }
  }
  return code;
}

std::string fmt_stat(const relab::Stat& s) {
  if (!s.defined()) return "undefined (" + s.reason + ")";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", *s.value);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relab: adversarial robustness evaluation for LLM relevance "
               "labellers"};
  app.require_subcommand(1);

  std::string config_path;
  const auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "run configuration JSON")
        ->required();
  };

  CLI::App* ingest_cmd = app.add_subcommand(
      "ingest", "load inputs, pool the runs, and report counts");
  add_config(ingest_cmd);

  CLI::App* run_cmd =
      app.add_subcommand("run", "execute a labelling pass");
  run_cmd->require_subcommand(1);
  CLI::App* natural_cmd = run_cmd->add_subcommand(
      "natural", "label the judged pool with unmodified passages");
  add_config(natural_cmd);
  CLI::App* gull_cmd = run_cmd->add_subcommand(
      "gullibility", "label the configured adversarial conditions");
  add_config(gull_cmd);

  CLI::App* correlate_cmd = app.add_subcommand(
      "correlate", "correlate agreement with gullibility per attack family");
  add_config(correlate_cmd);

  CLI::App* report_cmd = app.add_subcommand(
      "report", "rebuild every report from the persisted labels");
  add_config(report_cmd);

  CLI::App* cost_cmd = app.add_subcommand(
      "cost", "estimate USD cost per 10k labels from recorded usage");
  add_config(cost_cmd);

  CLI::App* synth_cmd = app.add_subcommand(
      "synth", "write a small deterministic synthetic collection");
  std::string synth_dir;
  relab::SynthSpec synth;
  synth_cmd->add_option("-o,--out", synth_dir, "output directory")->required();
  synth_cmd->add_option("--queries", synth.n_queries, "number of queries");
  synth_cmd->add_option("--passages", synth.n_passages, "number of passages");
  synth_cmd->add_option("--vocab", synth.vocab, "vocabulary size");
  synth_cmd->add_option("--pool-tokens", synth.pool_tokens,
                        "random-word pool size");
  synth_cmd->add_option("--judged-per-query", synth.judged_per_query,
                        "judgements per query");
  synth_cmd->add_option("--passage-words", synth.passage_words,
                        "words per passage");
  synth_cmd->add_option("--query-words", synth.query_words,
                        "words per query");
  synth_cmd->add_option("--seed", synth.seed, "generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) {
      relab::write_synthetic_collection(synth_dir, synth);
      std::printf("synthetic collection written to %s\n", synth_dir.c_str());
      return kExitOk;
    }

    const relab::HarnessConfig config = relab::load_config(config_path);

    if (ingest_cmd->parsed()) {
      const relab::Collection collection = relab::ingest(config);
      std::printf("queries: %zu\npassages: %zu\nqrels: %zu\njudged pool: %zu\n",
                  collection.queries.size(), collection.passages.size(),
                  collection.qrels.size(), collection.judged_pool.size());
      const relab::RunManifest manifest = relab::ingest_summary(config);
      print_manifest(manifest);
      return kExitOk;
    }
    if (natural_cmd->parsed()) {
      const relab::NaturalRunResult result = relab::run_natural(config);
      for (const auto& [cell, report] : result.agreement) {
        std::printf("%s / %s: kappa=%s alpha=%s n=%lld missing=%lld\n",
                    cell.first.c_str(), cell.second.c_str(),
                    fmt_stat(report.kappa).c_str(),
                    fmt_stat(report.alpha).c_str(), report.n,
                    report.n_missing);
      }
      print_manifest(result.manifest);
      return check_missing(result.manifest, config.missing_threshold);
    }
    if (gull_cmd->parsed()) {
      const relab::GullibilityRunResult result =
          relab::run_gullibility(config);
      for (const auto& [cell, report] : result.reports) {
        std::printf("%s / %s / %s: mae=%s n=%lld missing=%lld\n",
                    std::get<0>(cell).c_str(), std::get<1>(cell).c_str(),
                    std::get<2>(cell).c_str(), fmt_stat(report.mae).c_str(),
                    report.n, report.n_missing);
      }
      print_manifest(result.manifest);
      return check_missing(result.manifest, config.missing_threshold);
    }
    if (correlate_cmd->parsed()) {
      const relab::CorrelationResult result = relab::correlate(config);
      for (const auto& [family, report] : result.by_family) {
        std::printf("%s: rho=%s over %zu points\n", family.c_str(),
                    fmt_stat(report.rho).c_str(), report.points.size());
      }
      print_manifest(result.manifest);
      return kExitOk;
    }
    if (report_cmd->parsed()) {
      const relab::ReportResult result = relab::rebuild_reports(config);
      std::printf("agreement cells: %zu\ngullibility cells: %zu\n",
                  result.natural.agreement.size(),
                  result.gullibility.reports.size());
      print_manifest(result.manifest);
      return check_missing(result.manifest, config.missing_threshold);
    }
    if (cost_cmd->parsed()) {
      const relab::CostResult result = relab::cost_report(config);
      for (const auto& [cell, usd] : result.per_10k) {
        std::printf("%s / %s: $%.2f per 10k labels\n", cell.first.c_str(),
                    cell.second.c_str(), usd);
      }
      print_manifest(result.manifest);
      return kExitOk;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return kExitError;  // unreachable: a subcommand is required
}
