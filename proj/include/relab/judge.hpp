#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "relab/corpus.hpp"
#include "relab/prompting.hpp"

namespace relab {

// A labelling backend and its request parameters. The decoding defaults are
// the fixed experiment values and normally stay untouched.
struct ModelConfig {
  std::string model_id;

  // Live HTTP backend. Empty endpoint means a built-in mock (see mock_kind).
  std::string endpoint;  // e.g. "http://localhost:8080/v1/chat/completions"
  std::string auth_env;  // env var holding the bearer token; empty = no auth

  double temperature = 0.0;
  double top_p = 1.0;
  double frequency_penalty = 0.5;
  double presence_penalty = 0.0;

  int max_retries = 5;   // retries after the first attempt
  int max_parallel = 4;  // concurrent in-flight requests
  int retry_base_ms = 1000;  // backoff base; doubles per attempt, capped at 60s

  double price_in_per_1k = 0.0;   // USD per 1000 prompt tokens
  double price_out_per_1k = 0.0;  // USD per 1000 completion tokens

  // JSON pointers into the HTTP response body. The defaults fit the common
  // chat-completion shape; point them elsewhere for other providers.
  std::string content_pointer = "/choices/0/message/content";
  std::string tokens_in_pointer = "/usage/prompt_tokens";
  std::string tokens_out_pointer = "/usage/completion_tokens";

  // Built-in deterministic backends: "oracle", "keyword", "constant".
  std::string mock_kind;
  int mock_grade = 0;                              // constant mock only
  std::array<double, 3> keyword_thresholds{0.25, 0.5, 0.75};
};

// Everything a backend may need to answer one labelling request. Mocks use
// the structured fields; the HTTP backend sends only the rendered prompt.
struct LabelTask {
  std::string qid;
  std::string pid;
  std::string query_text;
  std::string passage_text;
  std::string prompt;  // fully rendered
  ParseFormat format = ParseFormat::single_number;
};

struct BackendResult {
  std::string raw_response;
  long long tokens_in = 0;
  long long tokens_out = 0;
  // True when the provider reported no usage and a whitespace-token count
  // was substituted.
  bool tokens_estimated = false;
  // Set after retries are exhausted or on a non-retryable failure; prefixed
  // with the failure class ("transport:", "auth:", "rate_limit:", "http:",
  // "bad_response:").
  std::optional<std::string> error;
};

// One response, parsed and attributed. Persisted as JSONL.
struct LabelRecord {
  std::string qid;
  std::string pid;
  std::string condition_key;
  std::string prompt_id;
  std::string model_id;
  std::string raw_response;
  std::optional<int> parsed_grade;  // absent iff unparsable or errored
  std::map<std::string, double> aux_scores;  // e.g. M and T
  long long tokens_in = 0;
  long long tokens_out = 0;
  bool tokens_estimated = false;
  std::optional<std::string> error;
};

class Labeller {
 public:
  virtual ~Labeller() = default;
  virtual const std::string& model_id() const = 0;
  // Must be safe to call from multiple threads at once.
  virtual BackendResult label(const LabelTask& task) = 0;
};

// Generic chat-completion client: one user message, config-driven response
// field mapping, exponential backoff with jitter on transient failures.
// Throws ConfigError for a malformed endpoint or an unset auth variable.
std::unique_ptr<Labeller> make_http_labeller(const ModelConfig& config);

// Answers with the human grade for (qid,pid), 0 for unknown pairs.
std::unique_ptr<Labeller> make_oracle_labeller(
    std::string model_id, const std::vector<Judgement>& qrels);

// Grades by query-token overlap ratio r with lower-inclusive thresholds:
// r < t0 -> 0, r < t1 -> 1, r < t2 -> 2, else 3.
std::unique_ptr<Labeller> make_keyword_labeller(
    std::string model_id, std::array<double, 3> thresholds = {0.25, 0.5, 0.75});

std::unique_ptr<Labeller> make_constant_labeller(std::string model_id,
                                                 int grade);

// Dispatch on config: mock_kind if set, HTTP otherwise. The qrels feed the
// oracle mock and are ignored by every other backend.
std::unique_ptr<Labeller> make_labeller(const ModelConfig& config,
                                        const std::vector<Judgement>& qrels);

}  // namespace relab
