#include "relab/judge.hpp"

#include <chrono>
#include <cstdlib>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "relab/errors.hpp"
#include "relab/metrics.hpp"
#include "relab/rng.hpp"

namespace relab {

namespace {

using json = nlohmann::json;

long long whitespace_token_count(const std::string& text) {
  std::istringstream ss(text);
  std::string token;
  long long count = 0;
  while (ss >> token) ++count;
  return count;
}

// Usage estimate for the built-in mocks and for providers that omit usage
// fields. Crude, but additive and deterministic; flagged in the records.
void fill_estimated_tokens(const LabelTask& task, BackendResult* result) {
  result->tokens_in = whitespace_token_count(task.prompt);
  result->tokens_out = whitespace_token_count(result->raw_response);
  result->tokens_estimated = true;
}

class OracleLabeller : public Labeller {
 public:
  OracleLabeller(std::string model_id, const std::vector<Judgement>& qrels)
      : model_id_(std::move(model_id)) {
    for (const auto& j : qrels) grades_[{j.qid, j.pid}] = j.grade;
  }

  const std::string& model_id() const override { return model_id_; }

  BackendResult label(const LabelTask& task) override {
    const auto it = grades_.find({task.qid, task.pid});
    const int grade = it == grades_.end() ? 0 : it->second;
    BackendResult result;
    result.raw_response = format_grade_response(grade, task.format);
    fill_estimated_tokens(task, &result);
    return result;
  }

 private:
  std::string model_id_;
  std::map<QidPid, int> grades_;
};

class KeywordLabeller : public Labeller {
 public:
  KeywordLabeller(std::string model_id, std::array<double, 3> thresholds)
      : model_id_(std::move(model_id)), thresholds_(thresholds) {
    const auto& t = thresholds_;
    if (!(0.0 <= t[0] && t[0] < t[1] && t[1] < t[2] && t[2] <= 1.0)) {
      throw ConfigError(
          "keyword labeller thresholds must be strictly increasing in [0,1]");
    }
  }

  const std::string& model_id() const override { return model_id_; }

  BackendResult label(const LabelTask& task) override {
    const double r = query_match_ratio(Query{task.qid, task.query_text},
                                       Passage{task.pid, task.passage_text});
    int grade = 3;
    // Lower-inclusive bands: r exactly at a threshold takes the higher grade.
    if (r < thresholds_[0]) grade = 0;
    else if (r < thresholds_[1]) grade = 1;
    else if (r < thresholds_[2]) grade = 2;
    BackendResult result;
    result.raw_response = format_grade_response(grade, task.format);
    fill_estimated_tokens(task, &result);
    return result;
  }

 private:
  std::string model_id_;
  std::array<double, 3> thresholds_;
};

class ConstantLabeller : public Labeller {
 public:
  ConstantLabeller(std::string model_id, int grade)
      : model_id_(std::move(model_id)), grade_(grade) {
    if (grade < 0 || grade > 3) {
      throw ConfigError("constant labeller grade must be 0-3");
    }
  }

  const std::string& model_id() const override { return model_id_; }

  BackendResult label(const LabelTask& task) override {
    BackendResult result;
    result.raw_response = format_grade_response(grade_, task.format);
    fill_estimated_tokens(task, &result);
    return result;
  }

 private:
  std::string model_id_;
  int grade_;
};

struct ParsedUrl {
  std::string base;  // scheme://host[:port]
  std::string path;  // /path[?query]
};

ParsedUrl parse_endpoint(const std::string& url) {
  const size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("endpoint must be an http(s) URL: " + url);
  }
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw ConfigError("unsupported endpoint scheme: " + scheme);
  }
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (scheme == "https") {
    throw ConfigError(
        "https endpoints need a TLS-enabled build (OpenSSL was not found "
        "when this binary was built)");
  }
#endif
  const std::string rest = url.substr(scheme_end + 3);
  const size_t slash = rest.find('/');
  ParsedUrl parsed;
  const std::string authority =
      slash == std::string::npos ? rest : rest.substr(0, slash);
  if (authority.empty()) throw ConfigError("endpoint has no host: " + url);
  parsed.base = scheme + "://" + authority;
  parsed.path = slash == std::string::npos ? "/" : rest.substr(slash);
  return parsed;
}

class HttpLabeller : public Labeller {
 public:
  explicit HttpLabeller(const ModelConfig& config)
      : config_(config), url_(parse_endpoint(config.endpoint)) {
    if (config_.model_id.empty()) {
      throw ConfigError("HTTP backend needs a model_id");
    }
    if (!config_.auth_env.empty()) {
      const char* key = std::getenv(config_.auth_env.c_str());
      if (!key || !*key) {
        throw ConfigError("auth variable " + config_.auth_env + " is not set");
      }
      api_key_ = key;
    }
    try {
      content_pointer_ = json::json_pointer(config_.content_pointer);
      tokens_in_pointer_ = json::json_pointer(config_.tokens_in_pointer);
      tokens_out_pointer_ = json::json_pointer(config_.tokens_out_pointer);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad response-field pointer: ") + e.what());
    }
  }

  const std::string& model_id() const override { return config_.model_id; }

  BackendResult label(const LabelTask& task) override {
    const json payload{
        {"model", config_.model_id},
        {"messages",
         json::array({json{{"role", "user"}, {"content", task.prompt}}})},
        {"temperature", config_.temperature},
        {"top_p", config_.top_p},
        {"frequency_penalty", config_.frequency_penalty},
        {"presence_penalty", config_.presence_penalty},
    };
    const std::string body = payload.dump();

    std::string last_error;
    const int attempts = config_.max_retries + 1;
    for (int attempt = 0; attempt < attempts; ++attempt) {
      if (attempt > 0) backoff_sleep(attempt);
      // A fresh client per request keeps this callable from many threads.
      httplib::Client client(url_.base);
      client.set_connection_timeout(10, 0);
      client.set_read_timeout(120, 0);
      client.set_write_timeout(30, 0);
      httplib::Headers headers;
      if (!api_key_.empty()) {
        headers.emplace("Authorization", "Bearer " + api_key_);
      }
      auto res = client.Post(url_.path, headers, body, "application/json");
      if (!res) {
        last_error = "transport: " + httplib::to_string(res.error());
        continue;  // retryable
      }
      if (res->status == 200) return parse_response(task, res->body);
      if (res->status == 401 || res->status == 403) {
        return fail("auth: HTTP " + std::to_string(res->status), attempt + 1);
      }
      if (res->status == 429) {
        last_error = "rate_limit: HTTP 429";
        continue;  // retryable
      }
      if (res->status >= 500) {
        last_error = "http: status " + std::to_string(res->status);
        continue;  // retryable
      }
      return fail("http: status " + std::to_string(res->status), attempt + 1);
    }
    return fail(last_error, attempts);
  }

 private:
  BackendResult fail(const std::string& error, int attempts_used) const {
    BackendResult result;
    result.error = error + " (" + std::to_string(attempts_used) + " attempt" +
                   (attempts_used == 1 ? "" : "s") + ")";
    return result;
  }

  BackendResult parse_response(const LabelTask& task,
                               const std::string& body) const {
    const json response = json::parse(body, nullptr, false);
    if (response.is_discarded()) {
      return fail("bad_response: body is not JSON", 1);
    }
    BackendResult result;
    if (!response.contains(content_pointer_) ||
        !response.at(content_pointer_).is_string()) {
      return fail("bad_response: no text at " + config_.content_pointer, 1);
    }
    result.raw_response = response.at(content_pointer_).get<std::string>();
    const bool have_usage = response.contains(tokens_in_pointer_) &&
                            response.at(tokens_in_pointer_).is_number() &&
                            response.contains(tokens_out_pointer_) &&
                            response.at(tokens_out_pointer_).is_number();
    if (have_usage) {
      result.tokens_in = response.at(tokens_in_pointer_).get<long long>();
      result.tokens_out = response.at(tokens_out_pointer_).get<long long>();
    } else {
      fill_estimated_tokens(task, &result);
    }
    return result;
  }

  void backoff_sleep(int attempt) const {
    // Exponential with full jitter, capped at 60s. The jitter source is
    // deliberately non-deterministic; it never affects recorded outputs.
    static thread_local SplitMix64 jitter(
        std::random_device{}() ^
        static_cast<uint64_t>(
            std::chrono::steady_clock::now().time_since_epoch().count()));
    const uint64_t base = config_.retry_base_ms > 0
                              ? static_cast<uint64_t>(config_.retry_base_ms)
                              : 1;
    uint64_t delay = base;
    for (int i = 1; i < attempt && delay < 60000; ++i) delay *= 2;
    delay = std::min<uint64_t>(delay, 60000);
    std::this_thread::sleep_for(
        std::chrono::milliseconds(1 + jitter.bounded(delay)));
  }

  ModelConfig config_;
  ParsedUrl url_;
  std::string api_key_;
  json::json_pointer content_pointer_;
  json::json_pointer tokens_in_pointer_;
  json::json_pointer tokens_out_pointer_;
};

}  // namespace

std::unique_ptr<Labeller> make_http_labeller(const ModelConfig& config) {
  return std::make_unique<HttpLabeller>(config);
}

std::unique_ptr<Labeller> make_oracle_labeller(
    std::string model_id, const std::vector<Judgement>& qrels) {
  return std::make_unique<OracleLabeller>(std::move(model_id), qrels);
}

std::unique_ptr<Labeller> make_keyword_labeller(
    std::string model_id, std::array<double, 3> thresholds) {
  return std::make_unique<KeywordLabeller>(std::move(model_id), thresholds);
}

std::unique_ptr<Labeller> make_constant_labeller(std::string model_id,
                                                 int grade) {
  return std::make_unique<ConstantLabeller>(std::move(model_id), grade);
}

std::unique_ptr<Labeller> make_labeller(const ModelConfig& config,
                                        const std::vector<Judgement>& qrels) {
  const std::string id =
      config.model_id.empty() ? config.mock_kind : config.model_id;
  if (config.mock_kind.empty()) return make_http_labeller(config);
  if (config.mock_kind == "oracle") return make_oracle_labeller(id, qrels);
  if (config.mock_kind == "keyword") {
    return make_keyword_labeller(id, config.keyword_thresholds);
  }
  if (config.mock_kind == "constant") {
    return make_constant_labeller(id, config.mock_grade);
  }
  throw ConfigError("unknown mock labeller: " + config.mock_kind);
}

}  // namespace relab
