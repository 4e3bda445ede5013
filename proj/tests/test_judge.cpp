#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "relab/errors.hpp"
#include "relab/judge.hpp"
#include "relab/parsing.hpp"

using namespace relab;
using json = nlohmann::json;

namespace {

LabelTask make_task(std::string qid, std::string pid, std::string query,
                    std::string passage,
                    ParseFormat format = ParseFormat::single_number) {
  LabelTask task;
  task.qid = std::move(qid);
  task.pid = std::move(pid);
  task.query_text = std::move(query);
  task.passage_text = std::move(passage);
  task.prompt = "Query: " + task.query_text + "\nPassage: " + task.passage_text;
  task.format = format;
  return task;
}

int grade_of(const BackendResult& result, ParseFormat format) {
  REQUIRE_FALSE(result.error.has_value());
  const auto parsed = parse_label(result.raw_response, format);
  REQUIRE(parsed.grade.has_value());
  return *parsed.grade;
}

}  // namespace

TEST_CASE("oracle labeller echoes the human grade, 0 for unknown pairs") {
  const std::vector<Judgement> qrels{
      {"q1", "p1", 3}, {"q1", "p2", 0}, {"q2", "p1", 2}};
  const auto oracle = make_oracle_labeller("oracle", qrels);
  CHECK(oracle->model_id() == "oracle");

  CHECK(grade_of(oracle->label(make_task("q1", "p1", "a", "b")),
                 ParseFormat::single_number) == 3);
  CHECK(grade_of(oracle->label(make_task("q1", "p2", "a", "b")),
                 ParseFormat::single_number) == 0);
  CHECK(grade_of(oracle->label(make_task("q2", "p1", "a", "b")),
                 ParseFormat::single_number) == 2);
  // Unjudged pair and unknown query both fall back to 0.
  CHECK(grade_of(oracle->label(make_task("q1", "p999", "a", "b")),
                 ParseFormat::single_number) == 0);
  CHECK(grade_of(oracle->label(make_task("q999", "p1", "a", "b")),
                 ParseFormat::single_number) == 0);
}

TEST_CASE("mock labellers answer in the task's parse format") {
  const std::vector<Judgement> qrels{{"q1", "p1", 2}};
  const auto oracle = make_oracle_labeller("m", qrels);

  auto task = make_task("q1", "p1", "a", "b", ParseFormat::single_number);
  CHECK(oracle->label(task).raw_response == "2");

  task.format = ParseFormat::category_last_line;
  CHECK(oracle->label(task).raw_response == "Relevance Category: 2");

  task.format = ParseFormat::scored_object;
  CHECK(oracle->label(task).raw_response == R"({"M": 2, "T": 2, "O": 2})");
}

TEST_CASE("mock labellers report whitespace-estimated token counts") {
  const auto constant = make_constant_labeller("c", 1);
  auto task = make_task("q", "p", "x", "y");
  task.prompt = "one two  three\nfour";
  const BackendResult result = constant->label(task);
  CHECK(result.tokens_in == 4);
  CHECK(result.tokens_out == 1);  // the response is the single token "1"
  CHECK(result.tokens_estimated);
  CHECK_FALSE(result.error.has_value());
}

TEST_CASE("keyword labeller grades by overlap with lower-inclusive bands") {
  const auto keyword = make_keyword_labeller("kw");
  const std::string query = "alpha beta gamma delta";

  const auto grade_for = [&](const std::string& passage) {
    return grade_of(keyword->label(make_task("q", "p", query, passage)),
                    ParseFormat::single_number);
  };

  CHECK(grade_for("nothing relevant here") == 0);            // r = 0
  CHECK(grade_for("alpha only") == 1);                       // r = 0.25 -> up
  CHECK(grade_for("alpha and beta") == 2);                   // r = 0.5  -> up
  CHECK(grade_for("alpha beta gamma") == 3);                 // r = 0.75 -> up
  CHECK(grade_for("alpha beta gamma delta verbatim") == 3);  // r = 1
  // Repetition does not raise the ratio.
  CHECK(grade_for("alpha alpha alpha alpha") == 1);
  // Matching is case-insensitive on word tokens.
  CHECK(grade_for("ALPHA Beta") == 2);
}

TEST_CASE("keyword labeller threshold placement is configurable") {
  // t0 = 0 makes grade 0 unreachable: r = 0 is lower-inclusive for band 1.
  const auto generous = make_keyword_labeller("kw", {0.0, 0.5, 0.75});
  CHECK(grade_of(generous->label(make_task("q", "p", "alpha beta", "zzz")),
                 ParseFormat::single_number) == 1);

  const auto strict = make_keyword_labeller("kw", {0.5, 0.9, 1.0});
  CHECK(grade_of(strict->label(make_task("q", "p", "alpha beta", "alpha")),
                 ParseFormat::single_number) == 1);
  CHECK(grade_of(
            strict->label(make_task("q", "p", "alpha beta", "alpha beta")),
            ParseFormat::single_number) == 3);
}

TEST_CASE("keyword labeller rejects malformed thresholds") {
  CHECK_THROWS_AS(make_keyword_labeller("kw", {0.5, 0.5, 0.7}), ConfigError);
  CHECK_THROWS_AS(make_keyword_labeller("kw", {0.3, 0.2, 0.9}), ConfigError);
  CHECK_THROWS_AS(make_keyword_labeller("kw", {-0.1, 0.5, 0.9}), ConfigError);
  CHECK_THROWS_AS(make_keyword_labeller("kw", {0.1, 0.5, 1.1}), ConfigError);
}

TEST_CASE("constant labeller always answers its grade and validates it") {
  const auto constant = make_constant_labeller("c3", 3);
  for (const char* pid : {"p1", "p2", "p3"}) {
    CHECK(grade_of(constant->label(make_task("q", pid, "any", "thing")),
                   ParseFormat::single_number) == 3);
  }
  CHECK_THROWS_AS(make_constant_labeller("c", 4), ConfigError);
  CHECK_THROWS_AS(make_constant_labeller("c", -1), ConfigError);
}

TEST_CASE("make_labeller dispatches on mock_kind") {
  const std::vector<Judgement> qrels{{"q1", "p1", 1}};

  ModelConfig config;
  config.mock_kind = "oracle";
  // With no model_id the mock kind doubles as the id.
  CHECK(make_labeller(config, qrels)->model_id() == "oracle");

  config.model_id = "my-oracle";
  CHECK(make_labeller(config, qrels)->model_id() == "my-oracle");

  config.mock_kind = "keyword";
  CHECK(make_labeller(config, qrels)->model_id() == "my-oracle");

  config.mock_kind = "constant";
  config.mock_grade = 2;
  const auto constant = make_labeller(config, qrels);
  CHECK(grade_of(constant->label(make_task("q", "p", "a", "b")),
                 ParseFormat::single_number) == 2);

  config.mock_kind = "psychic";
  CHECK_THROWS_AS(make_labeller(config, qrels), ConfigError);

  // No mock kind means a live HTTP backend, which validates its endpoint.
  config.mock_kind.clear();
  config.endpoint = "not a url";
  CHECK_THROWS_AS(make_labeller(config, qrels), ConfigError);
}

TEST_CASE("http labeller construction validates endpoint and auth") {
  ModelConfig config;
  config.model_id = "live";
  config.endpoint = "ftp://example.com/v1";
  CHECK_THROWS_AS(make_http_labeller(config), ConfigError);

  config.endpoint = "http://";
  CHECK_THROWS_AS(make_http_labeller(config), ConfigError);

  config.endpoint = "http://127.0.0.1:8080/v1/chat/completions";
  config.model_id.clear();
  CHECK_THROWS_AS(make_http_labeller(config), ConfigError);
  config.model_id = "live";

  config.auth_env = "RELAB_TEST_SURELY_UNSET_VARIABLE";
  unsetenv(config.auth_env.c_str());
  CHECK_THROWS_WITH_AS(make_http_labeller(config),
                       doctest::Contains("is not set"), ConfigError);
  config.auth_env.clear();

  config.content_pointer = "no-leading-slash";
  CHECK_THROWS_AS(make_http_labeller(config), ConfigError);
}

namespace {

// Loopback chat-completion stub. Each scenario lives at its own path; the
// most recent request is captured for payload assertions.
struct StubServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;

  std::mutex mutex;
  std::string last_body;
  std::string last_auth;
  std::string last_content_type;
  std::atomic<int> flaky500_hits{0};
  std::atomic<int> flaky429_hits{0};

  static std::string ok_body(const std::string& content) {
    json body{{"choices", json::array({json{
                              {"message", json{{"role", "assistant"},
                                               {"content", content}}}}})},
              {"usage", json{{"prompt_tokens", 123},
                             {"completion_tokens", 7}}}};
    return body.dump();
  }

  StubServer() {
    server.Post("/v1/ok", [this](const httplib::Request& req,
                                 httplib::Response& res) {
      {
        std::lock_guard<std::mutex> lock(mutex);
        last_body = req.body;
        last_auth = req.get_header_value("Authorization");
        last_content_type = req.get_header_value("Content-Type");
      }
      res.set_content(ok_body("2"), "application/json");
    });
    server.Post("/v1/no_usage",
                [](const httplib::Request&, httplib::Response& res) {
                  const json body{
                      {"choices",
                       json::array({json{
                           {"message", json{{"content", "3"}}}}})}};
                  res.set_content(body.dump(), "application/json");
                });
    server.Post("/v1/flaky500", [this](const httplib::Request&,
                                       httplib::Response& res) {
      if (flaky500_hits.fetch_add(1) == 0) {
        res.status = 500;
        res.set_content("upstream exploded", "text/plain");
      } else {
        res.set_content(ok_body("1"), "application/json");
      }
    });
    server.Post("/v1/flaky429", [this](const httplib::Request&,
                                       httplib::Response& res) {
      if (flaky429_hits.fetch_add(1) == 0) {
        res.status = 429;
        res.set_content("slow down", "text/plain");
      } else {
        res.set_content(ok_body("0"), "application/json");
      }
    });
    server.Post("/v1/locked",
                [](const httplib::Request&, httplib::Response& res) {
                  res.status = 401;
                  res.set_content("who are you", "text/plain");
                });
    server.Post("/v1/not_json",
                [](const httplib::Request&, httplib::Response& res) {
                  res.set_content("definitely not json", "text/plain");
                });
    server.Post("/v1/wrong_shape",
                [](const httplib::Request&, httplib::Response& res) {
                  res.set_content(R"({"weird": true})", "application/json");
                });
    server.Post("/v1/custom",
                [](const httplib::Request&, httplib::Response& res) {
                  const json body{
                      {"output", json{{"text", "Relevance Category: 3"}}},
                      {"meter", json{{"in", 11}, {"out", 4}}}};
                  res.set_content(body.dump(), "application/json");
                });
  }

  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
    REQUIRE(server.is_running());
  }

  ~StubServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }

  std::string endpoint(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port) + path;
  }
};

ModelConfig live_config(const StubServer& stub, const std::string& path) {
  ModelConfig config;
  config.model_id = "live-model";
  config.endpoint = stub.endpoint(path);
  config.max_retries = 2;
  config.retry_base_ms = 1;  // keep backoff negligible in tests
  return config;
}

}  // namespace

TEST_CASE("http labeller round trip") {
  StubServer stub;
  stub.start();

  auto task = make_task("q1", "p1", "tea kettles", "a passage about kettles");

  SUBCASE("success: content and usage from the provider") {
    ModelConfig config = live_config(stub, "/v1/ok");
    config.auth_env = "RELAB_TEST_KEY";
    setenv("RELAB_TEST_KEY", "sekret", 1);
    const auto labeller = make_http_labeller(config);
    CHECK(labeller->model_id() == "live-model");

    const BackendResult result = labeller->label(task);
    REQUIRE_FALSE(result.error.has_value());
    CHECK(result.raw_response == "2");
    CHECK(result.tokens_in == 123);
    CHECK(result.tokens_out == 7);
    CHECK_FALSE(result.tokens_estimated);

    // The request carries exactly the fixed decoding parameters and the
    // rendered prompt as a single user message.
    std::lock_guard<std::mutex> lock(stub.mutex);
    CHECK(stub.last_auth == "Bearer sekret");
    CHECK(stub.last_content_type == "application/json");
    const json payload = json::parse(stub.last_body);
    CHECK(payload.at("model") == "live-model");
    CHECK(payload.at("temperature") == 0.0);
    CHECK(payload.at("top_p") == 1.0);
    CHECK(payload.at("frequency_penalty") == 0.5);
    CHECK(payload.at("presence_penalty") == 0.0);
    REQUIRE(payload.at("messages").size() == 1);
    CHECK(payload.at("messages")[0].at("role") == "user");
    CHECK(payload.at("messages")[0].at("content") == task.prompt);
    unsetenv("RELAB_TEST_KEY");
  }

  SUBCASE("no auth_env means no Authorization header") {
    const auto labeller = make_http_labeller(live_config(stub, "/v1/ok"));
    REQUIRE_FALSE(labeller->label(task).error.has_value());
    std::lock_guard<std::mutex> lock(stub.mutex);
    CHECK(stub.last_auth.empty());
  }

  SUBCASE("missing usage falls back to estimated whitespace counts") {
    const auto labeller =
        make_http_labeller(live_config(stub, "/v1/no_usage"));
    const BackendResult result = labeller->label(task);
    REQUIRE_FALSE(result.error.has_value());
    CHECK(result.raw_response == "3");
    CHECK(result.tokens_estimated);
    CHECK(result.tokens_in == 8);   // whitespace tokens in the prompt
    CHECK(result.tokens_out == 1);  // the single-token response
  }

  SUBCASE("a 500 is retried and the retry succeeds") {
    const auto labeller =
        make_http_labeller(live_config(stub, "/v1/flaky500"));
    const BackendResult result = labeller->label(task);
    REQUIRE_FALSE(result.error.has_value());
    CHECK(result.raw_response == "1");
    CHECK(stub.flaky500_hits.load() == 2);
  }

  SUBCASE("a 429 is retried and the retry succeeds") {
    const auto labeller =
        make_http_labeller(live_config(stub, "/v1/flaky429"));
    const BackendResult result = labeller->label(task);
    REQUIRE_FALSE(result.error.has_value());
    CHECK(result.raw_response == "0");
    CHECK(stub.flaky429_hits.load() == 2);
  }

  SUBCASE("auth failures are terminal after a single attempt") {
    const auto labeller = make_http_labeller(live_config(stub, "/v1/locked"));
    const BackendResult result = labeller->label(task);
    REQUIRE(result.error.has_value());
    CHECK(*result.error == "auth: HTTP 401 (1 attempt)");
  }

  SUBCASE("other 4xx statuses are terminal, not retried") {
    const auto labeller =
        make_http_labeller(live_config(stub, "/v1/no_such_path"));
    const BackendResult result = labeller->label(task);
    REQUIRE(result.error.has_value());
    CHECK(*result.error == "http: status 404 (1 attempt)");
  }

  SUBCASE("a non-JSON 200 body is a bad_response error") {
    const auto labeller =
        make_http_labeller(live_config(stub, "/v1/not_json"));
    const BackendResult result = labeller->label(task);
    REQUIRE(result.error.has_value());
    CHECK(result.error->rfind("bad_response:", 0) == 0);
  }

  SUBCASE("a JSON body without the content field is a bad_response error") {
    const auto labeller =
        make_http_labeller(live_config(stub, "/v1/wrong_shape"));
    const BackendResult result = labeller->label(task);
    REQUIRE(result.error.has_value());
    CHECK(*result.error ==
          "bad_response: no text at /choices/0/message/content (1 attempt)");
  }

  SUBCASE("response field pointers are configurable per provider") {
    ModelConfig config = live_config(stub, "/v1/custom");
    config.content_pointer = "/output/text";
    config.tokens_in_pointer = "/meter/in";
    config.tokens_out_pointer = "/meter/out";
    const auto labeller = make_http_labeller(config);
    const BackendResult result = labeller->label(task);
    REQUIRE_FALSE(result.error.has_value());
    CHECK(result.raw_response == "Relevance Category: 3");
    CHECK(result.tokens_in == 11);
    CHECK(result.tokens_out == 4);
    CHECK_FALSE(result.tokens_estimated);
  }
}

TEST_CASE("http labeller reports transport failure after all attempts") {
  // Nothing listens on the discard port; connections are refused instantly.
  ModelConfig config;
  config.model_id = "live-model";
  config.endpoint = "http://127.0.0.1:9/v1/chat/completions";
  config.max_retries = 2;
  config.retry_base_ms = 1;
  const auto labeller = make_http_labeller(config);

  const BackendResult result =
      labeller->label(make_task("q", "p", "a", "b"));
  REQUIRE(result.error.has_value());
  CHECK(result.error->rfind("transport:", 0) == 0);
  CHECK(result.error->find("(3 attempts)") != std::string::npos);
  CHECK(result.raw_response.empty());
}
