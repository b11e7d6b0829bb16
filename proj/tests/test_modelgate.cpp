#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "preempt/modelgate.hpp"
#include "test_support.hpp"

using namespace preempt;
using modelgate::CompletionRequest;
using modelgate::Gateway;
using modelgate::MockBackend;
using modelgate::MockScript;
using test_support::TempDir;

namespace {

CompletionRequest make_request(const std::string& content, int n = 1,
                               std::optional<std::int64_t> seed = 42) {
  CompletionRequest req;
  req.model = "test-model";
  req.messages = {{promptkit::Role::User, content}};
  req.params.temperature = 0.0;
  req.params.top_p = 1.0;
  req.params.seed = seed;
  req.params.n_samples = n;
  return req;
}

}  // namespace

TEST_CASE("cache keys are stable and sensitive to identity fields") {
  auto a = make_request("solve it");
  CHECK(modelgate::cache_key(a) == modelgate::cache_key(a));

  auto b = a;
  b.params.seed = 43;
  CHECK(modelgate::cache_key(a) != modelgate::cache_key(b));

  auto two = a;
  two.messages.push_back({promptkit::Role::User, "[Answer] The answer is 32."});
  auto swapped = two;
  std::swap(swapped.messages[0], swapped.messages[1]);
  CHECK(modelgate::cache_key(two) != modelgate::cache_key(swapped));

  auto tagged = a;
  tagged.problem_id = "p1";  // routing metadata stays outside the identity
  CHECK(modelgate::cache_key(a) == modelgate::cache_key(tagged));
}

TEST_CASE("mock backend is deterministic and honors the sample count") {
  auto script = MockScript::parse(
      R"({"match": {"contains": "swans"}, "respond": "[Answer] There will be 480 swans in the pond."})"
      "\n"
      R"({"respond": "[Answer] fallback"})",
      "script-1");
  auto backend = std::make_shared<MockBackend>(script);
  Gateway gate(backend, "test-model");

  auto swans = gate.complete(make_request("count the swans please"));
  REQUIRE(swans.samples.size() == 1);
  CHECK(swans.samples[0] == "[Answer] There will be 480 swans in the pond.");

  auto other = gate.complete(make_request("something else"));
  CHECK(other.samples[0] == "[Answer] fallback");

  auto ten = gate.complete(make_request("swans with variation {jitter}", 10));
  CHECK(ten.samples.size() == 10);
}

TEST_CASE("seeded jitter varies across samples but not across calls") {
  auto script = MockScript::parse(
      R"({"match": {"contains": "vote"}, "respond": "[Answer] {jitter}", "seed_jitter": true})",
      "script-2");
  auto backend = std::make_shared<MockBackend>(script);
  Gateway gate(backend, "test-model");

  auto first = gate.complete(make_request("vote", 10));
  auto second = gate.complete(make_request("vote", 10));
  CHECK(first.samples == second.samples);
  std::set<std::string> distinct(first.samples.begin(), first.samples.end());
  CHECK(distinct.size() > 1);
}

TEST_CASE("cache round-trips and shields the backend") {
  TempDir dir("preempt-cache");
  auto script = MockScript::parse(R"({"respond": "[Answer] 42"})", "script-3");
  auto backend = std::make_shared<MockBackend>(script);
  Gateway gate(backend, "test-model", dir.path() / "cache");

  auto req = make_request("greedy request");
  auto first = gate.complete(req);
  CHECK(backend->calls() == 1);
  auto second = gate.complete(req);
  CHECK(backend->calls() == 1);  // served from cache
  CHECK(first.samples == second.samples);

  // a fresh gateway over the same directory also sees the entry
  Gateway rehydrated(backend, "test-model", dir.path() / "cache");
  auto third = rehydrated.complete(req);
  CHECK(backend->calls() == 1);
  CHECK(third.samples == first.samples);
}

TEST_CASE("cache entries are write-once") {
  TempDir dir("preempt-cache-conflict");
  modelgate::ResponseCache cache(dir.path() / "cache");
  modelgate::Completion a;
  a.request_hash = "k";
  a.samples = {"one"};
  modelgate::Completion b;
  b.request_hash = "k";
  b.samples = {"two"};
  const std::string key(64, 'a');
  cache.store(key, a);
  CHECK_NOTHROW(cache.store(key, a));  // identical content is fine
  CHECK_THROWS_AS(cache.store(key, b), modelgate::CacheCorruption);
}

TEST_CASE("single-sample backends fan multi-sample requests out per draw") {
  TempDir dir("preempt-fanout");
  auto script = MockScript::parse(R"({"respond": "[Answer] sample {sample_index}"})", "script-4");
  auto backend = std::make_shared<MockBackend>(script, /*multi_sample=*/false);
  Gateway gate(backend, "test-model", dir.path() / "cache");

  auto completion = gate.complete(make_request("fan out", 4));
  REQUIRE(completion.samples.size() == 4);
  CHECK(completion.samples[0] == "[Answer] sample 0");
  CHECK(completion.samples[3] == "[Answer] sample 0");  // each draw is its own n=1 request
  CHECK(backend->calls() == 4);

  auto again = gate.complete(make_request("fan out", 4));
  CHECK(backend->calls() == 4);  // cache covers both the draws and the merge
  CHECK(again.samples == completion.samples);
}

TEST_CASE("run_batch keeps input order, isolates failures and respects the bound") {
  auto script = MockScript::parse(
      R"({"match": {"contains": "ok"}, "respond": "[Answer] {sample_index} fine"})", "script-5");
  auto backend =
      std::make_shared<MockBackend>(script, true, std::chrono::milliseconds(2));
  Gateway gate(backend, "test-model");

  std::vector<CompletionRequest> reqs;
  for (int i = 0; i < 100; ++i) {
    bool poison = i == 37;  // no rule matches, no default: this slot must fail
    reqs.push_back(make_request((poison ? "poisoned " : "ok ") + std::to_string(i)));
  }
  auto results = gate.run_batch(reqs, 8);
  REQUIRE(results.size() == 100);
  for (int i = 0; i < 100; ++i) {
    if (i == 37) {
      CHECK_FALSE(results[i].ok());
      CHECK(results[i].error_name == "BackendRefused");
    } else {
      REQUIRE(results[i].ok());
      CHECK(results[i].completion->samples[0] == "[Answer] 0 fine");
    }
  }
  CHECK(backend->high_water() <= 8);
  CHECK(backend->calls() == 100);
  CHECK(gate.run_batch({}, 3).empty());
  CHECK_THROWS_AS(gate.run_batch(reqs, 0), std::invalid_argument);
}

namespace {

// Spins an in-process OpenAI-shaped endpoint for wire tests.
class LocalServer {
 public:
  LocalServer() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++hits_;
      if (fail_first_ > 0 && hits_ <= fail_first_) {
        res.status = fail_status_;
        res.set_content("{\"error\": {\"message\": \"try later\"}}", "application/json");
        return;
      }
      if (req.get_header_value("Authorization") != "Bearer good-key") {
        res.status = 401;
        res.set_content("{\"error\": {\"message\": \"bad key\"}}", "application/json");
        return;
      }
      auto body = nlohmann::json::parse(req.body);
      int n = body.value("n", 1);
      nlohmann::json choices = nlohmann::json::array();
      for (int i = 0; i < n; ++i) {
        choices.push_back({{"message", {{"content", "[Answer] reply " + std::to_string(i)}}}});
      }
      nlohmann::json payload = {
          {"choices", choices},
          {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 3 * n}}}};
      res.set_content(payload.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  void fail_first(int count, int status) {
    hits_ = 0;
    fail_first_ = count;
    fail_status_ = status;
  }
  int hits() const { return hits_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> hits_{0};
  int fail_first_ = 0;
  int fail_status_ = 500;
};

modelgate::HttpBackendConfig quick_config(const std::string& base_url, const std::string& key) {
  modelgate::HttpBackendConfig config;
  config.base_url = base_url;
  config.api_key = key;
  config.retry.max_attempts = 3;
  config.retry.base_delay = std::chrono::milliseconds(1);
  config.retry.max_delay = std::chrono::milliseconds(4);
  config.timeout = std::chrono::milliseconds(2000);
  return config;
}

}  // namespace

TEST_CASE("http backend speaks the chat-completions wire protocol") {
  LocalServer server;

  SUBCASE("happy path returns samples and usage") {
    modelgate::HttpBackend backend(quick_config(server.base_url(), "good-key"));
    auto completion = backend.complete(make_request("hello", 3));
    REQUIRE(completion.samples.size() == 3);
    CHECK(completion.samples[2] == "[Answer] reply 2");
    REQUIRE(completion.usage.has_value());
    CHECK(completion.usage->completion_tokens == 9);
  }
  SUBCASE("retries transient 429 and 500") {
    for (int status : {429, 500}) {
      server.fail_first(2, status);
      modelgate::HttpBackend backend(quick_config(server.base_url(), "good-key"));
      auto completion = backend.complete(make_request("hello"));
      CHECK(completion.samples.size() == 1);
      CHECK(server.hits() == 3);
    }
  }
  SUBCASE("rate-limit exhaustion is distinguished from server refusal") {
    server.fail_first(1000, 429);
    modelgate::HttpBackend backend(quick_config(server.base_url(), "good-key"));
    CHECK_THROWS_AS(backend.complete(make_request("hello")), modelgate::RateLimitedExhausted);

    server.fail_first(1000, 503);
    modelgate::HttpBackend second(quick_config(server.base_url(), "good-key"));
    CHECK_THROWS_AS(second.complete(make_request("hello")), modelgate::BackendRefused);
  }
  SUBCASE("auth failures do not retry") {
    server.fail_first(0, 0);
    modelgate::HttpBackend backend(quick_config(server.base_url(), "bad-key"));
    CHECK_THROWS_AS(backend.complete(make_request("hello")), modelgate::AuthError);
    CHECK(server.hits() == 1);
  }
  SUBCASE("missing key fails before any call") {
    ::unsetenv("PREEMPT_API_KEY");
    modelgate::HttpBackend backend(quick_config(server.base_url(), ""));
    CHECK_THROWS_AS(backend.complete(make_request("hello")), modelgate::AuthError);
  }
}

TEST_CASE("unreachable endpoints surface as transport errors") {
  modelgate::HttpBackend backend(quick_config("http://127.0.0.1:1/v1", "good-key"));
  CHECK_THROWS_AS(backend.complete(make_request("hello")), modelgate::TransportError);
}
