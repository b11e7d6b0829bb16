#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "preempt/errors.hpp"
#include "preempt/promptkit.hpp"

namespace preempt::modelgate {

struct CompletionRequest {
  std::string model;
  std::vector<promptkit::ChatMessage> messages;
  promptkit::GenerationParams params;
  // Routing metadata for mock scripts; not part of the request identity.
  std::optional<std::string> problem_id;
  // Set when a multi-sample request is split into single draws; part of the
  // request identity so each draw caches separately.
  std::optional<int> sample_index;
};

// Stable key-ordered JSON of (model, messages, params); the cache key is its
// SHA-256. Two requests differing only in problem_id share a key.
std::string canonical_request_json(const CompletionRequest& req);
std::string cache_key(const CompletionRequest& req);

enum class BackendKind { Live, Mock };

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct Completion {
  std::string request_hash;
  std::vector<std::string> samples;
  BackendKind backend = BackendKind::Mock;
  std::string backend_detail;  // endpoint or script id
  std::optional<TokenUsage> usage;
  std::string timestamp;  // UTC, informational only
};

struct AuthError : Error {
  explicit AuthError(const std::string& detail) : Error("AuthError", detail) {}
};
struct RateLimitedExhausted : Error {
  explicit RateLimitedExhausted(const std::string& detail)
      : Error("RateLimitedExhausted", detail) {}
};
struct TransportError : Error {
  explicit TransportError(const std::string& detail) : Error("TransportError", detail) {}
};
struct BackendRefused : Error {
  BackendRefused(long status, const std::string& body_excerpt)
      : Error("BackendRefused", "status " + std::to_string(status) + ": " + body_excerpt),
        status(status) {}
  long status;
};
struct CacheCorruption : Error {
  explicit CacheCorruption(const std::string& key)
      : Error("CacheCorruption", "conflicting content for cache key " + key) {}
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual Completion complete(const CompletionRequest& req) = 0;
  virtual bool supports_multi_sample() const = 0;
  virtual BackendKind kind() const = 0;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{1000};
  std::chrono::milliseconds max_delay{60000};
  double jitter = 0.2;
};

struct HttpBackendConfig {
  std::string base_url;  // e.g. "https://api.openai.com/v1"
  std::string api_key;   // falls back to $PREEMPT_API_KEY
  RetryPolicy retry;
  std::chrono::milliseconds timeout{120000};
  bool multi_sample = true;
};

// OpenAI-compatible chat-completions client. Retries 429/5xx/transport
// failures with exponential backoff and jitter; 4xx are surfaced immediately.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config);

  Completion complete(const CompletionRequest& req) override;
  bool supports_multi_sample() const override { return config_.multi_sample; }
  BackendKind kind() const override { return BackendKind::Live; }

 private:
  HttpBackendConfig config_;
  std::string host_;
  std::string path_prefix_;
};

// One scripted response rule. A rule without matchers is the default.
struct MockRule {
  std::optional<std::string> contains;
  std::optional<std::string> problem_id;
  std::string respond;
  bool seed_jitter = false;
};

struct MockScript {
  std::vector<MockRule> rules;
  std::optional<std::string> default_response;
  std::string id;  // sha256 of the source text

  static MockScript load(const std::filesystem::path& path);
  static MockScript parse(const std::string& jsonl, const std::string& id);
};

// Deterministic scripted backend. The response template may use
// {sample_index}, {seed} and, with seed_jitter, {jitter} (a pseudo-random
// integer derived from the request hash and sample index).
class MockBackend : public Backend {
 public:
  explicit MockBackend(MockScript script, bool multi_sample = true,
                       std::chrono::milliseconds delay = std::chrono::milliseconds(0));

  Completion complete(const CompletionRequest& req) override;
  bool supports_multi_sample() const override { return multi_sample_; }
  BackendKind kind() const override { return BackendKind::Mock; }

  // Instrumentation for concurrency and cache tests.
  std::int64_t calls() const { return calls_.load(); }
  std::int64_t high_water() const { return high_water_.load(); }
  void reset_counters();

 private:
  MockScript script_;
  bool multi_sample_;
  std::chrono::milliseconds delay_;
  std::atomic<std::int64_t> calls_{0};
  std::atomic<std::int64_t> in_flight_{0};
  std::atomic<std::int64_t> high_water_{0};
};

// Write-once, content-addressed store: one JSON file per key under a
// two-level hex fan-out. Writes go through create-then-rename; an attempt to
// overwrite a key with different samples raises CacheCorruption.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<Completion> lookup(const std::string& key) const;
  void store(const std::string& key, const Completion& completion);

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path path_for(const std::string& key) const;
  std::filesystem::path dir_;
};

struct BatchResult {
  std::optional<Completion> completion;
  std::string error_name;  // empty on success
  std::string error_detail;

  bool ok() const { return completion.has_value(); }
};

// Front door used by the rest of the harness: cache consultation, sampling
// fan-out for single-sample backends, and bounded-concurrency batching.
class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, std::string model,
          std::optional<std::filesystem::path> cache_dir = std::nullopt);

  const std::string& model() const { return model_; }

  Completion complete(const CompletionRequest& req);

  // Results come back in input order; per-item failures are captured in
  // place and never abort the batch.
  std::vector<BatchResult> run_batch(const std::vector<CompletionRequest>& reqs,
                                     int max_in_flight);

 private:
  Completion complete_uncached(const CompletionRequest& req, const std::string& key);

  std::shared_ptr<Backend> backend_;
  std::string model_;
  std::optional<ResponseCache> cache_;
};

}  // namespace preempt::modelgate
