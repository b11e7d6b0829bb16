#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "preempt/modelgate.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <ctime>
#include <random>
#include <sstream>
#include <thread>

#include "preempt/util.hpp"

namespace preempt::modelgate {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::string backend_kind_str(BackendKind kind) {
  return kind == BackendKind::Live ? "live" : "mock";
}

ordered_json completion_to_json(const Completion& c) {
  ordered_json out;
  out["schema"] = 1;
  out["request_hash"] = c.request_hash;
  out["samples"] = c.samples;
  out["backend"] = backend_kind_str(c.backend);
  out["backend_detail"] = c.backend_detail;
  if (c.usage) {
    out["usage"] = {{"prompt_tokens", c.usage->prompt_tokens},
                    {"completion_tokens", c.usage->completion_tokens}};
  }
  out["timestamp"] = c.timestamp;
  return out;
}

Completion completion_from_json(const json& payload) {
  Completion c;
  c.request_hash = payload.at("request_hash").get<std::string>();
  c.samples = payload.at("samples").get<std::vector<std::string>>();
  c.backend = payload.at("backend").get<std::string>() == "live" ? BackendKind::Live
                                                                 : BackendKind::Mock;
  c.backend_detail = payload.value("backend_detail", "");
  if (payload.contains("usage")) {
    TokenUsage usage;
    usage.prompt_tokens = payload.at("usage").value("prompt_tokens", 0LL);
    usage.completion_tokens = payload.at("usage").value("completion_tokens", 0LL);
    c.usage = usage;
  }
  c.timestamp = payload.value("timestamp", "");
  return c;
}

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt) {
  double delay = static_cast<double>(policy.base_delay.count());
  for (int k = 0; k < attempt; ++k) delay *= 2.0;
  if (delay > static_cast<double>(policy.max_delay.count())) {
    delay = static_cast<double>(policy.max_delay.count());
  }
  if (policy.jitter > 0.0) {
    thread_local std::mt19937_64 gen(std::random_device{}());
    std::uniform_real_distribution<double> dist(-policy.jitter, policy.jitter);
    delay *= 1.0 + dist(gen);
  }
  if (delay < 0.0) delay = 0.0;
  return std::chrono::milliseconds(static_cast<long long>(delay));
}

}  // namespace

std::string canonical_request_json(const CompletionRequest& req) {
  ordered_json out;
  out["model"] = req.model;
  ordered_json messages = ordered_json::array();
  for (const auto& m : req.messages) {
    messages.push_back({{"role", promptkit::to_string(m.role)}, {"content", m.content}});
  }
  out["messages"] = std::move(messages);
  ordered_json params;
  params["temperature"] = req.params.temperature;
  params["top_p"] = req.params.top_p;
  if (req.params.seed) {
    params["seed"] = *req.params.seed;
  } else {
    params["seed"] = nullptr;
  }
  params["n"] = req.params.n_samples;
  out["params"] = std::move(params);
  if (req.sample_index) out["sample_index"] = *req.sample_index;
  return out.dump();
}

std::string cache_key(const CompletionRequest& req) {
  return util::sha256_hex(canonical_request_json(req));
}

// ---- HttpBackend -----------------------------------------------------------

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  if (config_.api_key.empty()) {
    if (const char* env = std::getenv("PREEMPT_API_KEY")) config_.api_key = env;
  }
  // Split "scheme://host[:port]/prefix" into client target and path prefix.
  std::string url = config_.base_url;
  std::size_t scheme = url.find("://");
  std::size_t host_begin = scheme == std::string::npos ? 0 : scheme + 3;
  std::size_t slash = url.find('/', host_begin);
  if (slash == std::string::npos) {
    host_ = url;
    path_prefix_.clear();
  } else {
    host_ = url.substr(0, slash);
    path_prefix_ = url.substr(slash);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  }
}

Completion HttpBackend::complete(const CompletionRequest& req) {
  if (config_.api_key.empty()) {
    throw AuthError("no API key: set PREEMPT_API_KEY or config api_key");
  }
  ordered_json body;
  body["model"] = req.model;
  ordered_json messages = ordered_json::array();
  for (const auto& m : req.messages) {
    messages.push_back({{"role", promptkit::to_string(m.role)}, {"content", m.content}});
  }
  body["messages"] = std::move(messages);
  body["temperature"] = req.params.temperature;
  body["top_p"] = req.params.top_p;
  if (req.params.seed) body["seed"] = *req.params.seed;
  body["n"] = req.params.n_samples;
  const std::string payload = body.dump();
  const std::string path = path_prefix_ + "/chat/completions";

  httplib::Headers headers = {{"Authorization", "Bearer " + config_.api_key}};

  long last_status = 0;
  std::string last_detail;
  bool last_transport = false;
  for (int attempt = 0; attempt < config_.retry.max_attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff_delay(config_.retry, attempt - 1));
    }
    httplib::Client client(host_);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(config_.timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(config_.timeout));
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      last_transport = true;
      last_detail = httplib::to_string(res.error());
      continue;
    }
    last_transport = false;
    last_status = res->status;
    last_detail = res->body.substr(0, 200);
    if (res->status == 401 || res->status == 403) {
      throw AuthError("backend rejected credentials: " + last_detail);
    }
    if (res->status == 429 || res->status >= 500) {
      continue;  // retryable
    }
    if (res->status >= 400) {
      throw BackendRefused(res->status, last_detail);
    }

    json parsed;
    try {
      parsed = json::parse(res->body);
    } catch (const json::exception& ex) {
      throw BackendRefused(res->status, std::string("unparseable body: ") + ex.what());
    }
    Completion out;
    out.backend = BackendKind::Live;
    out.backend_detail = config_.base_url;
    out.timestamp = utc_now();
    if (!parsed.contains("choices") || !parsed.at("choices").is_array()) {
      throw BackendRefused(res->status, "response lacks choices array");
    }
    for (const auto& choice : parsed.at("choices")) {
      out.samples.push_back(choice.at("message").at("content").get<std::string>());
    }
    if (parsed.contains("usage") && parsed.at("usage").is_object()) {
      TokenUsage usage;
      usage.prompt_tokens = parsed.at("usage").value("prompt_tokens", 0LL);
      usage.completion_tokens = parsed.at("usage").value("completion_tokens", 0LL);
      out.usage = usage;
    }
    if (out.samples.empty()) {
      throw BackendRefused(res->status, "response carries no samples");
    }
    return out;
  }
  if (last_transport) {
    throw TransportError("request failed after " + std::to_string(config_.retry.max_attempts) +
                         " attempts: " + last_detail);
  }
  if (last_status == 429) {
    throw RateLimitedExhausted("still rate limited after " +
                               std::to_string(config_.retry.max_attempts) + " attempts");
  }
  throw BackendRefused(last_status, last_detail);
}

// ---- MockBackend -----------------------------------------------------------

MockScript MockScript::load(const fs::path& path) {
  std::string content = util::read_file(path);
  return parse(content, util::sha256_hex(content).substr(0, 12));
}

MockScript MockScript::parse(const std::string& jsonl, const std::string& id) {
  MockScript script;
  script.id = id;
  std::istringstream in(jsonl);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& ex) {
      throw Error("MalformedScript", "mock script line " + std::to_string(line_no) + ": " + ex.what());
    }
    MockRule rule;
    rule.respond = record.at("respond").get<std::string>();
    rule.seed_jitter = record.value("seed_jitter", false);
    if (record.contains("match")) {
      const auto& match = record.at("match");
      if (match.contains("contains")) rule.contains = match.at("contains").get<std::string>();
      if (match.contains("problem_id")) rule.problem_id = match.at("problem_id").get<std::string>();
      script.rules.push_back(std::move(rule));
    } else {
      script.default_response = rule.respond;
    }
  }
  return script;
}

MockBackend::MockBackend(MockScript script, bool multi_sample, std::chrono::milliseconds delay)
    : script_(std::move(script)), multi_sample_(multi_sample), delay_(delay) {}

void MockBackend::reset_counters() {
  calls_ = 0;
  in_flight_ = 0;
  high_water_ = 0;
}

Completion MockBackend::complete(const CompletionRequest& req) {
  std::int64_t now = ++in_flight_;
  std::int64_t peak = high_water_.load();
  while (now > peak && !high_water_.compare_exchange_weak(peak, now)) {
  }
  if (delay_.count() > 0) {
    // vary the delay per request so batches complete out of order
    auto spread = util::fnv1a64(canonical_request_json(req)) % 5;
    std::this_thread::sleep_for(delay_ + std::chrono::milliseconds(spread));
  }

  const MockRule* matched = nullptr;
  for (const auto& rule : script_.rules) {
    bool ok = true;
    if (rule.problem_id && (!req.problem_id || *req.problem_id != *rule.problem_id)) ok = false;
    if (ok && rule.contains) {
      bool found = false;
      for (const auto& m : req.messages) {
        if (m.content.find(*rule.contains) != std::string::npos) {
          found = true;
          break;
        }
      }
      if (!found) ok = false;
    }
    if (ok) {
      matched = &rule;
      break;
    }
  }

  std::string response_template;
  bool seed_jitter = false;
  if (matched) {
    response_template = matched->respond;
    seed_jitter = matched->seed_jitter;
  } else if (script_.default_response) {
    response_template = *script_.default_response;
  } else {
    --in_flight_;
    ++calls_;
    throw BackendRefused(404, "no mock rule matches the request");
  }

  const std::uint64_t request_fingerprint = util::fnv1a64(canonical_request_json(req));
  Completion out;
  out.backend = BackendKind::Mock;
  out.backend_detail = script_.id;
  out.timestamp = utc_now();
  int n = req.params.n_samples;
  for (int i = 0; i < n; ++i) {
    std::string text = response_template;
    auto replace = [&text](std::string_view token, const std::string& value) {
      std::size_t pos = 0;
      while ((pos = text.find(token, pos)) != std::string::npos) {
        text.replace(pos, token.size(), value);
        pos += value.size();
      }
    };
    replace("{sample_index}", std::to_string(i));
    replace("{seed}", req.params.seed ? std::to_string(*req.params.seed) : "");
    if (seed_jitter) {
      std::uint64_t jitter = splitmix64(request_fingerprint ^ static_cast<std::uint64_t>(i));
      replace("{jitter}", std::to_string(jitter % 1000));
    }
    out.samples.push_back(std::move(text));
  }
  --in_flight_;
  ++calls_;
  return out;
}

// ---- ResponseCache ---------------------------------------------------------

ResponseCache::ResponseCache(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
}

fs::path ResponseCache::path_for(const std::string& key) const {
  return dir_ / key.substr(0, 2) / key.substr(2, 2) / (key + ".json");
}

std::optional<Completion> ResponseCache::lookup(const std::string& key) const {
  auto content = util::read_file_if_exists(path_for(key));
  if (!content) return std::nullopt;
  try {
    return completion_from_json(json::parse(*content));
  } catch (const json::exception&) {
    throw CacheCorruption(key);
  }
}

void ResponseCache::store(const std::string& key, const Completion& completion) {
  fs::path path = path_for(key);
  if (auto existing = util::read_file_if_exists(path)) {
    Completion prior;
    try {
      prior = completion_from_json(json::parse(*existing));
    } catch (const json::exception&) {
      throw CacheCorruption(key);
    }
    if (prior.samples != completion.samples) throw CacheCorruption(key);
    return;  // identical content, write-once holds
  }
  fs::create_directories(path.parent_path());
  util::write_file_atomic(path, completion_to_json(completion).dump());
}

// ---- Gateway ---------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<Backend> backend, std::string model,
                 std::optional<fs::path> cache_dir)
    : backend_(std::move(backend)), model_(std::move(model)) {
  if (cache_dir) cache_.emplace(*cache_dir);
}

Completion Gateway::complete(const CompletionRequest& req) {
  if (req.messages.empty()) throw std::invalid_argument("complete: empty message list");
  if (req.params.n_samples < 1) throw std::invalid_argument("complete: n_samples must be >= 1");
  const std::string key = cache_key(req);
  if (cache_) {
    if (auto hit = cache_->lookup(key)) return *hit;
  }
  Completion out = complete_uncached(req, key);
  if (cache_) cache_->store(key, out);
  return out;
}

Completion Gateway::complete_uncached(const CompletionRequest& req, const std::string& key) {
  if (req.params.n_samples > 1 && !backend_->supports_multi_sample()) {
    // Fan a multi-sample request out into single draws, each cached under its
    // own key (sample_index becomes part of the identity).
    Completion merged;
    merged.request_hash = key;
    merged.backend = backend_->kind();
    for (int i = 0; i < req.params.n_samples; ++i) {
      CompletionRequest sub = req;
      sub.params.n_samples = 1;
      sub.sample_index = i;
      const std::string sub_key = cache_key(sub);
      std::optional<Completion> piece;
      if (cache_) piece = cache_->lookup(sub_key);
      if (!piece) {
        piece = backend_->complete(sub);
        piece->request_hash = sub_key;
        if (cache_) cache_->store(sub_key, *piece);
      }
      merged.backend_detail = piece->backend_detail;
      merged.timestamp = piece->timestamp;
      merged.samples.push_back(piece->samples.at(0));
    }
    return merged;
  }
  Completion out = backend_->complete(req);
  out.request_hash = key;
  if (static_cast<int>(out.samples.size()) != req.params.n_samples) {
    throw BackendRefused(0, "backend returned " + std::to_string(out.samples.size()) +
                                " samples, expected " + std::to_string(req.params.n_samples));
  }
  return out;
}

std::vector<BatchResult> Gateway::run_batch(const std::vector<CompletionRequest>& reqs,
                                            int max_in_flight) {
  if (max_in_flight < 1) throw std::invalid_argument("run_batch: max_in_flight must be >= 1");
  std::vector<BatchResult> results(reqs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= reqs.size()) return;
      try {
        results[i].completion = complete(reqs[i]);
      } catch (const Error& e) {
        results[i].error_name = e.name();
        results[i].error_detail = e.what();
      } catch (const std::exception& e) {
        results[i].error_name = "InternalError";
        results[i].error_detail = e.what();
      }
    }
  };
  std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(max_in_flight), reqs.size());
  if (n_threads <= 1) {
    worker();
    return results;
  }
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return results;
}

}  // namespace preempt::modelgate
