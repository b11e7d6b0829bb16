#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "preempt/errors.hpp"
#include "preempt/evalcore.hpp"
#include "preempt/modelgate.hpp"
#include "preempt/promptkit.hpp"

namespace preempt::runner {

inline constexpr const char* kVersion = "0.1.0";

struct ConfigError : Error {
  explicit ConfigError(const std::string& detail) : Error("ConfigError", detail) {}
};
struct MissingRuns : Error {
  explicit MissingRuns(const std::string& detail) : Error("MissingRuns", detail) {}
};

struct ExperimentConfig {
  std::filesystem::path dataset_path;
  std::string dataset_tag;
  std::size_t sample_n = 0;  // 0 keeps the whole set
  std::uint64_t sample_seed = 42;
  std::string model = "gpt-3.5-turbo-1106";
  std::string base_url = "https://api.openai.com/v1";
  promptkit::CotMethod method;
  std::vector<std::string> setups = {"normal"};     // normal | upa | mpa | plugin:<name>
  std::vector<std::string> mitigations = {"none"};  // none | restate | reflect
  std::filesystem::path wrong_answers;              // sidecar, required for mpa/plugin
  std::filesystem::path output_dir;
  int max_in_flight = 4;
  std::filesystem::path mock_script;  // non-empty forces the mock backend
  std::filesystem::path template_dir;
  std::filesystem::path cache_dir;  // defaults to output_dir/cache
  int wrong_answer_max_attempts = 5;
  int retry_attempts = 5;       // transport retry budget for the live backend
  std::string system_preamble;  // off by default; the shipped formats use user roles only

  // Minimal TOML subset: `key = value` lines with strings, integers, booleans
  // and flat string arrays; '#' starts a comment.
  static ExperimentConfig from_file(const std::filesystem::path& path);

  void validate() const;
};

struct RunManifest {
  std::string config_json;
  std::string dataset_sha256;
  std::map<std::string, std::string> template_hashes;
  std::string code_version;
  std::string started_at;
  std::string finished_at;
  // label ("base_<setup>_<mitigation>" or "reflect_<setup>") -> relative path
  std::map<std::string, std::string> record_files;
  std::size_t record_count = 0;
  std::size_t item_failures = 0;
  std::filesystem::path root;  // directory holding the manifest

  static RunManifest from_file(const std::filesystem::path& path);
  std::string to_json() const;
};

struct RunOutcome {
  RunManifest manifest;
  std::size_t item_failures = 0;
};

// Executes the full (problem x setup x mitigation) grid against the
// configured backend, persists one JSONL record file per grid cell group and
// seals a manifest. Reruns skip work already covered by records or by the
// response cache. Per-item gateway failures become failed records.
// `backend_override` substitutes the configured backend (used by tests to
// instrument call counts).
RunOutcome run_experiment(const ExperimentConfig& config,
                          std::shared_ptr<modelgate::Backend> backend_override = nullptr);

struct ProvisionOutcome {
  std::size_t provisioned = 0;
  std::size_t kept = 0;
  std::vector<std::pair<std::string, std::string>> failures;  // id -> reason
};

// Routes each sampled problem to its wrong-answer strategy and writes the
// sidecar. Existing verified entries are kept.
ProvisionOutcome provision_wrong_answers(const ExperimentConfig& config);

struct ReportFiles {
  std::vector<std::filesystem::path> files;
};

// Writes report.md plus breakdown/mitigation/reflection CSVs (and bar-chart
// SVGs on request) next to the manifest.
ReportFiles emit_report(const RunManifest& manifest, bool svg);

// Internals shared with the tests.
std::vector<evalcore::Mitigation> base_variants(const std::vector<std::string>& mitigations);
std::size_t expected_record_count(std::size_t n_problems, const std::vector<std::string>& setups,
                                  const std::vector<std::string>& mitigations);

}  // namespace preempt::runner
