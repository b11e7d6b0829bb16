#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "preempt/runner.hpp"

namespace {

using preempt::runner::ExperimentConfig;

struct CliOverrides {
  std::string config_path;
  std::string dataset_path;
  std::string dataset_tag;
  long long sample_n = -1;
  long long sample_seed = -1;
  std::string model;
  std::string base_url;
  std::string method;
  int sc = -1;
  int sc_samples = -1;
  std::vector<std::string> setups;
  std::vector<std::string> mitigations;
  std::string wrong_answers;
  std::string output_dir;
  int max_in_flight = -1;
  std::string mock_script;
  std::string template_dir;
  std::string cache_dir;
};

void add_common_options(CLI::App* cmd, CliOverrides& o, bool config_required) {
  auto* opt = cmd->add_option("--config", o.config_path, "experiment config file");
  if (config_required) opt->required();
  cmd->add_option("--dataset-path", o.dataset_path, "dataset JSONL file");
  cmd->add_option("--dataset", o.dataset_tag,
                  "dataset tag (gsm8k|mathqa|math|hotpotqa|csqa|strategyqa|<custom>)");
  cmd->add_option("--n", o.sample_n, "test-set size (0 keeps the whole set)");
  cmd->add_option("--seed", o.sample_seed, "sampling seed");
  cmd->add_option("--model", o.model, "model id");
  cmd->add_option("--base-url", o.base_url, "chat-completions endpoint base URL");
  cmd->add_option("--method", o.method, "cot method: zs or fs");
  cmd->add_flag("--sc,!--no-sc", o.sc, "toggle self-consistency");
  cmd->add_option("--sc-samples", o.sc_samples, "samples per self-consistency vote");
  cmd->add_option("--setups", o.setups, "setups to run (normal upa mpa plugin:<name>)");
  cmd->add_option("--mitigations", o.mitigations, "mitigations (none restate reflect)");
  cmd->add_option("--wrong-answers", o.wrong_answers, "wrong-answer sidecar JSONL");
  cmd->add_option("--out", o.output_dir, "run output directory");
  cmd->add_option("--max-in-flight", o.max_in_flight, "max concurrent backend requests");
  cmd->add_option("--mock-script,--script", o.mock_script,
                  "mock script (forces the mock backend)");
  cmd->add_option("--templates", o.template_dir, "prompt template directory");
  cmd->add_option("--cache-dir", o.cache_dir, "response cache directory");
}

ExperimentConfig build_config(const CliOverrides& o) {
  ExperimentConfig config;
  if (!o.config_path.empty()) config = ExperimentConfig::from_file(o.config_path);
  if (!o.dataset_path.empty()) config.dataset_path = o.dataset_path;
  if (!o.dataset_tag.empty()) config.dataset_tag = o.dataset_tag;
  if (o.sample_n >= 0) config.sample_n = static_cast<std::size_t>(o.sample_n);
  if (o.sample_seed >= 0) config.sample_seed = static_cast<std::uint64_t>(o.sample_seed);
  if (!o.model.empty()) config.model = o.model;
  if (!o.base_url.empty()) config.base_url = o.base_url;
  if (!o.method.empty()) {
    if (o.method == "zs") {
      config.method.base = preempt::promptkit::CotBase::ZeroShot;
    } else if (o.method == "fs") {
      config.method.base = preempt::promptkit::CotBase::FewShot;
    } else {
      throw preempt::runner::ConfigError("--method must be zs or fs");
    }
  }
  if (o.sc >= 0) config.method.sc = o.sc > 0;
  if (o.sc_samples > 0) config.method.sc_samples = o.sc_samples;
  if (!o.setups.empty()) config.setups = o.setups;
  if (!o.mitigations.empty()) config.mitigations = o.mitigations;
  if (!o.wrong_answers.empty()) config.wrong_answers = o.wrong_answers;
  if (!o.output_dir.empty()) config.output_dir = o.output_dir;
  if (o.max_in_flight > 0) config.max_in_flight = o.max_in_flight;
  if (!o.mock_script.empty()) config.mock_script = o.mock_script;
  if (!o.template_dir.empty()) config.template_dir = o.template_dir;
  if (!o.cache_dir.empty()) config.cache_dir = o.cache_dir;
  return config;
}

int run_command(const CliOverrides& overrides, bool force_mock) {
  ExperimentConfig config = build_config(overrides);
  if (force_mock && config.mock_script.empty()) {
    throw preempt::runner::ConfigError("mock mode needs --mock-script");
  }
  auto outcome = preempt::runner::run_experiment(config);
  std::cout << "run complete: " << outcome.manifest.record_count << " records under "
            << config.output_dir.string() << "\n";
  if (outcome.item_failures > 0) {
    std::cout << outcome.item_failures << " item(s) failed; their records carry the error\n";
    return 2;
  }
  return 0;
}

int mkwrong_command(const CliOverrides& overrides) {
  ExperimentConfig config = build_config(overrides);
  if (config.wrong_answers.empty()) {
    throw preempt::runner::ConfigError("mkwrong needs --wrong-answers (or the config key)");
  }
  auto outcome = preempt::runner::provision_wrong_answers(config);
  std::cout << "wrong answers: " << outcome.provisioned << " provisioned, " << outcome.kept
            << " kept, " << outcome.failures.size() << " failed -> "
            << config.wrong_answers.string() << "\n";
  for (const auto& [id, reason] : outcome.failures) {
    std::cout << "  failed " << id << ": " << reason << "\n";
  }
  return outcome.failures.empty() ? 0 : 2;
}

int report_command(const std::string& manifest_path, bool svg) {
  auto manifest = preempt::runner::RunManifest::from_file(manifest_path);
  auto files = preempt::runner::emit_report(manifest, svg);
  for (const auto& f : files.files) std::cout << "wrote " << f.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"preempt: preemptive-answer robustness harness for chat models"};
  app.require_subcommand(1);

  CliOverrides run_opts;
  auto* run_cmd = app.add_subcommand("run", "execute an experiment");
  add_common_options(run_cmd, run_opts, /*config_required=*/false);

  CliOverrides mock_opts;
  auto* mock_cmd = app.add_subcommand("mock", "execute an experiment against the mock backend");
  add_common_options(mock_cmd, mock_opts, /*config_required=*/false);
  mock_cmd->get_option("--mock-script")->required();

  CliOverrides mkwrong_opts;
  auto* mkwrong_cmd = app.add_subcommand("mkwrong", "provision the wrong-answer sidecar");
  add_common_options(mkwrong_cmd, mkwrong_opts, /*config_required=*/false);

  std::string manifest_path;
  bool svg = false;
  auto* report_cmd = app.add_subcommand("report", "emit report files from a run manifest");
  report_cmd->add_option("--manifest", manifest_path, "path to manifest.json")->required();
  report_cmd->add_flag("--svg", svg, "also emit bar-chart SVGs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return run_command(run_opts, false);
    if (mock_cmd->parsed()) return run_command(mock_opts, true);
    if (mkwrong_cmd->parsed()) return mkwrong_command(mkwrong_opts);
    if (report_cmd->parsed()) return report_command(manifest_path, svg);
  } catch (const preempt::Error& e) {
    std::cerr << "error [" << e.name() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
