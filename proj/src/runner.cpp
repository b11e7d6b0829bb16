#include "preempt/runner.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "preempt/corpus.hpp"
#include "preempt/extract.hpp"
#include "preempt/util.hpp"

namespace preempt::runner {

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

// Holds <run dir>/.lock exclusively for the lifetime of a run.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      throw ConfigError("run directory is locked (remove " + path_.string() +
                        " if no other run is active)");
    }
    std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] ssize_t written = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

// ---- config file parsing ---------------------------------------------------

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

struct ConfigValue {
  std::string scalar;
  std::vector<std::string> array;
  bool is_array = false;
};

std::string parse_quoted(const std::string& text, std::size_t line_no) {
  std::string t = util::trim(text);
  if (t.size() < 2 || t.front() != '"' || t.back() != '"') {
    throw ConfigError("line " + std::to_string(line_no) + ": expected a quoted string: " + text);
  }
  return t.substr(1, t.size() - 2);
}

std::map<std::string, ConfigValue> parse_config_file(const fs::path& path) {
  std::string content = util::read_file(path);
  std::map<std::string, ConfigValue> out;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string stripped = util::trim(strip_comment(line));
    if (stripped.empty()) continue;
    std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = util::trim(stripped.substr(0, eq));
    std::string value = util::trim(stripped.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": empty key or value");
    }
    ConfigValue cv;
    if (value.front() == '[') {
      if (value.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) + ": unterminated array");
      }
      cv.is_array = true;
      std::string body = value.substr(1, value.size() - 2);
      std::size_t pos = 0;
      while (pos < body.size()) {
        std::size_t comma = body.find(',', pos);
        std::string item = body.substr(pos, comma == std::string::npos ? std::string::npos
                                                                       : comma - pos);
        if (!util::trim(item).empty()) cv.array.push_back(parse_quoted(item, line_no));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
    } else if (value.front() == '"') {
      cv.scalar = parse_quoted(value, line_no);
    } else {
      cv.scalar = value;  // bare integer or boolean
    }
    out[key] = std::move(cv);
  }
  return out;
}

long long to_int(const std::string& s, const std::string& key) {
  try {
    return std::stoll(s);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " expects an integer, got: " + s);
  }
}

bool to_bool(const std::string& s, const std::string& key) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("config key " + key + " expects true/false, got: " + s);
}

extract::SetupKind setup_kind_of(const std::string& label) {
  if (label == "normal") return extract::SetupKind::Normal;
  if (label == "upa") return extract::SetupKind::Upa;
  if (label == "mpa") return extract::SetupKind::Mpa;
  if (util::starts_with(label, "plugin:") && label.size() > 7) return extract::SetupKind::Plugin;
  throw ConfigError("unknown setup: " + label);
}

ordered_json config_to_json(const ExperimentConfig& c) {
  ordered_json out;
  out["dataset_path"] = c.dataset_path.string();
  out["dataset"] = c.dataset_tag;
  out["sample_n"] = c.sample_n;
  out["sample_seed"] = c.sample_seed;
  out["model"] = c.model;
  out["base_url"] = c.base_url;
  out["method"] = c.method.base == promptkit::CotBase::ZeroShot ? "zs" : "fs";
  out["self_consistency"] = c.method.sc;
  out["sc_samples"] = c.method.sc_samples;
  out["setups"] = c.setups;
  out["mitigations"] = c.mitigations;
  out["wrong_answers"] = c.wrong_answers.string();
  out["output_dir"] = c.output_dir.string();
  out["max_in_flight"] = c.max_in_flight;
  out["mock_script"] = c.mock_script.string();
  out["template_dir"] = c.template_dir.string();
  out["cache_dir"] = c.cache_dir.string();
  out["wrong_answer_max_attempts"] = c.wrong_answer_max_attempts;
  out["retry_attempts"] = c.retry_attempts;
  out["system_preamble"] = c.system_preamble;
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const fs::path& path) {
  auto values = parse_config_file(path);
  ExperimentConfig config;
  auto take = [&](const char* key) -> const ConfigValue* {
    auto it = values.find(key);
    return it == values.end() ? nullptr : &it->second;
  };
  if (auto* v = take("dataset_path")) config.dataset_path = v->scalar;
  if (auto* v = take("dataset")) config.dataset_tag = v->scalar;
  if (auto* v = take("sample_n")) config.sample_n = static_cast<std::size_t>(to_int(v->scalar, "sample_n"));
  if (auto* v = take("sample_seed")) config.sample_seed = static_cast<std::uint64_t>(to_int(v->scalar, "sample_seed"));
  if (auto* v = take("model")) config.model = v->scalar;
  if (auto* v = take("base_url")) config.base_url = v->scalar;
  if (auto* v = take("method")) {
    if (v->scalar == "zs") {
      config.method.base = promptkit::CotBase::ZeroShot;
    } else if (v->scalar == "fs") {
      config.method.base = promptkit::CotBase::FewShot;
    } else {
      throw ConfigError("method must be zs or fs, got: " + v->scalar);
    }
  }
  if (auto* v = take("self_consistency")) config.method.sc = to_bool(v->scalar, "self_consistency");
  if (auto* v = take("sc_samples")) config.method.sc_samples = static_cast<int>(to_int(v->scalar, "sc_samples"));
  if (auto* v = take("setups")) config.setups = v->array;
  if (auto* v = take("mitigations")) config.mitigations = v->array;
  if (auto* v = take("wrong_answers")) config.wrong_answers = v->scalar;
  if (auto* v = take("output_dir")) config.output_dir = v->scalar;
  if (auto* v = take("max_in_flight")) config.max_in_flight = static_cast<int>(to_int(v->scalar, "max_in_flight"));
  if (auto* v = take("mock_script")) config.mock_script = v->scalar;
  if (auto* v = take("template_dir")) config.template_dir = v->scalar;
  if (auto* v = take("cache_dir")) config.cache_dir = v->scalar;
  if (auto* v = take("wrong_answer_max_attempts")) {
    config.wrong_answer_max_attempts = static_cast<int>(to_int(v->scalar, "wrong_answer_max_attempts"));
  }
  if (auto* v = take("retry_attempts")) {
    config.retry_attempts = static_cast<int>(to_int(v->scalar, "retry_attempts"));
  }
  if (auto* v = take("system_preamble")) config.system_preamble = v->scalar;

  static const std::set<std::string> known = {
      "dataset_path", "dataset", "sample_n", "sample_seed", "model", "base_url", "method",
      "self_consistency", "sc_samples", "setups", "mitigations", "wrong_answers", "output_dir",
      "max_in_flight", "mock_script", "template_dir", "cache_dir", "wrong_answer_max_attempts",
      "retry_attempts", "system_preamble"};
  for (const auto& [key, value] : values) {
    if (!known.count(key)) throw ConfigError("unknown config key: " + key);
  }
  return config;
}

void ExperimentConfig::validate() const {
  if (dataset_path.empty()) throw ConfigError("dataset_path is required");
  if (dataset_tag.empty()) throw ConfigError("dataset tag is required");
  if (output_dir.empty()) throw ConfigError("output_dir is required");
  if (max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
  if (retry_attempts < 1) throw ConfigError("retry_attempts must be >= 1");
  if (method.sc && method.sc_samples < 1) throw ConfigError("sc_samples must be >= 1");
  if (setups.empty()) throw ConfigError("at least one setup is required");
  std::set<std::string> seen;
  bool needs_wrong = false;
  for (const auto& s : setups) {
    setup_kind_of(s);  // throws on unknown
    if (!seen.insert(s).second) throw ConfigError("setup listed twice: " + s);
    if (s == "mpa" || util::starts_with(s, "plugin:")) needs_wrong = true;
  }
  bool has_attacked = false;
  for (const auto& s : setups) has_attacked = has_attacked || s != "normal";
  for (const auto& m : mitigations) {
    evalcore::mitigation_from_string(m);  // throws on unknown
    if (m == "reflect" && !has_attacked) {
      throw ConfigError("reflect requires an attacked setup (upa, mpa or plugin)");
    }
  }
  if (needs_wrong && wrong_answers.empty()) {
    throw ConfigError("mpa/plugin setups need a wrong_answers sidecar");
  }
}

RunManifest RunManifest::from_file(const fs::path& path) {
  json j = json::parse(util::read_file(path));
  RunManifest m;
  m.config_json = j.at("config").dump();
  m.dataset_sha256 = j.at("dataset_sha256").get<std::string>();
  for (const auto& [key, value] : j.at("template_hashes").items()) {
    m.template_hashes[key] = value.get<std::string>();
  }
  m.code_version = j.at("code_version").get<std::string>();
  m.started_at = j.at("started_at").get<std::string>();
  m.finished_at = j.at("finished_at").get<std::string>();
  for (const auto& [key, value] : j.at("record_files").items()) {
    m.record_files[key] = value.get<std::string>();
  }
  m.record_count = j.at("record_count").get<std::size_t>();
  m.item_failures = j.at("item_failures").get<std::size_t>();
  m.root = path.parent_path();
  return m;
}

std::string RunManifest::to_json() const {
  ordered_json out;
  out["schema"] = 1;
  out["config"] = json::parse(config_json);
  out["dataset_sha256"] = dataset_sha256;
  out["template_hashes"] = template_hashes;
  out["code_version"] = code_version;
  out["started_at"] = started_at;
  out["finished_at"] = finished_at;
  out["record_files"] = record_files;
  out["record_count"] = record_count;
  out["item_failures"] = item_failures;
  return out.dump(2);
}

std::vector<evalcore::Mitigation> base_variants(const std::vector<std::string>& mitigations) {
  std::vector<evalcore::Mitigation> out;
  bool none = false;
  bool restate = false;
  bool reflect = false;
  for (const auto& m : mitigations) {
    switch (evalcore::mitigation_from_string(m)) {
      case evalcore::Mitigation::None: none = true; break;
      case evalcore::Mitigation::Restate: restate = true; break;
      case evalcore::Mitigation::Reflect: reflect = true; break;
    }
  }
  // Reflection consumes the plain attacked run, so it forces the none variant.
  if (none || reflect || (!none && !restate)) out.push_back(evalcore::Mitigation::None);
  if (restate) out.push_back(evalcore::Mitigation::Restate);
  return out;
}

std::size_t expected_record_count(std::size_t n_problems, const std::vector<std::string>& setups,
                                  const std::vector<std::string>& mitigations) {
  std::size_t base = n_problems * setups.size() * base_variants(mitigations).size();
  bool reflect = std::find(mitigations.begin(), mitigations.end(), "reflect") != mitigations.end();
  if (!reflect) return base;
  std::size_t attacked = 0;
  for (const auto& s : setups) {
    if (s != "normal") ++attacked;
  }
  return base + n_problems * attacked;
}

namespace {

struct PlanItem {
  const corpus::Problem* problem = nullptr;
  promptkit::AttackSpec attack;
  evalcore::Mitigation mitigation = evalcore::Mitigation::None;
};

std::string group_label(const std::string& setup, evalcore::Mitigation mitigation) {
  return "base_" + setup + "_" + evalcore::to_string(mitigation);
}

evalcore::RunRecord blank_record(const PlanItem& item, const promptkit::CotMethod& method) {
  evalcore::RunRecord r;
  r.problem_id = item.problem->id;
  r.dataset = item.problem->dataset.name;
  r.method = method;
  r.setup = item.attack.kind;
  r.setup_label = item.attack.label();
  if (item.attack.wrong) r.wrong_value = item.attack.wrong->value;
  r.mitigation = item.mitigation;
  return r;
}

promptkit::AttackSpec attack_for(const std::string& setup_label, const corpus::Problem& problem,
                                 const std::map<std::string, corpus::WrongAnswer>& wrongs) {
  switch (setup_kind_of(setup_label)) {
    case extract::SetupKind::Normal:
      return promptkit::AttackSpec::normal();
    case extract::SetupKind::Upa:
      return promptkit::AttackSpec::upa();
    case extract::SetupKind::Mpa:
      return promptkit::AttackSpec::mpa(wrongs.at(problem.id));
    case extract::SetupKind::Plugin:
      return promptkit::AttackSpec::plugin(setup_label.substr(7), wrongs.at(problem.id));
  }
  throw ConfigError("unknown setup: " + setup_label);
}

std::shared_ptr<modelgate::Backend> make_backend(const ExperimentConfig& config) {
  if (!config.mock_script.empty()) {
    return std::make_shared<modelgate::MockBackend>(modelgate::MockScript::load(config.mock_script));
  }
  modelgate::HttpBackendConfig http;
  http.base_url = config.base_url;
  http.retry.max_attempts = config.retry_attempts;
  return std::make_shared<modelgate::HttpBackend>(std::move(http));
}

corpus::ProblemSet load_and_sample(const ExperimentConfig& config) {
  corpus::ProblemSet set =
      corpus::load_dataset(config.dataset_path, corpus::Dataset::from_string(config.dataset_tag));
  if (config.sample_n > 0) {
    set = corpus::sample_testset(set, config.sample_n, config.sample_seed);
  }
  return set;
}

std::map<std::string, corpus::WrongAnswer> load_sidecar_checked(
    const ExperimentConfig& config, const corpus::ProblemSet& sampled, bool required) {
  std::map<std::string, corpus::WrongAnswer> out;
  if (config.wrong_answers.empty()) return out;
  if (!fs::exists(config.wrong_answers)) {
    if (required) {
      throw ConfigError("wrong-answer sidecar not found: " + config.wrong_answers.string());
    }
    return out;
  }
  for (auto& w : corpus::load_wrong_answers(config.wrong_answers)) {
    out[w.problem_id] = std::move(w);
  }
  if (!required) return out;
  for (const auto& p : sampled.problems) {
    auto it = out.find(p.id);
    if (it == out.end()) {
      throw ConfigError("sidecar lacks a wrong answer for problem " + p.id);
    }
    if (!it->second.verified || extract::exact_match(it->second.value, p.gold, p.kind)) {
      throw ConfigError("sidecar wrong answer for " + p.id + " does not fail exact match");
    }
  }
  return out;
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& config,
                          std::shared_ptr<modelgate::Backend> backend_override) {
  config.validate();
  fs::create_directories(config.output_dir);
  DirLock lock(config.output_dir);

  const std::string started_at = utc_now();
  promptkit::TemplateLibrary templates = promptkit::TemplateLibrary::load(
      config.template_dir.empty() ? promptkit::default_template_dir() : config.template_dir);
  corpus::ProblemSet sampled = load_and_sample(config);

  bool needs_wrong = false;
  for (const auto& s : config.setups) {
    if (s == "mpa" || util::starts_with(s, "plugin:")) needs_wrong = true;
  }
  auto wrongs = load_sidecar_checked(config, sampled, needs_wrong);

  fs::path cache_dir = config.cache_dir.empty() ? config.output_dir / "cache" : config.cache_dir;
  modelgate::Gateway gateway(backend_override ? std::move(backend_override) : make_backend(config),
                             config.model, cache_dir);

  fs::path records_dir = config.output_dir / "records";
  fs::create_directories(records_dir);

  const auto variants = base_variants(config.mitigations);
  const bool want_reflect = std::find(config.mitigations.begin(), config.mitigations.end(),
                                      "reflect") != config.mitigations.end();

  // Plan the base grid, reusing any records persisted by an earlier run.
  std::vector<PlanItem> plan;
  std::map<std::string, std::map<std::string, evalcore::RunRecord>> existing;
  for (const auto& setup : config.setups) {
    for (auto mitigation : variants) {
      std::string label = group_label(setup, mitigation);
      if (auto prior = util::read_file_if_exists(records_dir / (label + ".jsonl"))) {
        for (auto& r : evalcore::parse_records(*prior)) {
          existing[label].emplace(r.problem_id, std::move(r));
        }
      }
      for (const auto& problem : sampled.problems) {
        PlanItem item;
        item.problem = &problem;
        item.attack = attack_for(setup, problem, wrongs);
        item.mitigation = mitigation;
        plan.push_back(std::move(item));
      }
    }
  }

  std::vector<std::size_t> pending;  // indices into plan that need a request
  std::vector<modelgate::CompletionRequest> requests;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const PlanItem& item = plan[i];
    std::string label = group_label(item.attack.label(), item.mitigation);
    auto group = existing.find(label);
    if (group != existing.end() && group->second.count(item.problem->id)) continue;

    promptkit::PromptBundle bundle = promptkit::build_cot_prompt(*item.problem, config.method, templates);
    if (item.mitigation == evalcore::Mitigation::Restate) {
      bundle = promptkit::apply_restatement(bundle, templates);
    }
    switch (item.attack.kind) {
      case extract::SetupKind::Normal:
        break;
      case extract::SetupKind::Upa:
        bundle = promptkit::apply_upa(bundle, templates);
        break;
      case extract::SetupKind::Mpa:
        bundle = promptkit::apply_mpa(bundle, *item.attack.wrong, templates);
        break;
      case extract::SetupKind::Plugin:
        bundle = promptkit::PluginRegistry::global().apply(item.attack.plugin_name,
                                                           std::move(bundle), *item.attack.wrong);
        break;
    }
    std::size_t attack_transforms = 0;
    for (const auto& step : bundle.lineage) {
      if (step == "upa" || step == "mpa" || util::starts_with(step, "plugin:")) ++attack_transforms;
    }
    if (attack_transforms > 1) {
      throw std::logic_error("attack transform applied twice to one bundle");
    }
    bundle = promptkit::apply_system_preamble(std::move(bundle), config.system_preamble);
    modelgate::CompletionRequest req;
    req.model = config.model;
    req.messages = bundle.messages;
    req.params = bundle.params;
    req.problem_id = item.problem->id;
    pending.push_back(i);
    requests.push_back(std::move(req));
  }

  // A sealed manifest stays immutable: when every base and reflection record
  // already exists, hand the prior seal back untouched.
  if (pending.empty() && fs::exists(config.output_dir / "manifest.json")) {
    bool reflections_complete = true;
    if (want_reflect) {
      for (const auto& setup : config.setups) {
        if (setup == "normal") continue;
        auto prior_text = util::read_file_if_exists(records_dir / ("reflect_" + setup + ".jsonl"));
        if (!prior_text ||
            evalcore::parse_records(*prior_text).size() != sampled.problems.size()) {
          reflections_complete = false;
          break;
        }
      }
    }
    if (reflections_complete) {
      RunManifest sealed = RunManifest::from_file(config.output_dir / "manifest.json");
      std::size_t prior_failures = sealed.item_failures;
      return RunOutcome{std::move(sealed), prior_failures};
    }
  }

  std::size_t item_failures = 0;
  auto results = gateway.run_batch(requests, config.max_in_flight);
  for (std::size_t k = 0; k < pending.size(); ++k) {
    const PlanItem& item = plan[pending[k]];
    evalcore::RunRecord record = blank_record(item, config.method);
    const modelgate::BatchResult& result = results[k];
    if (result.ok()) {
      for (const auto& text : result.completion->samples) {
        record.samples.push_back(
            extract::split_output(text, item.attack.kind, item.problem->kind));
      }
      record = evalcore::judge(std::move(record), item.problem->gold, item.problem->kind);
    } else {
      record.error = result.error_name + ": " + result.error_detail;
      record.final_correct = false;
      ++item_failures;
    }
    existing[group_label(item.attack.label(), item.mitigation)].emplace(item.problem->id,
                                                                        std::move(record));
  }

  RunManifest manifest;
  manifest.root = config.output_dir;
  manifest.config_json = config_to_json(config).dump();
  manifest.dataset_sha256 = sampled.provenance.source_sha256;
  manifest.template_hashes = templates.hashes();
  manifest.code_version = kVersion;
  manifest.started_at = started_at;

  // Persist base groups in sampled problem order.
  std::size_t record_count = 0;
  for (const auto& setup : config.setups) {
    for (auto mitigation : variants) {
      std::string label = group_label(setup, mitigation);
      std::vector<evalcore::RunRecord> group;
      for (const auto& problem : sampled.problems) {
        group.push_back(existing[label].at(problem.id));
      }
      record_count += group.size();
      fs::path file = records_dir / (label + ".jsonl");
      util::write_file_atomic(file, evalcore::serialize_records(group));
      manifest.record_files[label] = "records/" + label + ".jsonl";
    }
  }

  // Reflection stage: a fresh conversation over each plain attacked output.
  if (want_reflect) {
    for (const auto& setup : config.setups) {
      if (setup == "normal") continue;
      std::string base_label = group_label(setup, evalcore::Mitigation::None);
      std::string reflect_label = "reflect_" + setup;
      std::map<std::string, evalcore::RunRecord> prior;
      if (auto prior_text = util::read_file_if_exists(records_dir / (reflect_label + ".jsonl"))) {
        for (auto& r : evalcore::parse_records(*prior_text)) {
          prior.emplace(r.problem_id, std::move(r));
        }
      }

      std::vector<const corpus::Problem*> todo;
      std::vector<modelgate::CompletionRequest> reflect_requests;
      for (const auto& problem : sampled.problems) {
        if (prior.count(problem.id)) continue;
        const evalcore::RunRecord& base = existing[base_label].at(problem.id);
        if (!base.error.empty() || base.samples.empty()) {
          evalcore::RunRecord failed = base;
          failed.mitigation = evalcore::Mitigation::Reflect;
          failed.samples.clear();
          failed.voted_final = std::nullopt;
          failed.preemptive_correct = std::nullopt;
          failed.final_correct = false;
          failed.error = "base run produced no output to reflect on";
          prior.emplace(problem.id, std::move(failed));
          ++item_failures;
          continue;
        }
        promptkit::PromptBundle bundle = promptkit::build_reflection_prompt(
            problem, base.samples.front().rationale, templates);
        bundle = promptkit::apply_system_preamble(std::move(bundle), config.system_preamble);
        modelgate::CompletionRequest req;
        req.model = config.model;
        req.messages = bundle.messages;
        req.params = bundle.params;
        req.problem_id = problem.id;
        todo.push_back(&problem);
        reflect_requests.push_back(std::move(req));
      }

      auto reflect_results = gateway.run_batch(reflect_requests, config.max_in_flight);
      for (std::size_t k = 0; k < todo.size(); ++k) {
        const corpus::Problem& problem = *todo[k];
        const evalcore::RunRecord& base = existing[base_label].at(problem.id);
        if (reflect_results[k].ok()) {
          prior.emplace(problem.id, evalcore::make_reflection_record(
                                        base, reflect_results[k].completion->samples.front(),
                                        problem.gold, problem.kind));
        } else {
          evalcore::RunRecord failed = base;
          failed.mitigation = evalcore::Mitigation::Reflect;
          failed.samples.clear();
          failed.voted_final = std::nullopt;
          failed.preemptive_correct = std::nullopt;
          failed.final_correct = false;
          failed.error = reflect_results[k].error_name + ": " + reflect_results[k].error_detail;
          prior.emplace(problem.id, std::move(failed));
          ++item_failures;
        }
      }

      std::vector<evalcore::RunRecord> group;
      for (const auto& problem : sampled.problems) {
        group.push_back(prior.at(problem.id));
      }
      record_count += group.size();
      util::write_file_atomic(records_dir / (reflect_label + ".jsonl"),
                              evalcore::serialize_records(group));
      manifest.record_files[reflect_label] = "records/" + reflect_label + ".jsonl";
    }
  }

  std::size_t expected =
      expected_record_count(sampled.problems.size(), config.setups, config.mitigations);
  if (record_count != expected) {
    throw std::logic_error("record count " + std::to_string(record_count) +
                           " does not match the expected " + std::to_string(expected));
  }

  manifest.record_count = record_count;
  manifest.item_failures = item_failures;
  manifest.finished_at = utc_now();
  util::write_file_atomic(config.output_dir / "provenance.json",
                          corpus::provenance_json(sampled.provenance));
  util::write_file_atomic(config.output_dir / "manifest.json", manifest.to_json());
  return RunOutcome{std::move(manifest), item_failures};
}

ProvisionOutcome provision_wrong_answers(const ExperimentConfig& config) {
  if (config.wrong_answers.empty()) throw ConfigError("wrong_answers path is required");
  corpus::ProblemSet sampled = load_and_sample(config);

  std::map<std::string, corpus::WrongAnswer> existing;
  if (auto prior = util::read_file_if_exists(config.wrong_answers)) {
    for (auto& w : corpus::load_wrong_answers(config.wrong_answers)) {
      existing[w.problem_id] = std::move(w);
    }
  }

  std::optional<modelgate::Gateway> gateway;
  auto gateway_ref = [&]() -> modelgate::Gateway& {
    if (!gateway) {
      fs::path cache_dir =
          config.cache_dir.empty() ? config.wrong_answers.parent_path() / "cache" : config.cache_dir;
      gateway.emplace(make_backend(config), config.model, cache_dir);
    }
    return *gateway;
  };

  ProvisionOutcome outcome;
  std::vector<corpus::WrongAnswer> entries;
  for (const auto& problem : sampled.problems) {
    auto it = existing.find(problem.id);
    if (it != existing.end() && it->second.verified &&
        !extract::exact_match(it->second.value, problem.gold, problem.kind)) {
      entries.push_back(it->second);
      ++outcome.kept;
      continue;
    }
    try {
      switch (problem.kind) {
        case corpus::AnswerKind::Choice:
          entries.push_back(corpus::wrong_answer_choice(
              problem, config.sample_seed ^ util::fnv1a64(problem.id)));
          break;
        case corpus::AnswerKind::Boolean:
          entries.push_back(corpus::wrong_answer_negate(problem));
          break;
        default:
          entries.push_back(corpus::wrong_answer_llm(problem, gateway_ref(),
                                                     config.wrong_answer_max_attempts));
          break;
      }
      ++outcome.provisioned;
    } catch (const Error& e) {
      outcome.failures.emplace_back(problem.id, std::string(e.name()) + ": " + e.what());
    }
  }

  fs::create_directories(config.wrong_answers.parent_path().empty()
                             ? fs::path(".")
                             : config.wrong_answers.parent_path());
  util::write_file_atomic(config.wrong_answers, corpus::serialize_wrong_answers(entries));
  return outcome;
}

}  // namespace preempt::runner
