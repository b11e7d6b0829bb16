#include "preempt/promptkit.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <mutex>

#include "preempt/util.hpp"

#ifndef PREEMPT_TEMPLATE_DIR
#define PREEMPT_TEMPLATE_DIR "assets/templates"
#endif

namespace preempt::promptkit {

namespace fs = std::filesystem;

namespace {

std::string replace_all(std::string text, std::string_view token, std::string_view value) {
  std::size_t pos = 0;
  while ((pos = text.find(token, pos)) != std::string::npos) {
    text.replace(pos, token.size(), value);
    pos += value.size();
  }
  return text;
}

std::string read_template(const fs::path& path) {
  std::string text = util::read_file(path);
  if (!text.empty() && text.back() == '\n') text.pop_back();
  if (text.empty()) throw TemplateError("template is empty: " + path.string());
  return text;
}

void require_placeholder(const std::string& text, std::string_view token, const fs::path& path) {
  if (text.find(token) == std::string::npos) {
    throw TemplateError("template " + path.string() + " lacks the " + std::string(token) +
                        " placeholder");
  }
}

std::size_t count_occurrences(const std::string& text, std::string_view token) {
  std::size_t count = 0;
  std::size_t pos = 0;
  while ((pos = text.find(token, pos)) != std::string::npos) {
    ++count;
    pos += token.size();
  }
  return count;
}

const TemplateLibrary& default_library() {
  static TemplateLibrary library = TemplateLibrary::load(default_template_dir());
  return library;
}

}  // namespace

std::string to_string(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

Role role_from_string(const std::string& s) {
  if (s == "system") return Role::System;
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  throw std::invalid_argument("unknown chat role: " + s);
}

GenerationParams GenerationParams::greedy() {
  GenerationParams p;
  p.temperature = 0.0;
  p.top_p = 1.0;
  p.seed = 42;
  p.n_samples = 1;
  return p;
}

GenerationParams GenerationParams::self_consistency(int n_samples) {
  GenerationParams p;
  p.temperature = 1.0;
  p.top_p = 1.0;
  p.seed = std::nullopt;
  p.n_samples = n_samples;
  return p;
}

std::string CotMethod::label() const {
  std::string out = base == CotBase::ZeroShot ? "zs" : "fs";
  if (sc) out += "+sc";
  return out;
}

AttackSpec AttackSpec::normal() { return AttackSpec{extract::SetupKind::Normal, std::nullopt, ""}; }
AttackSpec AttackSpec::upa() { return AttackSpec{extract::SetupKind::Upa, std::nullopt, ""}; }

AttackSpec AttackSpec::mpa(corpus::WrongAnswer wrong) {
  return AttackSpec{extract::SetupKind::Mpa, std::move(wrong), ""};
}

AttackSpec AttackSpec::plugin(std::string name, corpus::WrongAnswer wrong) {
  return AttackSpec{extract::SetupKind::Plugin, std::move(wrong), std::move(name)};
}

std::string AttackSpec::label() const {
  if (kind == extract::SetupKind::Plugin) return "plugin:" + plugin_name;
  return extract::to_string(kind);
}

TemplateLibrary TemplateLibrary::load(const fs::path& dir) {
  TemplateLibrary lib;
  auto take = [&](const char* name, std::string& slot) {
    fs::path path = dir / name;
    slot = read_template(path);
    lib.hashes_[name] = util::sha256_hex(slot);
  };
  take("zs_cot.txt", lib.zero_shot_);
  require_placeholder(lib.zero_shot_, "{problem}", dir / "zs_cot.txt");
  take("upa_instruction.txt", lib.upa_instruction_);
  take("mpa_claim.txt", lib.mpa_claim_);
  require_placeholder(lib.mpa_claim_, "{y_pa}", dir / "mpa_claim.txt");
  take("restatement.txt", lib.restatement_);
  take("reflection.txt", lib.reflection_);
  require_placeholder(lib.reflection_, "{x}", dir / "reflection.txt");
  require_placeholder(lib.reflection_, "{r}", dir / "reflection.txt");
  take("false_answer.txt", lib.false_answer_);
  require_placeholder(lib.false_answer_, "{x}", dir / "false_answer.txt");

  for (const auto& entry : fs::directory_iterator(dir)) {
    std::string name = entry.path().filename().string();
    if (!util::starts_with(name, "fs_cot_") || entry.path().extension() != ".txt") continue;
    std::string key = name.substr(7, name.size() - 7 - 4);
    std::string text = read_template(entry.path());
    require_placeholder(text, "{problem}", entry.path());
    if (count_occurrences(text, "[Example Problem ") != 3) {
      throw TemplateError("few-shot template must hold exactly 3 demonstrations: " +
                          entry.path().string());
    }
    lib.hashes_[name] = util::sha256_hex(text);
    lib.few_shot_[key] = std::move(text);
  }
  return lib;
}

const std::string& TemplateLibrary::few_shot(const corpus::Dataset& dataset) const {
  auto it = few_shot_.find(dataset.name);
  if (it == few_shot_.end()) throw MissingDemoTemplate(dataset.name);
  return it->second;
}

bool TemplateLibrary::has_few_shot(const corpus::Dataset& dataset) const {
  return few_shot_.count(dataset.name) > 0;
}

fs::path default_template_dir() {
  if (const char* env = std::getenv("PREEMPT_TEMPLATES")) {
    if (*env) return fs::path(env);
  }
  return fs::path(PREEMPT_TEMPLATE_DIR);
}

std::string render_problem_text(const corpus::Problem& problem) {
  if (problem.choices.empty() || problem.dataset.family == corpus::DatasetFamily::MathQA) {
    // MathQA questions carry their options inline.
    return problem.question;
  }
  std::string out = problem.question;
  for (const auto& choice : problem.choices) {
    out += '\n';
    out += static_cast<char>(std::toupper(static_cast<unsigned char>(choice.label[0])));
    out += ": ";
    out += choice.text;
  }
  return out;
}

PromptBundle build_cot_prompt(const corpus::Problem& problem, const CotMethod& method,
                              const TemplateLibrary& templates) {
  const std::string& tpl = method.base == CotBase::ZeroShot
                               ? templates.zero_shot()
                               : templates.few_shot(problem.dataset);
  PromptBundle bundle;
  bundle.messages.push_back({Role::User, replace_all(tpl, "{problem}", render_problem_text(problem))});
  bundle.params =
      method.sc ? GenerationParams::self_consistency(method.sc_samples) : GenerationParams::greedy();
  bundle.lineage.push_back(method.base == CotBase::ZeroShot ? "zs_cot" : "fs_cot");
  return bundle;
}

namespace {

std::optional<std::size_t> last_user_index(const PromptBundle& bundle, bool skip_attacks) {
  for (std::size_t i = bundle.messages.size(); i > 0; --i) {
    std::size_t idx = i - 1;
    if (bundle.messages[idx].role != Role::User) continue;
    if (skip_attacks &&
        std::find(bundle.attack_indices.begin(), bundle.attack_indices.end(), idx) !=
            bundle.attack_indices.end()) {
      continue;
    }
    return idx;
  }
  return std::nullopt;
}

}  // namespace

PromptBundle apply_system_preamble(PromptBundle bundle, const std::string& preamble) {
  if (preamble.empty()) return bundle;
  if (!bundle.messages.empty() && bundle.messages.front().role == Role::System) {
    throw std::invalid_argument("bundle already carries a system preamble");
  }
  bundle.messages.insert(bundle.messages.begin(), {Role::System, preamble});
  for (auto& idx : bundle.attack_indices) ++idx;
  bundle.lineage.push_back("system_preamble");
  return bundle;
}

PromptBundle apply_upa(PromptBundle bundle, const TemplateLibrary& templates) {
  auto idx = last_user_index(bundle, /*skip_attacks=*/false);
  if (!idx) throw std::invalid_argument("apply_upa: bundle has no user message");
  bundle.messages[*idx].content += '\n';
  bundle.messages[*idx].content += templates.upa_instruction();
  bundle.lineage.push_back("upa");
  return bundle;
}

PromptBundle apply_mpa(PromptBundle bundle, const corpus::WrongAnswer& wrong,
                       const TemplateLibrary& templates) {
  if (!wrong.verified) throw UnverifiedWrongAnswer(wrong.problem_id);
  bundle.attack_indices.push_back(bundle.messages.size());
  bundle.messages.push_back({Role::User, replace_all(templates.mpa_claim(), "{y_pa}", wrong.value)});
  bundle.lineage.push_back("mpa");
  return bundle;
}

PromptBundle apply_restatement(PromptBundle bundle, const TemplateLibrary& templates) {
  auto idx = last_user_index(bundle, /*skip_attacks=*/true);
  if (!idx) throw std::invalid_argument("apply_restatement: bundle has no user message");
  bundle.messages[*idx].content += '\n';
  bundle.messages[*idx].content += templates.restatement();
  bundle.lineage.push_back("restate");
  return bundle;
}

PromptBundle build_reflection_prompt(const corpus::Problem& problem, const std::string& rationale,
                                     const TemplateLibrary& templates) {
  if (rationale.empty()) throw EmptyRationale();
  std::string content = replace_all(templates.reflection(), "{x}", render_problem_text(problem));
  content = replace_all(content, "{r}", rationale);
  PromptBundle bundle;
  bundle.messages.push_back({Role::User, std::move(content)});
  bundle.params = GenerationParams::greedy();
  bundle.lineage.push_back("reflect");
  return bundle;
}

PromptBundle build_false_answer_prompt(const corpus::Problem& problem,
                                       const TemplateLibrary& templates) {
  PromptBundle bundle;
  bundle.messages.push_back(
      {Role::User, replace_all(templates.false_answer(), "{x}", render_problem_text(problem))});
  bundle.params = GenerationParams::greedy();
  bundle.lineage.push_back("false_answer");
  return bundle;
}

PromptBundle build_false_answer_prompt(const corpus::Problem& problem) {
  return build_false_answer_prompt(problem, default_library());
}

void PluginRegistry::register_plugin(const std::string& name, PluginTransform transform) {
  if (plugins_.count(name)) throw DuplicatePluginName(name);
  plugins_[name] = std::move(transform);
}

bool PluginRegistry::has(const std::string& name) const { return plugins_.count(name) > 0; }

PromptBundle PluginRegistry::apply(const std::string& name, PromptBundle bundle,
                                   const corpus::WrongAnswer& wrong) const {
  auto it = plugins_.find(name);
  if (it == plugins_.end()) throw UnknownPlugin(name);
  if (!wrong.verified) throw UnverifiedWrongAnswer(wrong.problem_id);
  const std::vector<ChatMessage> original = bundle.messages;
  PromptBundle rewritten = it->second(std::move(bundle), wrong);
  if (rewritten.messages.size() < original.size() ||
      !std::equal(original.begin(), original.end(), rewritten.messages.begin())) {
    throw PluginContractViolation(name);
  }
  for (std::size_t i = original.size(); i < rewritten.messages.size(); ++i) {
    if (std::find(rewritten.attack_indices.begin(), rewritten.attack_indices.end(), i) ==
        rewritten.attack_indices.end()) {
      rewritten.attack_indices.push_back(i);
    }
  }
  rewritten.lineage.push_back("plugin:" + name);
  return rewritten;
}

PluginRegistry& PluginRegistry::global() {
  static PluginRegistry registry;
  return registry;
}

void register_attack_plugin(const std::string& name, PluginTransform transform) {
  static std::mutex mutex;
  std::lock_guard<std::mutex> lock(mutex);
  PluginRegistry::global().register_plugin(name, std::move(transform));
}

}  // namespace preempt::promptkit
