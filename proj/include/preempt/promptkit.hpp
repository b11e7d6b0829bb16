#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "preempt/corpus.hpp"
#include "preempt/errors.hpp"
#include "preempt/extract.hpp"

namespace preempt::promptkit {

enum class Role { System, User, Assistant };

std::string to_string(Role role);
Role role_from_string(const std::string& s);

struct ChatMessage {
  Role role = Role::User;
  std::string content;

  bool operator==(const ChatMessage& other) const = default;
};

struct GenerationParams {
  double temperature = 0.0;
  double top_p = 1.0;
  std::optional<std::int64_t> seed;
  int n_samples = 1;

  // t=0, seed=42, single sample.
  static GenerationParams greedy();
  // Sampling profile for self-consistency: t=1, top-p=1, n samples.
  static GenerationParams self_consistency(int n_samples = 10);

  bool operator==(const GenerationParams& other) const = default;
};

// A chat prompt plus its generation parameters. `lineage` lists the applied
// transforms in order; `attack_indices` marks messages added by an attack so
// later transforms can tell them from the user's own prompt.
struct PromptBundle {
  std::vector<ChatMessage> messages;
  GenerationParams params;
  std::vector<std::string> lineage;
  std::vector<std::size_t> attack_indices;
};

enum class CotBase { ZeroShot, FewShot };

struct CotMethod {
  CotBase base = CotBase::ZeroShot;
  bool sc = false;
  int sc_samples = 10;

  std::string label() const;  // "zs", "fs", "zs+sc", "fs+sc"
};

struct AttackSpec {
  extract::SetupKind kind = extract::SetupKind::Normal;
  std::optional<corpus::WrongAnswer> wrong;
  std::string plugin_name;

  static AttackSpec normal();
  static AttackSpec upa();
  static AttackSpec mpa(corpus::WrongAnswer wrong);
  static AttackSpec plugin(std::string name, corpus::WrongAnswer wrong);

  // "normal", "upa", "mpa", "plugin:<name>"
  std::string label() const;
};

struct MissingDemoTemplate : Error {
  explicit MissingDemoTemplate(const std::string& dataset)
      : Error("MissingDemoTemplate", "no few-shot demo template for dataset: " + dataset) {}
};
struct UnverifiedWrongAnswer : Error {
  explicit UnverifiedWrongAnswer(const std::string& id)
      : Error("UnverifiedWrongAnswer", "wrong answer for " + id + " is not verified") {}
};
struct EmptyRationale : Error {
  EmptyRationale() : Error("EmptyRationale", "reflection needs the prior model output") {}
};
struct DuplicatePluginName : Error {
  explicit DuplicatePluginName(const std::string& name)
      : Error("DuplicatePluginName", "attack plugin already registered: " + name) {}
};
struct UnknownPlugin : Error {
  explicit UnknownPlugin(const std::string& name)
      : Error("UnknownPlugin", "no attack plugin registered under: " + name) {}
};
struct PluginContractViolation : Error {
  explicit PluginContractViolation(const std::string& name)
      : Error("PluginContractViolation",
              "plugin " + name + " did not preserve the original messages as a prefix") {}
};
struct TemplateError : Error {
  explicit TemplateError(const std::string& detail) : Error("TemplateError", detail) {}
};

// The prompt texts shipped under assets/templates. Files are UTF-8 with
// literal {problem} / {x} / {r} / {y_pa} placeholders; a single trailing
// newline is ignored. Few-shot demo sets must contain exactly three
// demonstrations.
class TemplateLibrary {
 public:
  static TemplateLibrary load(const std::filesystem::path& dir);

  const std::string& zero_shot() const { return zero_shot_; }
  const std::string& few_shot(const corpus::Dataset& dataset) const;
  bool has_few_shot(const corpus::Dataset& dataset) const;
  const std::string& upa_instruction() const { return upa_instruction_; }
  const std::string& mpa_claim() const { return mpa_claim_; }
  const std::string& restatement() const { return restatement_; }
  const std::string& reflection() const { return reflection_; }
  const std::string& false_answer() const { return false_answer_; }

  // name -> sha256 of the loaded text, for run manifests.
  const std::map<std::string, std::string>& hashes() const { return hashes_; }

 private:
  std::string zero_shot_;
  std::map<std::string, std::string> few_shot_;
  std::string upa_instruction_;
  std::string mpa_claim_;
  std::string restatement_;
  std::string reflection_;
  std::string false_answer_;
  std::map<std::string, std::string> hashes_;
};

// Directory the build was configured with; the CLI allows overriding.
std::filesystem::path default_template_dir();

// Question text as substituted for {problem}: choice problems get their
// options appended as "A: ..." lines unless the dataset embeds them inline in
// the question (MathQA convention).
std::string render_problem_text(const corpus::Problem& problem);

PromptBundle build_cot_prompt(const corpus::Problem& problem, const CotMethod& method,
                              const TemplateLibrary& templates);

// Prepends an optional system message. The shipped experiment formats use
// user roles only; this is an escape hatch for non-standard setups.
PromptBundle apply_system_preamble(PromptBundle bundle, const std::string& preamble);

// Appends the answer-first instruction to the final user message.
PromptBundle apply_upa(PromptBundle bundle, const TemplateLibrary& templates);

// Injects the attacker's claim as one extra user message.
PromptBundle apply_mpa(PromptBundle bundle, const corpus::WrongAnswer& wrong,
                       const TemplateLibrary& templates);

// Appends the restatement instruction to the last user message that is not an
// attack injection. Compose before the attack transform so the instruction
// lands inside the user's own prompt.
PromptBundle apply_restatement(PromptBundle bundle, const TemplateLibrary& templates);

// Fresh single-message conversation asking for a CORRECT/INCORRECT verdict on
// a prior output.
PromptBundle build_reflection_prompt(const corpus::Problem& problem, const std::string& rationale,
                                     const TemplateLibrary& templates);

PromptBundle build_false_answer_prompt(const corpus::Problem& problem);
PromptBundle build_false_answer_prompt(const corpus::Problem& problem,
                                       const TemplateLibrary& templates);

using PluginTransform =
    std::function<PromptBundle(PromptBundle, const corpus::WrongAnswer&)>;

class PluginRegistry {
 public:
  void register_plugin(const std::string& name, PluginTransform transform);
  bool has(const std::string& name) const;

  // Runs the named rewriter and enforces that the original messages survive
  // as a prefix of the result.
  PromptBundle apply(const std::string& name, PromptBundle bundle,
                     const corpus::WrongAnswer& wrong) const;

  static PluginRegistry& global();

 private:
  std::map<std::string, PluginTransform> plugins_;
};

void register_attack_plugin(const std::string& name, PluginTransform transform);

}  // namespace preempt::promptkit
