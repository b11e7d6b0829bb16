#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "preempt/errors.hpp"

namespace preempt::modelgate {
class Gateway;
}

namespace preempt::corpus {

// Which normalizer applies to a problem's answers.
enum class AnswerKind { Numeric, Choice, Boolean, FreeText, Expression };

std::string to_string(AnswerKind kind);
AnswerKind answer_kind_from_string(const std::string& s);

enum class DatasetFamily { GSM8K, MathQA, MATH, HotpotQA, CSQA, StrategyQA, Custom };

// Dataset tag. Built-in families carry their canonical name; Custom keeps the
// user-supplied one, which also selects the few-shot demo asset.
struct Dataset {
  DatasetFamily family = DatasetFamily::Custom;
  std::string name;

  static Dataset from_string(const std::string& tag);
  bool operator==(const Dataset& other) const = default;
};

// Default answer kind per dataset family; Custom defaults to FreeText.
AnswerKind default_kind(const Dataset& dataset);

struct Choice {
  std::string label;  // single letter a-e, lowercase
  std::string text;
};

struct Problem {
  std::string id;
  Dataset dataset;
  std::string question;
  std::vector<Choice> choices;
  std::string gold;
  AnswerKind kind = AnswerKind::FreeText;
};

struct Provenance {
  std::string source_path;
  std::string source_sha256;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n;
};

struct ProblemSet {
  Dataset dataset;
  std::vector<Problem> problems;
  Provenance provenance;
};

enum class WrongAnswerStrategy { ChoiceResample, BooleanNegate, LlmGenerated };

std::string to_string(WrongAnswerStrategy s);
WrongAnswerStrategy wrong_strategy_from_string(const std::string& s);

// A fabricated incorrect answer for one problem. `verified` records that the
// value was checked to fail exact match against the gold; only verified
// entries may feed an attacked run.
struct WrongAnswer {
  std::string problem_id;
  std::string value;
  WrongAnswerStrategy strategy = WrongAnswerStrategy::LlmGenerated;
  bool verified = false;
};

struct MalformedRecord : Error {
  MalformedRecord(std::size_t line, const std::string& reason)
      : Error("MalformedRecord", "line " + std::to_string(line) + ": " + reason) {}
};
struct DuplicateId : Error {
  explicit DuplicateId(const std::string& id) : Error("DuplicateId", "duplicate problem id: " + id) {}
};
struct EmptyDataset : Error {
  EmptyDataset() : Error("EmptyDataset", "dataset file contains no records") {}
};
struct NotAChoiceProblem : Error {
  explicit NotAChoiceProblem(const std::string& id)
      : Error("NotAChoiceProblem", "problem " + id + " is not a choice problem") {}
};
struct SingleChoiceProblem : Error {
  explicit SingleChoiceProblem(const std::string& id)
      : Error("SingleChoiceProblem", "problem " + id + " has fewer than two choices") {}
};
struct NotBoolean : Error {
  explicit NotBoolean(const std::string& detail) : Error("NotBoolean", detail) {}
};
struct ExhaustedAttempts : Error {
  ExhaustedAttempts(const std::string& id, const std::string& last_candidate)
      : Error("ExhaustedAttempts",
              "no verified wrong answer for " + id + " (last candidate: " + last_candidate + ")"),
        last_candidate(last_candidate) {}
  std::string last_candidate;
};

// Loads a JSONL dataset. One object per line:
//   {"id": str, "question": str, "answer": str,
//    "choices": [{"label": "a".."e", "text": str}]?, "kind": str?}
// The answer kind defaults per dataset tag and may be overridden per record.
ProblemSet load_dataset(const std::filesystem::path& path, const Dataset& dataset);

// Canonical JSONL serialization of a ProblemSet; load(serialize(x)) is a
// byte-level fixed point.
std::string serialize_dataset(const ProblemSet& set);

std::string provenance_json(const Provenance& p);

// Draws n problems without replacement using a mt19937_64-driven partial
// Fisher-Yates shuffle (see util::sampled_indices). If n >= |set| the set is
// returned unchanged apart from provenance.
ProblemSet sample_testset(const ProblemSet& set, std::size_t n, std::uint64_t seed);

// Uniformly picks a choice label different from the gold label.
WrongAnswer wrong_answer_choice(const Problem& problem, std::uint64_t seed);

// Negates a boolean gold answer; result rendered as "True"/"False".
WrongAnswer wrong_answer_negate(const Problem& problem);

// Asks the model for a false answer and keeps retrying (bumping the request
// seed each attempt) until the candidate fails exact match against the gold.
WrongAnswer wrong_answer_llm(const Problem& problem, modelgate::Gateway& gate, int max_attempts = 5);

// Sidecar JSONL: {"id": str, "value": str, "strategy": str, "verified": true}
std::vector<WrongAnswer> load_wrong_answers(const std::filesystem::path& path);
std::string serialize_wrong_answers(const std::vector<WrongAnswer>& entries);

}  // namespace preempt::corpus
