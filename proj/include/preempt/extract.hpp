#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include "preempt/corpus.hpp"

namespace preempt::extract {

using corpus::AnswerKind;

// How the prompt was set up; drives where the preemptive answer is looked for.
enum class SetupKind { Normal, Upa, Mpa, Plugin };

std::string to_string(SetupKind kind);
SetupKind setup_kind_from_string(const std::string& s);

// Exact rational with a normalized sign and gcd-reduced terms.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Rational reduced(std::int64_t num, std::int64_t den);
  bool operator==(const Rational& other) const = default;
  std::string str() const;
};

// Parses the decimal number in `token` ("-125", "1,250", "4.8", "15%") as an
// exact rational; currency/percent/grouping characters are stripped.
std::optional<Rational> parse_rational(const std::string& token);

struct CanonicalAnswer {
  AnswerKind kind = AnswerKind::FreeText;
  std::variant<Rational, std::string, bool> value;

  bool operator==(const CanonicalAnswer& other) const = default;
  std::string value_str() const;
};

// One model output split into answer segments. `final` empty means no answer
// could be located (the NoAnswerFound condition); judging treats that as an
// abstention. For UPA runs `preemptive` is the segment after the first
// [Answer] tag, up to the first sentence terminator or line break.
struct SplitOutput {
  std::optional<std::string> preemptive;
  std::string rationale;
  std::optional<std::string> final;
};

enum class Verdict { Correct, Incorrect, Unparseable };

std::string to_string(Verdict verdict);

struct ReflectionVerdict {
  Verdict verdict = Verdict::Unparseable;
  std::optional<std::string> revised;
};

// Locates the preemptive and final answer segments of a model output.
//
// Final-answer ladder when no usable [Answer] tag exists:
//   1. segment after the last [Answer] tag (for UPA only if it is a second,
//      distinct tag; the first one is the preemptive answer),
//   2. the last "Therefore"/"So," clause containing a value of the kind,
//   3. the last value of the kind anywhere in the text.
SplitOutput split_output(const std::string& text, SetupKind setup, AnswerKind kind);

// Deterministic normalization per answer kind; nullopt when the raw text
// holds no value of that kind. Canonical forms are fixed points.
std::optional<CanonicalAnswer> normalize(const std::string& raw, AnswerKind kind);

// Exact match: equality of canonical forms. A side that fails to normalize is
// a non-match, never an error.
bool exact_match(const std::string& a, const std::string& b, AnswerKind kind);

// Scans for the first standalone CORRECT/INCORRECT verdict word (INCORRECT
// wins when the occurrences overlap). An Incorrect verdict harvests a revised
// answer from the remaining text via split_output.
ReflectionVerdict parse_reflection(const std::string& text, AnswerKind kind);

}  // namespace preempt::extract
