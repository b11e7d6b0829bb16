#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "preempt/errors.hpp"
#include "preempt/extract.hpp"
#include "preempt/promptkit.hpp"

namespace preempt::evalcore {

using extract::CanonicalAnswer;
using extract::ReflectionVerdict;
using extract::SetupKind;
using extract::SplitOutput;

enum class Mitigation { None, Restate, Reflect };

std::string to_string(Mitigation m);
Mitigation mitigation_from_string(const std::string& s);

// One evaluated (problem, method, setup, mitigation) cell.
struct RunRecord {
  std::string problem_id;
  std::string dataset;
  promptkit::CotMethod method;
  SetupKind setup = SetupKind::Normal;
  std::string setup_label;  // "normal", "upa", "mpa", "plugin:<name>"
  std::optional<std::string> wrong_value;
  Mitigation mitigation = Mitigation::None;
  std::vector<SplitOutput> samples;
  std::optional<CanonicalAnswer> voted_final;
  std::optional<bool> preemptive_correct;
  bool final_correct = false;
  std::optional<ReflectionVerdict> reflection;
  std::string error;  // non-empty when the gateway failed for this item
};

struct UpaBuckets {
  std::size_t pre_correct_final_correct = 0;
  std::size_t pre_correct_final_wrong = 0;
  std::size_t pre_wrong_final_correct = 0;
  std::size_t pre_wrong_final_wrong = 0;
  std::size_t no_preemptive = 0;  // reported separately from the 4 cells

  std::size_t total() const {
    return pre_correct_final_correct + pre_correct_final_wrong + pre_wrong_final_correct +
           pre_wrong_final_wrong + no_preemptive;
  }
};

struct MpaBuckets {
  std::size_t final_correct = 0;
  std::size_t final_wrong = 0;

  std::size_t total() const { return final_correct + final_wrong; }
};

struct ReflectionCounts {
  std::size_t fr = 0;  // error not recognized
  std::size_t fc = 0;  // recognized but not corrected
  std::size_t sc = 0;  // recognized and corrected
  std::size_t ineligible = 0;
};

// Aggregate over one (normal, attacked) run pair. Percentages are 0..100.
// asr uses correct-under-normal as its denominator; flips_out and flips_in
// are always carried alongside so either ASR reading can be recomputed.
struct MetricsReport {
  std::size_t n = 0;
  double acc_normal = 0.0;
  double acc_attack = 0.0;
  double asr = 0.0;
  std::size_t correct_normal = 0;
  std::size_t correct_attack = 0;
  std::size_t flips_out = 0;  // correct -> incorrect
  std::size_t flips_in = 0;   // incorrect -> correct
  std::optional<UpaBuckets> upa_buckets;
  std::optional<MpaBuckets> mpa_buckets;
  std::optional<ReflectionCounts> reflection_counts;
};

enum class ReflectionCategory { FR, FC, SC, Ineligible };

std::string to_string(ReflectionCategory c);

struct AllAbstained : Error {
  AllAbstained() : Error("AllAbstained", "no sample produced an extractable answer") {}
};
struct MismatchedIds : Error {
  explicit MismatchedIds(const std::string& detail) : Error("MismatchedIds", detail) {}
};
struct WrongSetup : Error {
  explicit WrongSetup(const std::string& detail) : Error("WrongSetup", detail) {}
};
struct MissingReflection : Error {
  explicit MissingReflection(const std::string& id)
      : Error("MissingReflection", "record " + id + " carries no reflection verdict") {}
};

// Answer of maximal multiplicity; ties go to the candidate appearing first in
// sample order.
CanonicalAnswer majority_vote(const std::vector<CanonicalAnswer>& finals);

// Fills voted_final / final_correct / preemptive_correct on a record whose
// samples are already extracted. Extraction failures reduce the electorate;
// a record with no extractable answer is judged incorrect.
RunRecord judge(RunRecord record, const std::string& gold, extract::AnswerKind kind);

// Pairs records by problem id (both sides must hold exactly the same id set).
MetricsReport compute_metrics(const std::vector<RunRecord>& normal,
                              const std::vector<RunRecord>& attacked);

UpaBuckets breakdown_upa(const std::vector<RunRecord>& attacked);
MpaBuckets breakdown_mpa(const std::vector<RunRecord>& attacked);

// Classifies one reflected pair. Only pairs that were correct under the
// normal setup and wrong under attack are eligible; `revised_correct` is the
// exact-match result of the revised answer when one was produced.
ReflectionCategory categorize_reflection(const RunRecord& normal, const RunRecord& attacked,
                                         const ReflectionVerdict& verdict,
                                         std::optional<bool> revised_correct);

// Builds the reflect-mitigation record for one attacked base record from the
// reflection output. An INCORRECT verdict replaces the answer with the
// revised one (incorrect when none was given); CORRECT and unparseable
// verdicts keep the base answer.
RunRecord make_reflection_record(const RunRecord& base, const std::string& reflection_text,
                                 const std::string& gold, extract::AnswerKind kind);

// Categorizes every reflected triple; fr + fc + sc equals the eligible-pair
// count and ineligible covers the rest.
ReflectionCounts count_reflections(const std::vector<RunRecord>& normal,
                                   const std::vector<RunRecord>& attacked_base,
                                   const std::vector<RunRecord>& reflected);

// JSONL persistence (schema 1).
std::string record_to_jsonl_line(const RunRecord& record);
RunRecord record_from_jsonl_line(const std::string& line);
std::string serialize_records(const std::vector<RunRecord>& records);
std::vector<RunRecord> parse_records(const std::string& jsonl);

std::string metrics_report_json(const MetricsReport& report);

}  // namespace preempt::evalcore
