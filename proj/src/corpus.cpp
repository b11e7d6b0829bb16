#include "preempt/corpus.hpp"

#include <nlohmann/json.hpp>

#include <random>
#include <set>
#include <sstream>

#include "preempt/extract.hpp"
#include "preempt/modelgate.hpp"
#include "preempt/promptkit.hpp"
#include "preempt/util.hpp"

namespace preempt::corpus {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string to_string(AnswerKind kind) {
  switch (kind) {
    case AnswerKind::Numeric: return "numeric";
    case AnswerKind::Choice: return "choice";
    case AnswerKind::Boolean: return "boolean";
    case AnswerKind::FreeText: return "freetext";
    case AnswerKind::Expression: return "expression";
  }
  return "freetext";
}

AnswerKind answer_kind_from_string(const std::string& s) {
  std::string k = util::to_lower_ascii(s);
  if (k == "numeric") return AnswerKind::Numeric;
  if (k == "choice") return AnswerKind::Choice;
  if (k == "boolean") return AnswerKind::Boolean;
  if (k == "freetext") return AnswerKind::FreeText;
  if (k == "expression") return AnswerKind::Expression;
  throw std::invalid_argument("unknown answer kind: " + s);
}

Dataset Dataset::from_string(const std::string& tag) {
  std::string t = util::to_lower_ascii(tag);
  if (t == "gsm8k") return {DatasetFamily::GSM8K, "gsm8k"};
  if (t == "mathqa") return {DatasetFamily::MathQA, "mathqa"};
  if (t == "math") return {DatasetFamily::MATH, "math"};
  if (t == "hotpotqa") return {DatasetFamily::HotpotQA, "hotpotqa"};
  if (t == "csqa" || t == "commonsenseqa") return {DatasetFamily::CSQA, "csqa"};
  if (t == "strategyqa") return {DatasetFamily::StrategyQA, "strategyqa"};
  return {DatasetFamily::Custom, t};
}

AnswerKind default_kind(const Dataset& dataset) {
  switch (dataset.family) {
    case DatasetFamily::GSM8K: return AnswerKind::Numeric;
    case DatasetFamily::MathQA: return AnswerKind::Choice;
    case DatasetFamily::MATH: return AnswerKind::Expression;
    case DatasetFamily::HotpotQA: return AnswerKind::FreeText;
    case DatasetFamily::CSQA: return AnswerKind::Choice;
    case DatasetFamily::StrategyQA: return AnswerKind::Boolean;
    case DatasetFamily::Custom: return AnswerKind::FreeText;
  }
  return AnswerKind::FreeText;
}

std::string to_string(WrongAnswerStrategy s) {
  switch (s) {
    case WrongAnswerStrategy::ChoiceResample: return "choice_resample";
    case WrongAnswerStrategy::BooleanNegate: return "boolean_negate";
    case WrongAnswerStrategy::LlmGenerated: return "llm_generated";
  }
  return "llm_generated";
}

WrongAnswerStrategy wrong_strategy_from_string(const std::string& s) {
  if (s == "choice_resample") return WrongAnswerStrategy::ChoiceResample;
  if (s == "boolean_negate") return WrongAnswerStrategy::BooleanNegate;
  if (s == "llm_generated") return WrongAnswerStrategy::LlmGenerated;
  throw std::invalid_argument("unknown wrong-answer strategy: " + s);
}

namespace {

Problem parse_problem_record(const json& record, const Dataset& dataset, std::size_t line_no) {
  if (!record.is_object()) throw MalformedRecord(line_no, "record is not a JSON object");
  Problem p;
  p.dataset = dataset;
  try {
    p.id = record.at("id").get<std::string>();
    p.question = record.at("question").get<std::string>();
    p.gold = record.at("answer").get<std::string>();
  } catch (const json::exception& ex) {
    throw MalformedRecord(line_no, ex.what());
  }
  if (p.id.empty()) throw MalformedRecord(line_no, "empty id");
  if (p.question.empty()) throw MalformedRecord(line_no, "empty question");

  if (record.contains("choices")) {
    const auto& choices = record.at("choices");
    if (!choices.is_array()) throw MalformedRecord(line_no, "choices must be an array");
    std::set<std::string> seen;
    for (const auto& entry : choices) {
      Choice c;
      try {
        c.label = util::to_lower_ascii(entry.at("label").get<std::string>());
        c.text = entry.at("text").get<std::string>();
      } catch (const json::exception& ex) {
        throw MalformedRecord(line_no, ex.what());
      }
      if (c.label.size() != 1 || c.label[0] < 'a' || c.label[0] > 'e') {
        throw MalformedRecord(line_no, "choice label must be a single letter a-e: " + c.label);
      }
      if (!seen.insert(c.label).second) {
        throw MalformedRecord(line_no, "duplicate choice label: " + c.label);
      }
      p.choices.push_back(std::move(c));
    }
  }

  p.kind = default_kind(dataset);
  if (record.contains("kind")) {
    try {
      p.kind = answer_kind_from_string(record.at("kind").get<std::string>());
    } catch (const std::exception& ex) {
      throw MalformedRecord(line_no, ex.what());
    }
  }

  const bool has_choices = !p.choices.empty();
  if ((p.kind == AnswerKind::Choice) != has_choices) {
    throw MalformedRecord(line_no, has_choices ? "choices present but kind is not choice"
                                               : "kind is choice but no choices given");
  }
  if (p.kind == AnswerKind::Boolean && !extract::normalize(p.gold, AnswerKind::Boolean)) {
    throw MalformedRecord(line_no, "boolean gold does not normalize to true/false: " + p.gold);
  }
  return p;
}

}  // namespace

ProblemSet load_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::string content = util::read_file(path);
  ProblemSet set;
  set.dataset = dataset;
  set.provenance.source_path = path.string();
  set.provenance.source_sha256 = util::sha256_hex(content);

  std::set<std::string> ids;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& ex) {
      throw MalformedRecord(line_no, ex.what());
    }
    Problem p = parse_problem_record(record, dataset, line_no);
    if (!ids.insert(p.id).second) throw DuplicateId(p.id);
    set.problems.push_back(std::move(p));
  }
  if (set.problems.empty()) throw EmptyDataset();
  return set;
}

std::string serialize_dataset(const ProblemSet& set) {
  std::string out;
  for (const auto& p : set.problems) {
    ordered_json record;
    record["id"] = p.id;
    record["question"] = p.question;
    record["answer"] = p.gold;
    if (!p.choices.empty()) {
      ordered_json choices = ordered_json::array();
      for (const auto& c : p.choices) {
        choices.push_back({{"label", c.label}, {"text", c.text}});
      }
      record["choices"] = std::move(choices);
    }
    record["kind"] = to_string(p.kind);
    out += record.dump();
    out += '\n';
  }
  return out;
}

std::string provenance_json(const Provenance& p) {
  ordered_json out;
  out["source_sha256"] = p.source_sha256;
  if (p.seed) out["seed"] = *p.seed;
  if (p.n) out["n"] = *p.n;
  return out.dump();
}

ProblemSet sample_testset(const ProblemSet& set, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_testset: n must be >= 1");
  ProblemSet out;
  out.dataset = set.dataset;
  out.provenance = set.provenance;
  out.provenance.seed = seed;
  out.provenance.n = n;
  if (n >= set.problems.size()) {
    out.problems = set.problems;
    return out;
  }
  for (std::size_t idx : util::sampled_indices(set.problems.size(), n, seed)) {
    out.problems.push_back(set.problems[idx]);
  }
  return out;
}

WrongAnswer wrong_answer_choice(const Problem& problem, std::uint64_t seed) {
  if (problem.kind != AnswerKind::Choice || problem.choices.empty()) {
    throw NotAChoiceProblem(problem.id);
  }
  if (problem.choices.size() < 2) throw SingleChoiceProblem(problem.id);

  std::optional<std::string> gold_label;
  if (auto canonical = extract::normalize(problem.gold, AnswerKind::Choice)) {
    gold_label = canonical->value_str();
  }
  std::vector<std::string> pool;
  for (const auto& c : problem.choices) {
    if (!gold_label || c.label != *gold_label) pool.push_back(c.label);
  }
  if (pool.empty()) throw SingleChoiceProblem(problem.id);

  std::mt19937_64 gen(seed);
  const std::string& picked = pool[util::uniform_below(gen, pool.size())];
  return WrongAnswer{problem.id, picked, WrongAnswerStrategy::ChoiceResample, true};
}

WrongAnswer wrong_answer_negate(const Problem& problem) {
  if (problem.kind != AnswerKind::Boolean) {
    throw NotBoolean("problem " + problem.id + " is not boolean");
  }
  auto canonical = extract::normalize(problem.gold, AnswerKind::Boolean);
  if (!canonical) {
    throw NotBoolean("gold answer of " + problem.id + " does not normalize: " + problem.gold);
  }
  bool gold_value = std::get<bool>(canonical->value);
  return WrongAnswer{problem.id, gold_value ? "False" : "True", WrongAnswerStrategy::BooleanNegate,
                     true};
}

WrongAnswer wrong_answer_llm(const Problem& problem, modelgate::Gateway& gate, int max_attempts) {
  if (problem.kind == AnswerKind::Choice || problem.kind == AnswerKind::Boolean) {
    throw std::invalid_argument("wrong_answer_llm applies to general questions only: " +
                                problem.id);
  }
  if (max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");

  std::string last_candidate;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    promptkit::PromptBundle bundle = promptkit::build_false_answer_prompt(problem);
    // Distinct seeds keep retries from replaying the cached first answer.
    bundle.params.seed = bundle.params.seed.value_or(42) + attempt;
    modelgate::CompletionRequest req;
    req.model = gate.model();
    req.messages = bundle.messages;
    req.params = bundle.params;
    req.problem_id = problem.id;
    modelgate::Completion completion = gate.complete(req);
    if (completion.samples.empty()) continue;

    auto split = extract::split_output(completion.samples.front(), extract::SetupKind::Normal,
                                       problem.kind);
    if (!split.final) continue;
    last_candidate = *split.final;
    if (!extract::exact_match(last_candidate, problem.gold, problem.kind)) {
      return WrongAnswer{problem.id, last_candidate, WrongAnswerStrategy::LlmGenerated, true};
    }
  }
  throw ExhaustedAttempts(problem.id, last_candidate);
}

std::vector<WrongAnswer> load_wrong_answers(const std::filesystem::path& path) {
  std::string content = util::read_file(path);
  std::vector<WrongAnswer> out;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    try {
      json record = json::parse(line);
      WrongAnswer w;
      w.problem_id = record.at("id").get<std::string>();
      w.value = record.at("value").get<std::string>();
      w.strategy = wrong_strategy_from_string(record.at("strategy").get<std::string>());
      w.verified = record.at("verified").get<bool>();
      out.push_back(std::move(w));
    } catch (const std::exception& ex) {
      throw MalformedRecord(line_no, ex.what());
    }
  }
  return out;
}

std::string serialize_wrong_answers(const std::vector<WrongAnswer>& entries) {
  std::string out;
  for (const auto& w : entries) {
    ordered_json record;
    record["id"] = w.problem_id;
    record["value"] = w.value;
    record["strategy"] = to_string(w.strategy);
    record["verified"] = w.verified;
    out += record.dump();
    out += '\n';
  }
  return out;
}

}  // namespace preempt::corpus
