#include <doctest.h>

#include <set>

#include "preempt/corpus.hpp"
#include "preempt/modelgate.hpp"
#include "preempt/util.hpp"
#include "test_support.hpp"

using namespace preempt;
using test_support::TempDir;

namespace {

corpus::ProblemSet tiny_set(const TempDir& dir, int n, const std::string& tag = "gsm8k") {
  std::string jsonl;
  for (int i = 0; i < n; ++i) {
    char line[160];
    std::snprintf(line, sizeof(line),
                  R"({"id": "p%02d", "question": "What is %d plus %d?", "answer": "%d"})", i, i, i,
                  2 * i);
    jsonl += line;
    jsonl += '\n';
  }
  auto path = dir.write(tag + ".jsonl", jsonl);
  return corpus::load_dataset(path, corpus::Dataset::from_string(tag));
}

corpus::Problem choice_problem(std::string gold, int n_choices = 5) {
  corpus::Problem p;
  p.id = "c1";
  p.dataset = corpus::Dataset::from_string("mathqa");
  p.question = "pick one";
  p.kind = corpus::AnswerKind::Choice;
  for (int i = 0; i < n_choices; ++i) {
    p.choices.push_back({std::string(1, static_cast<char>('a' + i)), "option " + std::to_string(i)});
  }
  p.gold = std::move(gold);
  return p;
}

}  // namespace

TEST_CASE("load_dataset applies per-dataset kinds and validates records") {
  TempDir dir("preempt-corpus");

  SUBCASE("a GSM8K record loads as numeric") {
    auto path = dir.write("g.jsonl",
                          R"({"id": "g1", "question": "Every 2 years the swans double...", "answer": "480"})"
                          "\n");
    auto set = corpus::load_dataset(path, corpus::Dataset::from_string("gsm8k"));
    REQUIRE(set.problems.size() == 1);
    CHECK(set.problems[0].kind == corpus::AnswerKind::Numeric);
    CHECK(set.problems[0].gold == "480");
    CHECK(set.provenance.source_sha256.size() == 64);
  }
  SUBCASE("empty file") {
    auto path = dir.write("empty.jsonl", "");
    CHECK_THROWS_AS(corpus::load_dataset(path, corpus::Dataset::from_string("gsm8k")),
                    corpus::EmptyDataset);
  }
  SUBCASE("duplicate ids") {
    auto path = dir.write("dup.jsonl",
                          R"({"id": "a", "question": "q1", "answer": "1"})"
                          "\n"
                          R"({"id": "a", "question": "q2", "answer": "2"})"
                          "\n");
    CHECK_THROWS_AS(corpus::load_dataset(path, corpus::Dataset::from_string("gsm8k")),
                    corpus::DuplicateId);
  }
  SUBCASE("malformed JSON carries the line number") {
    auto path = dir.write("bad.jsonl",
                          R"({"id": "a", "question": "q", "answer": "1"})"
                          "\nnot json\n");
    try {
      corpus::load_dataset(path, corpus::Dataset::from_string("gsm8k"));
      FAIL("expected MalformedRecord");
    } catch (const corpus::MalformedRecord& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("choice kind demands choices and vice versa") {
    auto p1 = dir.write("c1.jsonl", R"({"id": "a", "question": "q", "answer": "b", "kind": "choice"})"
                                    "\n");
    CHECK_THROWS_AS(corpus::load_dataset(p1, corpus::Dataset::from_string("custom")),
                    corpus::MalformedRecord);
    auto p2 = dir.write(
        "c2.jsonl",
        R"({"id": "a", "question": "q", "answer": "1", "kind": "numeric", "choices": [{"label": "a", "text": "t"}]})"
        "\n");
    CHECK_THROWS_AS(corpus::load_dataset(p2, corpus::Dataset::from_string("custom")),
                    corpus::MalformedRecord);
  }
  SUBCASE("boolean gold must normalize") {
    auto path = dir.write("b.jsonl", R"({"id": "a", "question": "q", "answer": "maybe"})"
                                     "\n");
    CHECK_THROWS_AS(corpus::load_dataset(path, corpus::Dataset::from_string("strategyqa")),
                    corpus::MalformedRecord);
  }
  SUBCASE("per-record kind override wins over the dataset default") {
    auto path = dir.write("k.jsonl",
                          R"({"id": "a", "question": "q", "answer": "yes", "kind": "boolean"})"
                          "\n");
    auto set = corpus::load_dataset(path, corpus::Dataset::from_string("gsm8k"));
    CHECK(set.problems[0].kind == corpus::AnswerKind::Boolean);
  }
}

TEST_CASE("serialize_dataset is a byte-level fixed point under reload") {
  TempDir dir("preempt-roundtrip");
  auto path = dir.write(
      "mixed.jsonl",
      R"({"id": "n1", "question": "how many?", "answer": "7"})"
      "\n"
      R"({"id": "c1", "question": "which?", "answer": "b", "kind": "choice", "choices": [{"label": "A", "text": "x"}, {"label": "b", "text": "y"}]})"
      "\n"
      R"({"id": "b1", "question": "is it?", "answer": "No", "kind": "boolean"})"
      "\n");
  auto set = corpus::load_dataset(path, corpus::Dataset::from_string("gsm8k"));
  std::string canonical = corpus::serialize_dataset(set);
  auto canonical_path = dir.write("canonical.jsonl", canonical);
  auto reloaded = corpus::load_dataset(canonical_path, corpus::Dataset::from_string("gsm8k"));
  CHECK(corpus::serialize_dataset(reloaded) == canonical);
}

TEST_CASE("sample_testset is seeded, reproducible and idempotent") {
  TempDir dir("preempt-sample");
  auto set = tiny_set(dir, 10);

  SUBCASE("n >= size returns the whole set in order") {
    auto all = corpus::sample_testset(set, 500, 42);
    REQUIRE(all.problems.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) CHECK(all.problems[i].id == set.problems[i].id);
    CHECK(all.provenance.seed == 42);
  }
  SUBCASE("same seed gives identical id sequences, golden-pinned") {
    auto golden = nlohmann::json::parse(
        util::read_file(test_support::fixture_dir() / "golden" / "sampler_golden.json"));
    auto s7a = corpus::sample_testset(set, 3, 7);
    auto s7b = corpus::sample_testset(set, 3, 7);
    auto s8 = corpus::sample_testset(set, 3, 8);
    REQUIRE(s7a.problems.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(s7a.problems[i].id == s7b.problems[i].id);
      CHECK(s7a.problems[i].id == golden.at("seed7_n3").at(i).get<std::string>());
      CHECK(s8.problems[i].id == golden.at("seed8_n3").at(i).get<std::string>());
    }
    CHECK(util::sampled_indices(500, 5, 42) ==
          golden.at("indices_500_take5_seed42").get<std::vector<std::size_t>>());
  }
  SUBCASE("sampling an already-sampled set with the same arguments is identity") {
    auto once = corpus::sample_testset(set, 4, 99);
    auto twice = corpus::sample_testset(once, 4, 99);
    REQUIRE(once.problems.size() == twice.problems.size());
    for (std::size_t i = 0; i < once.problems.size(); ++i) {
      CHECK(once.problems[i].id == twice.problems[i].id);
    }
  }
  SUBCASE("provenance json records hash, seed and n") {
    auto sampled = corpus::sample_testset(set, 3, 7);
    auto j = nlohmann::json::parse(corpus::provenance_json(sampled.provenance));
    CHECK(j.at("seed") == 7);
    CHECK(j.at("n") == 3);
    CHECK(j.at("source_sha256") == set.provenance.source_sha256);
  }
  SUBCASE("n = 0 violates the precondition") {
    CHECK_THROWS_AS(corpus::sample_testset(set, 0, 1), std::invalid_argument);
  }
}

TEST_CASE("wrong_answer_choice excludes the gold label") {
  SUBCASE("never emits the gold over a dense seed sweep") {
    auto p = choice_problem("d");
    std::set<std::string> seen;
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
      auto w = corpus::wrong_answer_choice(p, seed);
      CHECK(w.value != "d");
      CHECK(w.verified);
      seen.insert(w.value);
    }
    CHECK(seen == std::set<std::string>{"a", "b", "c", "e"});
  }
  SUBCASE("gold given as full option text still excludes its label") {
    auto p = choice_problem("e ) 4.5 days");
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
      auto w = corpus::wrong_answer_choice(p, seed);
      CHECK(w.value != "e");
    }
  }
  SUBCASE("deterministic per seed") {
    auto p = choice_problem("b");
    CHECK(corpus::wrong_answer_choice(p, 7).value == corpus::wrong_answer_choice(p, 7).value);
  }
  SUBCASE("errors") {
    corpus::Problem numeric;
    numeric.id = "n";
    numeric.question = "q";
    numeric.gold = "1";
    numeric.kind = corpus::AnswerKind::Numeric;
    CHECK_THROWS_AS(corpus::wrong_answer_choice(numeric, 1), corpus::NotAChoiceProblem);
    CHECK_THROWS_AS(corpus::wrong_answer_choice(choice_problem("a", 1), 1),
                    corpus::SingleChoiceProblem);
  }
}

TEST_CASE("wrong_answer_negate emits the boolean complement") {
  corpus::Problem p;
  p.id = "s1";
  p.question = "q";
  p.kind = corpus::AnswerKind::Boolean;

  p.gold = "False";
  CHECK(corpus::wrong_answer_negate(p).value == "True");
  p.gold = "Yes";
  CHECK(corpus::wrong_answer_negate(p).value == "False");
  p.gold = "maybe";
  CHECK_THROWS_AS(corpus::wrong_answer_negate(p), corpus::NotBoolean);
  p.gold = "no";
  p.kind = corpus::AnswerKind::Numeric;
  CHECK_THROWS_AS(corpus::wrong_answer_negate(p), corpus::NotBoolean);
}

TEST_CASE("wrong_answer_llm verifies candidates against the gold") {
  corpus::Problem jim;
  jim.id = "jim";
  jim.dataset = corpus::Dataset::from_string("gsm8k");
  jim.question = "Jim starts with $80 in his investment portfolio...";
  jim.gold = "132";
  jim.kind = corpus::AnswerKind::Numeric;

  SUBCASE("accepts a scripted non-gold candidate") {
    auto backend = std::make_shared<modelgate::MockBackend>(modelgate::MockScript::parse(
        R"({"match": {"problem_id": "jim"}, "respond": "[Answer] 122"})", "s1"));
    modelgate::Gateway gate(backend, "mock-model");
    auto w = corpus::wrong_answer_llm(jim, gate);
    CHECK(w.value == "122");
    CHECK(w.verified);
    CHECK(w.strategy == corpus::WrongAnswerStrategy::LlmGenerated);
  }
  SUBCASE("a mock that always echoes the gold exhausts the retry budget") {
    auto backend = std::make_shared<modelgate::MockBackend>(modelgate::MockScript::parse(
        R"({"match": {"problem_id": "jim"}, "respond": "[Answer] 132"})", "s2"));
    modelgate::Gateway gate(backend, "mock-model");
    CHECK_THROWS_AS(corpus::wrong_answer_llm(jim, gate, 3), corpus::ExhaustedAttempts);
  }
  SUBCASE("retries move past a first gold-echoing answer via the request seed") {
    corpus::Problem p = jim;
    p.gold = "42";  // the first attempt runs at seed 42 and echoes the gold
    auto backend = std::make_shared<modelgate::MockBackend>(modelgate::MockScript::parse(
        R"({"match": {"contains": "Jim starts"}, "respond": "[Answer] {seed}"})", "s3"));
    modelgate::Gateway gate(backend, "mock-model");
    auto w = corpus::wrong_answer_llm(p, gate, 5);
    CHECK(w.value == "43");
    CHECK(w.verified);
  }
  SUBCASE("choice problems are rejected") {
    auto p = choice_problem("a");
    auto backend = std::make_shared<modelgate::MockBackend>(
        modelgate::MockScript::parse(R"({"respond": "[Answer] b"})", "s4"));
    modelgate::Gateway gate(backend, "mock-model");
    CHECK_THROWS_AS(corpus::wrong_answer_llm(p, gate), std::invalid_argument);
  }
}

TEST_CASE("wrong-answer sidecar round-trips") {
  TempDir dir("preempt-sidecar");
  std::vector<corpus::WrongAnswer> entries = {
      {"p1", "122", corpus::WrongAnswerStrategy::LlmGenerated, true},
      {"p2", "e", corpus::WrongAnswerStrategy::ChoiceResample, true},
      {"p3", "True", corpus::WrongAnswerStrategy::BooleanNegate, true},
  };
  auto path = dir.write("wrong.jsonl", corpus::serialize_wrong_answers(entries));
  auto loaded = corpus::load_wrong_answers(path);
  REQUIRE(loaded.size() == 3);
  CHECK(loaded[1].value == "e");
  CHECK(loaded[2].strategy == corpus::WrongAnswerStrategy::BooleanNegate);
  CHECK(corpus::serialize_wrong_answers(loaded) == corpus::serialize_wrong_answers(entries));
}
