#include "preempt/extract.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <stdexcept>

#include "preempt/util.hpp"

namespace preempt::extract {

namespace {

constexpr std::string_view kAnswerTag = "[Answer]";

bool is_letter(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// A sentence ends at '\n' or at '.'/'!'/'?' followed by whitespace or the end
// of the text. Decimal points ("4.8") never satisfy this.
std::size_t sentence_end(const std::string& text, std::size_t from) {
  for (std::size_t i = from; i < text.size(); ++i) {
    char c = text[i];
    if (c == '\n') return i;
    if ((c == '.' || c == '!' || c == '?') &&
        (i + 1 == text.size() || is_space(text[i + 1]))) {
      return i + 1;  // keep the terminator in the segment
    }
  }
  return text.size();
}

std::vector<std::size_t> find_tags(const std::string& text) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while ((pos = text.find(kAnswerTag, pos)) != std::string::npos) {
    out.push_back(pos);
    pos += kAnswerTag.size();
  }
  return out;
}

// ---- numeric tokens ------------------------------------------------------

struct NumericToken {
  std::string text;
  Rational value;
};

std::optional<Rational> parse_decimal(const std::string& tok) {
  bool negative = false;
  std::size_t i = 0;
  if (i < tok.size() && (tok[i] == '-' || tok[i] == '+')) {
    negative = tok[i] == '-';
    ++i;
  }
  __int128 scaled = 0;
  std::int64_t frac_digits = 0;
  bool seen_digit = false;
  bool in_fraction = false;
  for (; i < tok.size(); ++i) {
    char c = tok[i];
    if (c == ',') continue;  // grouping separator
    if (c == '.') {
      if (in_fraction) return std::nullopt;
      in_fraction = true;
      continue;
    }
    if (!is_digit(c)) return std::nullopt;
    seen_digit = true;
    scaled = scaled * 10 + (c - '0');
    if (in_fraction) ++frac_digits;
    if (scaled > static_cast<__int128>(INT64_MAX)) return std::nullopt;
  }
  if (!seen_digit) return std::nullopt;
  std::int64_t den = 1;
  for (std::int64_t k = 0; k < frac_digits; ++k) {
    if (den > INT64_MAX / 10) return std::nullopt;
    den *= 10;
  }
  std::int64_t num = static_cast<std::int64_t>(scaled);
  return Rational::reduced(negative ? -num : num, den);
}

// All decimal tokens in the text, in order. A leading sign is taken only when
// it does not directly follow an alphanumeric character, so "3-5" yields
// {3, 5} while "= -125" yields {-125}.
std::vector<NumericToken> numeric_tokens(const std::string& text) {
  std::vector<NumericToken> out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t start = i;
    if ((text[i] == '-' || text[i] == '+') && i + 1 < text.size() && is_digit(text[i + 1]) &&
        (i == 0 || !is_alnum(text[i - 1]))) {
      ++i;
    }
    if (i >= text.size() || !is_digit(text[i])) {
      i = start + 1;
      continue;
    }
    while (i < text.size() && is_digit(text[i])) ++i;
    // grouping commas and one decimal point, each only when digits follow
    while (i + 1 < text.size() && (text[i] == ',' || text[i] == '.') && is_digit(text[i + 1])) {
      ++i;
      while (i < text.size() && is_digit(text[i])) ++i;
    }
    std::string tok = text.substr(start, i - start);
    if (auto value = parse_decimal(tok)) {
      out.push_back({std::move(tok), *value});
    }
  }
  return out;
}

// ---- choice letters ------------------------------------------------------

struct ChoiceHit {
  std::size_t pos = 0;
  char letter = 0;
  bool marked = false;  // followed by ')', ':' or '.'
};

std::vector<ChoiceHit> choice_hits(const std::string& text) {
  std::vector<ChoiceHit> out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    char lower = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower < 'a' || lower > 'e') continue;
    if (i > 0 && is_alnum(text[i - 1])) continue;
    if (i + 1 < text.size() && is_alnum(text[i + 1])) continue;
    std::size_t j = i + 1;
    while (j < text.size() && text[j] == ' ') ++j;
    bool marked = j < text.size() && (text[j] == ')' || text[j] == ':' || text[j] == '.');
    out.push_back({i, lower, marked});
  }
  return out;
}

std::optional<char> pick_choice(const std::string& text, bool last) {
  auto hits = choice_hits(text);
  if (hits.empty()) return std::nullopt;
  std::vector<ChoiceHit> marked;
  for (const auto& h : hits) {
    if (h.marked) marked.push_back(h);
  }
  const auto& pool = marked.empty() ? hits : marked;
  return last ? pool.back().letter : pool.front().letter;
}

// ---- boolean words -------------------------------------------------------

std::optional<bool> pick_boolean(const std::string& text, bool last) {
  std::optional<bool> found;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_letter(text[i])) {
      ++i;
      continue;
    }
    std::size_t start = i;
    while (i < text.size() && is_letter(text[i])) ++i;
    std::string word = util::to_lower_ascii(text.substr(start, i - start));
    std::optional<bool> value;
    if (word == "yes" || word == "true") value = true;
    if (word == "no" || word == "false") value = false;
    if (value) {
      if (!last) return value;
      found = value;
    }
  }
  return found;
}

// ---- free text / expression ----------------------------------------------

std::string strip_free_text(const std::string& raw) {
  static constexpr std::string_view kPunct = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
  std::string lowered = util::to_lower_ascii(raw);
  std::string no_punct;
  no_punct.reserve(lowered.size());
  for (char c : lowered) {
    if (kPunct.find(c) == std::string_view::npos) no_punct.push_back(c);
  }
  std::string out;
  std::size_t i = 0;
  while (i < no_punct.size()) {
    if (is_space(no_punct[i])) {
      ++i;
      continue;
    }
    std::size_t start = i;
    while (i < no_punct.size() && !is_space(no_punct[i])) ++i;
    std::string word = no_punct.substr(start, i - start);
    if (word == "a" || word == "an" || word == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += word;
  }
  return out;
}

std::string strip_expression(const std::string& raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    if (c == '$' || c == '{' || c == '}' || c == '\\') continue;
    if (is_space(c)) continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

bool has_value_of_kind(const std::string& segment, AnswerKind kind);

// Candidate clauses for the fallback ladder: every "Therefore" word and every
// "So," marker, each extended to its sentence end.
std::vector<std::string> conclusion_clauses(const std::string& text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (i > 0 && is_alnum(text[i - 1])) continue;
    bool hit = false;
    if (i + 9 <= text.size() &&
        util::to_lower_ascii(text.substr(i, 9)) == "therefore" &&
        (i + 9 == text.size() || !is_alnum(text[i + 9]))) {
      hit = true;
    } else if (i + 3 <= text.size() && util::to_lower_ascii(text.substr(i, 2)) == "so" &&
               text[i + 2] == ',') {
      hit = true;
    }
    if (hit) {
      out.push_back(text.substr(i, sentence_end(text, i) - i));
    }
  }
  return out;
}

std::optional<std::string> last_value_segment(const std::string& text, AnswerKind kind) {
  switch (kind) {
    case AnswerKind::Numeric: {
      auto tokens = numeric_tokens(text);
      if (tokens.empty()) return std::nullopt;
      return tokens.back().text;
    }
    case AnswerKind::Choice: {
      auto letter = pick_choice(text, /*last=*/true);
      if (!letter) return std::nullopt;
      return std::string(1, *letter);
    }
    case AnswerKind::Boolean: {
      auto value = pick_boolean(text, /*last=*/true);
      if (!value) return std::nullopt;
      return std::string(*value ? "true" : "false");
    }
    case AnswerKind::FreeText:
    case AnswerKind::Expression: {
      // last sentence that still carries content
      std::vector<std::string> sentences;
      std::size_t begin = 0;
      while (begin < text.size()) {
        std::size_t end = sentence_end(text, begin);
        if (end == begin) {
          ++begin;
          continue;
        }
        sentences.push_back(text.substr(begin, end - begin));
        begin = end;
      }
      for (auto it = sentences.rbegin(); it != sentences.rend(); ++it) {
        std::string sentence = util::trim(*it);
        if (has_value_of_kind(sentence, kind)) return sentence;
      }
      return std::nullopt;
    }
  }
  return std::nullopt;
}

bool has_value_of_kind(const std::string& segment, AnswerKind kind) {
  switch (kind) {
    case AnswerKind::Numeric:
      return !numeric_tokens(segment).empty();
    case AnswerKind::Choice:
      return pick_choice(segment, false).has_value();
    case AnswerKind::Boolean:
      return pick_boolean(segment, false).has_value();
    case AnswerKind::FreeText:
      return !strip_free_text(segment).empty();
    case AnswerKind::Expression:
      return !strip_expression(segment).empty();
  }
  return false;
}

std::optional<std::string> fallback_final(const std::string& text, AnswerKind kind) {
  auto clauses = conclusion_clauses(text);
  for (auto it = clauses.rbegin(); it != clauses.rend(); ++it) {
    if (has_value_of_kind(*it, kind)) return *it;
  }
  return last_value_segment(text, kind);
}

}  // namespace

std::string to_string(SetupKind kind) {
  switch (kind) {
    case SetupKind::Normal: return "normal";
    case SetupKind::Upa: return "upa";
    case SetupKind::Mpa: return "mpa";
    case SetupKind::Plugin: return "plugin";
  }
  return "normal";
}

SetupKind setup_kind_from_string(const std::string& s) {
  if (s == "normal") return SetupKind::Normal;
  if (s == "upa") return SetupKind::Upa;
  if (s == "mpa") return SetupKind::Mpa;
  if (s == "plugin" || util::starts_with(s, "plugin:")) return SetupKind::Plugin;
  throw std::invalid_argument("unknown setup kind: " + s);
}

Rational Rational::reduced(std::int64_t num, std::int64_t den) {
  if (den == 0) throw std::invalid_argument("rational with zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  std::int64_t g = std::gcd(num < 0 ? -num : num, den);
  if (g > 1) {
    num /= g;
    den /= g;
  }
  return Rational{num, den == 0 ? 1 : den};
}

std::string Rational::str() const {
  if (den == 1) return std::to_string(num);
  // Denominators originating from decimal strings divide a power of ten, so
  // an exact decimal rendering always exists.
  std::int64_t d = den;
  int tens = 0;
  while (d % 2 == 0) {
    d /= 2;
    ++tens;
  }
  int fives = 0;
  while (d % 5 == 0) {
    d /= 5;
    ++fives;
  }
  if (d != 1) return std::to_string(num) + "/" + std::to_string(den);
  int digits = std::max(tens, fives);
  __int128 scaled = static_cast<__int128>(num < 0 ? -num : num);
  for (int k = 0; k < digits; ++k) scaled *= 10;
  scaled /= den;
  std::string body;
  for (__int128 v = scaled; v > 0; v /= 10) body.push_back(static_cast<char>('0' + (int)(v % 10)));
  while (static_cast<int>(body.size()) <= digits) body.push_back('0');
  std::reverse(body.begin(), body.end());
  body.insert(body.size() - digits, ".");
  return (num < 0 ? "-" : "") + body;
}

std::optional<Rational> parse_rational(const std::string& token) {
  return parse_decimal(util::trim(token));
}

std::string CanonicalAnswer::value_str() const {
  if (std::holds_alternative<Rational>(value)) return std::get<Rational>(value).str();
  if (std::holds_alternative<bool>(value)) return std::get<bool>(value) ? "true" : "false";
  return std::get<std::string>(value);
}

std::string to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::Correct: return "correct";
    case Verdict::Incorrect: return "incorrect";
    case Verdict::Unparseable: return "unparseable";
  }
  return "unparseable";
}

SplitOutput split_output(const std::string& text, SetupKind setup, AnswerKind kind) {
  if (text.empty()) throw std::invalid_argument("split_output: empty text");
  SplitOutput out;
  out.rationale = text;
  auto tags = find_tags(text);

  if (setup == SetupKind::Upa && !tags.empty()) {
    std::size_t begin = tags.front() + kAnswerTag.size();
    std::string segment = util::trim(text.substr(begin, sentence_end(text, begin) - begin));
    if (!segment.empty()) out.preemptive = segment;
  }

  bool tag_final_usable =
      !tags.empty() && (setup != SetupKind::Upa || tags.size() >= 2);
  if (tag_final_usable) {
    std::size_t begin = tags.back() + kAnswerTag.size();
    std::string segment = util::trim(text.substr(begin));
    if (!segment.empty() && has_value_of_kind(segment, kind)) {
      out.final = segment;
      return out;
    }
  }
  out.final = fallback_final(text, kind);
  return out;
}

std::optional<CanonicalAnswer> normalize(const std::string& raw, AnswerKind kind) {
  switch (kind) {
    case AnswerKind::Numeric: {
      auto tokens = numeric_tokens(raw);
      if (tokens.empty()) return std::nullopt;
      return CanonicalAnswer{kind, tokens.back().value};
    }
    case AnswerKind::Choice: {
      auto letter = pick_choice(raw, /*last=*/false);
      if (!letter) return std::nullopt;
      return CanonicalAnswer{kind, std::string(1, *letter)};
    }
    case AnswerKind::Boolean: {
      auto value = pick_boolean(raw, /*last=*/false);
      if (!value) return std::nullopt;
      return CanonicalAnswer{kind, *value};
    }
    case AnswerKind::FreeText: {
      std::string stripped = strip_free_text(raw);
      if (stripped.empty()) return std::nullopt;
      return CanonicalAnswer{kind, std::move(stripped)};
    }
    case AnswerKind::Expression: {
      std::string stripped = strip_expression(raw);
      if (stripped.empty()) return std::nullopt;
      return CanonicalAnswer{kind, std::move(stripped)};
    }
  }
  return std::nullopt;
}

bool exact_match(const std::string& a, const std::string& b, AnswerKind kind) {
  auto ca = normalize(a, kind);
  auto cb = normalize(b, kind);
  if (!ca || !cb) return false;
  return *ca == *cb;
}

ReflectionVerdict parse_reflection(const std::string& text, AnswerKind kind) {
  // Earliest standalone verdict word wins; an occurrence of CORRECT that is
  // the tail of INCORRECT counts as INCORRECT, never as CORRECT.
  std::size_t pos = 0;
  while ((pos = text.find("CORRECT", pos)) != std::string::npos) {
    std::size_t begin = pos;
    bool incorrect = false;
    if (pos >= 2 && text.compare(pos - 2, 2, "IN") == 0) {
      incorrect = true;
      begin = pos - 2;
    }
    bool boundary_before = begin == 0 || !is_letter(text[begin - 1]);
    std::size_t end = pos + 7;
    bool boundary_after = end == text.size() || !is_letter(text[end]);
    if (!boundary_before || !boundary_after) {
      pos = end;
      continue;
    }
    if (!incorrect) {
      return ReflectionVerdict{Verdict::Correct, std::nullopt};
    }
    ReflectionVerdict verdict{Verdict::Incorrect, std::nullopt};
    std::string remainder = util::trim(text.substr(end));
    if (!remainder.empty()) {
      verdict.revised = split_output(remainder, SetupKind::Normal, kind).final;
    }
    return verdict;
  }
  return ReflectionVerdict{Verdict::Unparseable, std::nullopt};
}

}  // namespace preempt::extract
