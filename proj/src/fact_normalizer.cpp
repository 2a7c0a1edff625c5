#include "groundrl/fact_normalizer.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "groundrl/errors.hpp"

namespace groundrl {

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_word_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= 'a' && u <= 'z') || (u >= 'A' && u <= 'Z') || is_digit(c) || c == '_' || u >= 0x80;
}
bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && u > 0x20 && u != 0x7f && !is_word_byte(c);
}

bool is_ascii(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return static_cast<unsigned char>(c) < 0x80; });
}

// NFKC case folding, with every Unicode white-space code point mapped to ' '.
std::string fold_unicode(std::string_view text) {
  if (is_ascii(text)) {
    std::string out(text);
    for (char& c : out) {
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
  }
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfkc_cf = icu::Normalizer2::getNFKCCasefoldInstance(status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU NFKC_Casefold normalizer unavailable");
  icu::UnicodeString u =
      icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString folded = nfkc_cf->normalize(u, status);
  if (U_FAILURE(status)) return std::string(text);
  for (int32_t i = 0; i < folded.length(); ++i) {
    if (u_isUWhiteSpace(folded.charAt(i))) folded.setCharAt(i, u' ');
  }
  std::string out;
  folded.toUTF8String(out);
  return out;
}

std::string collapse_spaces(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending = false;
  for (char c : s) {
    if (is_space(c)) {
      pending = !out.empty();
      continue;
    }
    if (pending) out += ' ';
    pending = false;
    out += c;
  }
  return out;
}

// True when s[i..] begins a numeric literal, optionally signed.
bool starts_number(std::string_view s, std::size_t i) {
  if (i < s.size() && (s[i] == '-' || s[i] == '+')) ++i;
  if (i >= s.size()) return false;
  if (is_digit(s[i])) return true;
  return s[i] == '.' && i + 1 < s.size() && is_digit(s[i + 1]);
}

std::string_view trim_punct(std::string_view s) {
  for (;;) {
    const std::size_t before = s.size();
    while (!s.empty() && (is_space(s.front()) || (is_ascii_punct(s.front()) && !starts_number(s, 0)))) {
      s.remove_prefix(1);
    }
    while (!s.empty() && (is_space(s.back()) || is_ascii_punct(s.back()))) s.remove_suffix(1);
    if (s.size() == before) return s;
  }
}

std::string canonical_decimal(std::string_view int_part, std::string_view frac_part) {
  std::size_t lead = 0;
  while (lead + 1 < int_part.size() && int_part[lead] == '0') ++lead;
  std::string out(int_part.substr(lead));
  if (out.empty()) out = "0";
  while (!frac_part.empty() && frac_part.back() == '0') frac_part.remove_suffix(1);
  if (!frac_part.empty()) {
    out += '.';
    out += frac_part;
  }
  return out;
}

// a/b as an exact terminating decimal, when b <= 1000 allows it.
std::optional<std::string> exact_fraction(std::string_view num, std::string_view den) {
  while (num.size() > 1 && num.front() == '0') num.remove_prefix(1);
  while (den.size() > 1 && den.front() == '0') den.remove_prefix(1);
  if (den.size() > 4 || num.size() > 18) return std::nullopt;
  unsigned long long a = 0;
  unsigned long long b = 0;
  std::from_chars(num.data(), num.data() + num.size(), a);
  std::from_chars(den.data(), den.data() + den.size(), b);
  if (b == 0 || b > 1000) return std::nullopt;
  const unsigned long long g = std::gcd(a, b);
  if (g > 1) {
    a /= g;
    b /= g;
  }
  int twos = 0;
  int fives = 0;
  unsigned long long rest = b;
  while (rest % 2 == 0) {
    rest /= 2;
    ++twos;
  }
  while (rest % 5 == 0) {
    rest /= 5;
    ++fives;
  }
  if (rest != 1) return std::nullopt;
  const int places = std::max(twos, fives);
  unsigned __int128 scale = 1;
  for (int i = 0; i < places; ++i) scale *= 10;
  unsigned __int128 scaled = static_cast<unsigned __int128>(a) * (scale / b);
  std::string digits;
  do {
    digits.insert(digits.begin(), static_cast<char>('0' + static_cast<int>(scaled % 10)));
    scaled /= 10;
  } while (scaled > 0);
  if (static_cast<int>(digits.size()) <= places) digits.insert(0, places - digits.size() + 1, '0');
  const std::size_t split = digits.size() - places;
  return canonical_decimal(std::string_view(digits).substr(0, split), std::string_view(digits).substr(split));
}

bool integral(std::string_view frac_digits) {
  return std::all_of(frac_digits.begin(), frac_digits.end(), [](char c) { return c == '0'; });
}

std::string rewrite_numbers(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  const std::size_t n = s.size();
  auto blocked_by_prev = [&](std::size_t i) { return i > 0 && (is_word_byte(s[i - 1]) || s[i - 1] == '.'); };
  auto dot_digit = [&](std::size_t j) { return j + 1 < n && s[j] == '.' && is_digit(s[j + 1]); };

  std::size_t i = 0;
  while (i < n) {
    const char c = s[i];
    const bool starts = (is_digit(c) || dot_digit(i)) && !blocked_by_prev(i);
    if (!starts) {
      out += c;
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && is_digit(s[j])) ++j;
    const std::string_view int_part = s.substr(i, j - i);
    std::string_view frac_part;
    if (dot_digit(j)) {
      std::size_t k = j + 1;
      while (k < n && is_digit(s[k])) ++k;
      frac_part = s.substr(j + 1, k - j - 1);
      j = k;
    }
    if (dot_digit(j)) {
      // Dotted run such as a version string: keep verbatim.
      while (j < n && (is_digit(s[j]) || dot_digit(j))) ++j;
      out.append(s.substr(i, j - i));
      i = j;
      continue;
    }
    const bool after_slash = i > 0 && s[i - 1] == '/';
    if (integral(frac_part) && !after_slash && j + 1 < n && s[j] == '/' && is_digit(s[j + 1])) {
      std::size_t k = j + 1;
      while (k < n && is_digit(s[k])) ++k;
      const std::string_view den = s.substr(j + 1, k - j - 1);
      std::string_view den_frac;
      if (dot_digit(k)) {
        std::size_t m = k + 1;
        while (m < n && is_digit(s[m])) ++m;
        den_frac = s.substr(k + 1, m - k - 1);
        k = m;
      }
      const bool chained = k < n && (s[k] == '/' || dot_digit(k));
      if (!chained && integral(den_frac)) {
        if (auto dec = exact_fraction(int_part, den)) {
          out += *dec;
        } else {
          out += canonical_decimal(int_part, {});
          out += '/';
          out += canonical_decimal(den, {});
        }
        i = k;
        continue;
      }
    }
    out += canonical_decimal(int_part, frac_part);
    i = j;
  }
  return out;
}

constexpr std::string_view kStopwords[] = {
    "a",       "an",      "the",     "is",        "are",     "was",     "were",     "be",
    "been",    "being",   "equals",  "equal",     "of",      "to",      "then",     "thus",
    "hence",   "therefore", "approximately", "about", "its",  "it",      "with",     "at",
    "in",      "on",      "by",      "than",      "we",      "get",     "gets",     "gives",
    "becomes", "as",      "which",   "that",      "this",    "these",   "those",    "there",
    "here",    "for",     "from",    "into",      "roughly", "nearly",  "exactly",  "around",
    "i",       "you",     "answer",  "value",     "total",   "result",  "since",    "because",
    "if",      "not",     "measures", "measure",  "like",    "each",    "every",    "find",
    "compute", "so",      "and",     "or",        "but",     "has",     "have",     "had",
};

// Words that end the backward search for a subject: the number belongs to a
// different clause than anything before them.
constexpr std::string_view kClauseBreaks[] = {
    "and", "or", "but", "so", "while", "whereas", "has", "have", "had", "shows", "show", "contains", "contain",
};

constexpr std::string_view kUnits[] = {
    "mm",    "cm",   "dm",   "m",      "km",      "inch",    "yards",  "inches", "ft",
    "feet",  "yd",   "mi",   "mile",   "miles",   "mg",      "g",      "kg",     "lb",
    "lbs",   "s",    "sec",  "ms",     "min",     "h",       "hr",     "hrs",    "hour",
    "hours", "l",    "ml",   "deg",    "degree",  "degrees", "°",      "rad",    "%",
    "cm2",   "m2",   "cm3",  "m3",     "px",      "hz",      "units",  "minutes", "seconds",
};

template <std::size_t N>
bool in_list(const std::string_view (&list)[N], std::string_view word) {
  return std::find(std::begin(list), std::end(list), word) != std::end(list);
}

std::string join_tokens(std::span<const Token> tokens) {
  std::string out;
  for (const Token& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t.text;
  }
  return out;
}

bool is_punct(const Token& t, std::string_view text) { return t.kind == Token::Kind::kPunct && t.text == text; }

// Index of the nearest preceding content word in the same clause.
std::optional<std::size_t> find_subject(std::span<const Token> tokens, std::size_t number_index) {
  for (std::size_t j = number_index; j-- > 0;) {
    const Token& t = tokens[j];
    if (t.kind == Token::Kind::kNumber) return std::nullopt;
    if (t.kind == Token::Kind::kPunct) {
      if (t.text == "." || t.text == "!" || t.text == "?" || t.text == ";" || t.text == ",") return std::nullopt;
      continue;
    }
    if (in_list(kClauseBreaks, t.text)) return std::nullopt;
    if (is_stopword(t.text) || is_unit_word(t.text)) continue;
    return j;
  }
  return std::nullopt;
}

struct NumberSpan {
  double value = 0.0;
  std::size_t begin = 0;  // first token, including a leading sign
  std::size_t end = 0;    // one past the last numeric token
};

// Reads the number starting at `i`: a leading minus sign counts unless it
// follows another number, and `a / b` is read as one fraction.
NumberSpan read_number(std::span<const Token> tokens, std::size_t i) {
  NumberSpan n{tokens[i].value, i, i + 1};
  if (i > 0 && is_punct(tokens[i - 1], "-") && (i == 1 || tokens[i - 2].kind != Token::Kind::kNumber)) {
    n.value = -n.value;
    n.begin = i - 1;
  }
  if (i + 2 < tokens.size() && is_punct(tokens[i + 1], "/") && tokens[i + 2].kind == Token::Kind::kNumber &&
      tokens[i + 2].value != 0.0) {
    n.value /= tokens[i + 2].value;
    n.end = i + 3;
  }
  return n;
}

bool fraction_denominator(std::span<const Token> tokens, std::size_t i) {
  return i >= 2 && is_punct(tokens[i - 1], "/") && tokens[i - 2].kind == Token::Kind::kNumber && tokens[i].value != 0.0;
}

Fact numeric_fact(std::span<const Token> tokens, std::size_t number_index) {
  const NumberSpan number = read_number(tokens, number_index);
  const auto subject = find_subject(tokens, number.begin);
  std::size_t end = number.end;
  std::string unit;
  if (end < tokens.size() && tokens[end].kind == Token::Kind::kWord && is_unit_word(tokens[end].text)) {
    unit = tokens[end].text;
    ++end;
  }
  const std::size_t begin = subject.value_or(number.begin);
  Fact fact;
  fact.text = normalize_fact(join_tokens(tokens.subspan(begin, end - begin)));
  fact.tokens = tokenize(fact.text);
  if (subject) fact.subject = tokens[*subject].text;
  fact.value = number.value;
  fact.unit = std::move(unit);
  return fact;
}

}  // namespace

std::string normalize_fact(std::string_view text) {
  const std::string folded = fold_unicode(text);
  const std::string collapsed = collapse_spaces(folded);
  return rewrite_numbers(trim_punct(collapsed));
}

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  const std::size_t n = s.size();
  auto dot_digit = [&](std::size_t j) { return j + 1 < n && s[j] == '.' && is_digit(s[j + 1]); };
  std::size_t i = 0;
  while (i < n) {
    const char c = s[i];
    if (is_space(c)) {
      ++i;
      continue;
    }
    if (is_digit(c) || dot_digit(i)) {
      std::size_t j = i;
      while (j < n && is_digit(s[j])) ++j;
      if (dot_digit(j)) {
        ++j;
        while (j < n && is_digit(s[j])) ++j;
      }
      if (!dot_digit(j)) {
        Token t{Token::Kind::kNumber, std::string(s.substr(i, j - i)), 0.0};
        std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.value);
        out.push_back(std::move(t));
        i = j;
        continue;
      }
      // Dotted run: a single word token.
      while (j < n && (is_digit(s[j]) || dot_digit(j))) ++j;
      out.push_back({Token::Kind::kWord, std::string(s.substr(i, j - i)), 0.0});
      i = j;
      continue;
    }
    if (is_word_byte(c)) {
      std::size_t j = i;
      while (j < n && (is_word_byte(s[j]) || ((s[j] == '-' || s[j] == '\'') && j + 1 < n && is_word_byte(s[j + 1])))) {
        ++j;
      }
      out.push_back({Token::Kind::kWord, std::string(s.substr(i, j - i)), 0.0});
      i = j;
      continue;
    }
    out.push_back({Token::Kind::kPunct, std::string(1, c), 0.0});
    ++i;
  }
  return out;
}

bool numbers_match(double a, double b, double rel_tol) {
  if (a == b) return true;
  return std::fabs(a - b) <= rel_tol * std::max(std::fabs(a), std::fabs(b));
}

Fact parse_fact(std::string_view text) {
  Fact fact;
  fact.text = normalize_fact(text);
  fact.tokens = tokenize(fact.text);
  const auto& tokens = fact.tokens;

  const auto number = std::find_if(tokens.begin(), tokens.end(),
                                   [](const Token& t) { return t.kind == Token::Kind::kNumber; });
  if (number != tokens.end()) {
    const Fact parsed = numeric_fact(tokens, static_cast<std::size_t>(number - tokens.begin()));
    fact.subject = parsed.subject;
    fact.value = parsed.value;
    fact.unit = parsed.unit;
    return fact;
  }

  const auto sep = std::find_if(tokens.begin(), tokens.end(), [](const Token& t) {
    return t.kind == Token::Kind::kPunct && (t.text == "=" || t.text == ":");
  });
  if (sep != tokens.end()) {
    std::vector<Token> lhs;
    for (auto it = tokens.begin(); it != sep; ++it) {
      if (it->kind == Token::Kind::kWord && !is_stopword(it->text)) lhs.push_back(*it);
    }
    std::vector<Token> rhs(sep + 1, tokens.end());
    if (!lhs.empty() && !rhs.empty()) {
      fact.subject = join_tokens(lhs);
      fact.category = join_tokens(rhs);
    }
  }
  return fact;
}

FactSet FactSet::from_strings(std::span<const std::string> phrases) {
  FactSet set;
  for (const auto& p : phrases) set.insert(p);
  return set;
}

bool FactSet::insert(Fact fact) {
  if (fact.text.empty()) return false;
  std::string key = fact.text;
  return facts_.emplace(std::move(key), std::move(fact)).second;
}

void FactSet::merge(const FactSet& other) {
  for (const auto& [text, fact] : other) facts_.emplace(text, fact);
}

std::vector<std::string> FactSet::strings() const {
  std::vector<std::string> out;
  out.reserve(facts_.size());
  for (const auto& [text, fact] : facts_) out.push_back(text);
  return out;
}

NormalizedText::NormalizedText(std::string_view raw) : text_(normalize_fact(raw)), tokens_(tokenize(text_)) {}

bool NormalizedText::contains(std::span<const Token> key) const {
  if (key.empty() || key.size() > tokens_.size()) return false;
  const std::size_t last = tokens_.size() - key.size();
  for (std::size_t start = 0; start <= last; ++start) {
    bool all = true;
    for (std::size_t k = 0; k < key.size() && all; ++k) {
      const Token& a = tokens_[start + k];
      const Token& b = key[k];
      if (a.kind != b.kind) {
        all = false;
      } else if (a.kind == Token::Kind::kNumber) {
        all = numbers_match(a.value, b.value);
      } else {
        all = a.text == b.text;
      }
    }
    if (all) return true;
  }
  return false;
}

bool match_key(std::string_view key, std::string_view segment) {
  const std::vector<Token> key_tokens = tokenize(normalize_fact(key));
  return NormalizedText(segment).contains(key_tokens);
}

Lexicon::Lexicon(std::span<const std::string> phrases) {
  for (const auto& p : phrases) add(p);
}

void Lexicon::add(std::string_view phrase) { add(parse_fact(phrase)); }

void Lexicon::add(const Fact& fact) {
  if (fact.tokens.empty()) return;
  const bool seen = std::any_of(phrases_.begin(), phrases_.end(), [&](const Fact& f) { return f.text == fact.text; });
  if (!seen) phrases_.push_back(fact);
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open lexicon file: " + path.string());
  Lexicon lexicon;
  std::string line;
  while (std::getline(in, line)) lexicon.add(line);
  return lexicon;
}

FactSet extract_facts(std::span<const std::string_view> segments, const Lexicon& lexicon) {
  return extract_facts(segments, std::span<const Fact>(lexicon.phrases()));
}

FactSet extract_facts(std::span<const std::string_view> segments, std::span<const Fact> phrases) {
  FactSet facts;
  for (std::string_view segment : segments) {
    const NormalizedText text(segment);
    const auto& tokens = text.tokens();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i].kind == Token::Kind::kNumber && !fraction_denominator(tokens, i)) {
        facts.insert(numeric_fact(tokens, i));
      }
    }
    for (const Fact& phrase : phrases) {
      if (text.contains(phrase)) facts.insert(phrase);
    }
  }
  return facts;
}

FactSet extract_claimed_facts(std::string_view think, std::string_view answer, const Lexicon& lexicon) {
  const std::array<std::string_view, 2> segments = {think, answer};
  return extract_facts(segments, lexicon);
}

bool is_unit_word(std::string_view word) {
  return in_list(kUnits, word);
}

bool is_stopword(std::string_view word) {
  return in_list(kStopwords, word);
}

}  // namespace groundrl
