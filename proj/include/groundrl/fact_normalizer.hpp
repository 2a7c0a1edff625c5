#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace groundrl {

/// Canonical form of a phrase: NFKC case-folded, whitespace collapsed,
/// surrounding ASCII punctuation stripped, numbers rewritten as their
/// shortest exact decimal (`1/2` -> `0.5`, `05.50` -> `5.5`). Idempotent.
std::string normalize_fact(std::string_view text);

struct Token {
  enum class Kind { kWord, kNumber, kPunct };
  Kind kind = Kind::kWord;
  std::string text;
  double value = 0.0;  // kNumber only

  bool operator==(const Token&) const = default;
};

/// Splits already-normalized text into words, numbers and punctuation marks.
std::vector<Token> tokenize(std::string_view normalized);

/// True iff two numbers agree to the relative tolerance used for fact matching.
bool numbers_match(double a, double b, double rel_tol = 1e-9);

/// An atomic fact in canonical form, with optional structure.
struct Fact {
  std::string text;                     // canonical string, the set key
  std::optional<std::string> subject;   // e.g. "radius"
  std::optional<double> value;          // numeric value, if any
  std::optional<std::string> category;  // categorical value for `attr = word` facts
  std::string unit;                     // normalized unit string, may be empty
  std::vector<Token> tokens;            // tokens of `text`
};

/// Canonicalizes `text` and recovers subject / value / unit when present.
/// `Radius = 5 cm` -> text "radius = 5 cm", subject "radius", value 5, unit "cm".
Fact parse_fact(std::string_view text);

/// Set of canonical facts, ordered by canonical text.
class FactSet {
 public:
  using Map = std::map<std::string, Fact, std::less<>>;

  FactSet() = default;
  static FactSet from_strings(std::span<const std::string> phrases);

  /// Inserts a fact; empty canonical text is ignored. Returns true if new.
  bool insert(Fact fact);
  bool insert(std::string_view phrase) { return insert(parse_fact(phrase)); }
  void merge(const FactSet& other);

  bool contains(std::string_view canonical) const { return facts_.find(canonical) != facts_.end(); }
  std::size_t size() const { return facts_.size(); }
  bool empty() const { return facts_.empty(); }

  Map::const_iterator begin() const { return facts_.begin(); }
  Map::const_iterator end() const { return facts_.end(); }

  std::vector<std::string> strings() const;

 private:
  Map facts_;
};

/// A segment normalized and tokenized once so many keys can be matched cheaply.
class NormalizedText {
 public:
  explicit NormalizedText(std::string_view raw);

  /// True iff `key_tokens` occurs as a contiguous token subsequence, numbers
  /// compared by value.
  bool contains(std::span<const Token> key_tokens) const;
  bool contains(const Fact& key) const { return contains(key.tokens); }

  const std::string& text() const { return text_; }
  const std::vector<Token>& tokens() const { return tokens_; }

 private:
  std::string text_;
  std::vector<Token> tokens_;
};

/// True iff the key's token sequence occurs contiguously in the normalized segment.
bool match_key(std::string_view key, std::string_view segment);

/// Domain keyphrases, one canonical phrase per line.
class Lexicon {
 public:
  Lexicon() = default;
  explicit Lexicon(std::span<const std::string> phrases);

  static Lexicon load(const std::filesystem::path& path);

  void add(std::string_view phrase);
  void add(const Fact& fact);
  const std::vector<Fact>& phrases() const { return phrases_; }
  bool empty() const { return phrases_.empty(); }

 private:
  std::vector<Fact> phrases_;
};

/// Facts claimed in `think` and `answer`: every numeric literal attached to the
/// nearest preceding content word in its sentence, plus every lexicon phrase
/// present in either segment.
FactSet extract_claimed_facts(std::string_view think, std::string_view answer, const Lexicon& lexicon);

/// Same extractor applied to arbitrary text segments.
FactSet extract_facts(std::span<const std::string_view> segments, const Lexicon& lexicon);
FactSet extract_facts(std::span<const std::string_view> segments, std::span<const Fact> phrases);

bool is_unit_word(std::string_view word);
bool is_stopword(std::string_view word);

}  // namespace groundrl
