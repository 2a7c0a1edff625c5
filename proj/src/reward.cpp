#include "groundrl/reward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "groundrl/errors.hpp"

namespace groundrl {

namespace {

bool units_compatible(const Fact& a, const Fact& b) { return a.unit.empty() || b.unit.empty() || a.unit == b.unit; }

bool subjects_compatible(const Fact& a, const Fact& b) {
  return !a.subject || !b.subject || *a.subject == *b.subject;
}

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

bool is_single_letter(const Token& t) {
  return t.kind == Token::Kind::kWord && t.text.size() == 1 && t.text[0] >= 'a' && t.text[0] <= 'z';
}

void append_unique(std::vector<Fact>& out, const FactSet& facts) {
  for (const auto& [text, fact] : facts) {
    const bool seen = std::any_of(out.begin(), out.end(), [&](const Fact& f) { return f.text == text; });
    if (!seen) out.push_back(fact);
  }
}

}  // namespace

std::optional<MatchPolicy> parse_match_policy(std::string_view name) {
  if (name == "normalized_exact" || name == "exact") return MatchPolicy::kNormalizedExact;
  if (name == "numeric") return MatchPolicy::kNumeric;
  if (name == "choice_letter" || name == "choice") return MatchPolicy::kChoiceLetter;
  return std::nullopt;
}

std::string_view to_string(MatchPolicy policy) {
  switch (policy) {
    case MatchPolicy::kNormalizedExact:
      return "normalized_exact";
    case MatchPolicy::kNumeric:
      return "numeric";
    case MatchPolicy::kChoiceLetter:
      return "choice_letter";
  }
  return "normalized_exact";
}

void CoverageThresholds::validate() const {
  if (!(tau_lo >= 0.0 && tau_lo < tau_hi && tau_hi <= 1.0)) {
    throw ConfigError("coverage thresholds must satisfy 0 <= tau_lo < tau_hi <= 1");
  }
}

void RewardWeights::validate() const {
  for (double w : as_array()) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("reward weights must be finite and nonnegative");
  }
}

void ScheduleConfig::validate() const {
  start.validate();
  end.validate();
  if (!(warmup_fraction > 0.0 && warmup_fraction <= 1.0)) {
    throw ConfigError("schedule warmup_fraction must lie in (0, 1]");
  }
}

void RewardConfig::validate() const {
  thresholds.validate();
  schedule.validate();
  if (ngram_order < 1) throw ConfigError("ngram_order must be >= 1");
}

std::optional<double> parse_numeric_answer(std::string_view text) {
  const std::vector<Token> tokens = tokenize(normalize_fact(text));
  std::vector<std::size_t> numbers;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].kind == Token::Kind::kNumber) numbers.push_back(i);
  }
  auto signed_value = [&](std::size_t i) {
    const bool negative = i > 0 && tokens[i - 1].kind == Token::Kind::kPunct && tokens[i - 1].text == "-" &&
                          (i < 2 || tokens[i - 2].kind != Token::Kind::kNumber);
    return negative ? -tokens[i].value : tokens[i].value;
  };
  if (numbers.size() == 1) return signed_value(numbers[0]);
  if (numbers.size() == 2 && numbers[1] == numbers[0] + 2 && tokens[numbers[0] + 1].text == "/" &&
      tokens[numbers[1]].value != 0.0) {
    return signed_value(numbers[0]) / tokens[numbers[1]].value;
  }
  return std::nullopt;
}

std::optional<char> extract_choice_letter(std::string_view text) {
  const std::vector<Token> tokens = tokenize(normalize_fact(text));
  if (tokens.empty()) return std::nullopt;
  if (is_single_letter(tokens[0]) && (tokens.size() == 1 || tokens[1].kind == Token::Kind::kPunct)) {
    return tokens[0].text[0];
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Token& t = tokens[i];
    if (t.kind != Token::Kind::kWord || (t.text != "option" && t.text != "choice" && t.text != "answer")) continue;
    for (std::size_t j = i + 1; j < tokens.size(); ++j) {
      const Token& u = tokens[j];
      if (u.kind == Token::Kind::kPunct || (u.kind == Token::Kind::kWord && (u.text == "is" || u.text == "the"))) {
        continue;
      }
      if (is_single_letter(u)) return u.text[0];
      break;
    }
  }
  return std::nullopt;
}

double accuracy_reward(std::string_view answer, std::string_view gold, MatchPolicy policy) {
  if (trim_ascii(gold).empty()) return 0.0;
  switch (policy) {
    case MatchPolicy::kNormalizedExact: {
      const std::string a = normalize_fact(answer);
      return !a.empty() && a == normalize_fact(gold) ? 1.0 : 0.0;
    }
    case MatchPolicy::kNumeric: {
      const auto a = parse_numeric_answer(answer);
      const auto g = parse_numeric_answer(gold);
      if (!a || !g) return 0.0;
      if (*a == *g) return 1.0;
      return std::fabs(*a - *g) <= 1e-4 * std::fabs(*g) ? 1.0 : 0.0;
    }
    case MatchPolicy::kChoiceLetter: {
      const auto a = extract_choice_letter(answer);
      const auto g = extract_choice_letter(gold);
      return a && g && *a == *g ? 1.0 : 0.0;
    }
  }
  return 0.0;
}

double repetition_reward(std::string_view text, int n) {
  if (n < 1) throw std::invalid_argument("n-gram order must be >= 1");
  const std::string lowered = to_lower_ascii(text);
  std::string joined;
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // offset, length in `joined`
  joined.reserve(lowered.size());
  std::size_t i = 0;
  while (i < lowered.size()) {
    while (i < lowered.size() && is_ascii_space(lowered[i])) ++i;
    const std::size_t start = i;
    while (i < lowered.size() && !is_ascii_space(lowered[i])) ++i;
    if (i > start) {
      if (!joined.empty()) joined += ' ';
      spans.emplace_back(joined.size(), i - start);
      joined.append(lowered, start, i - start);
    }
  }
  const auto order = static_cast<std::size_t>(n);
  if (spans.size() < order) return 0.0;
  const std::size_t total = spans.size() - order + 1;
  std::unordered_set<std::string_view> distinct;
  distinct.reserve(total);
  const std::string_view view(joined);
  for (std::size_t k = 0; k < total; ++k) {
    const std::size_t begin = spans[k].first;
    const auto& last = spans[k + order - 1];
    distinct.insert(view.substr(begin, last.first + last.second - begin));
  }
  return static_cast<double>(distinct.size()) / static_cast<double>(total) - 1.0;
}

Coverage coverage(const FactSet& keys, const NormalizedText& segment) {
  Coverage c;
  c.total = keys.size();
  for (const auto& [text, key] : keys) {
    if (segment.contains(key)) ++c.matched;
  }
  return c;
}

double coverage(const FactSet& keys, std::string_view segment) {
  if (keys.empty()) return 1.0;
  return coverage(keys, NormalizedText(segment)).value();
}

double discretize_coverage(double cov, const CoverageThresholds& t) {
  if (cov >= t.tau_hi) return 1.0;
  if (cov >= t.tau_lo) return 0.5;
  return 0.0;
}

double vkey_reward(const FactSet& visual_keys, std::string_view description, const CoverageThresholds& t) {
  return discretize_coverage(coverage(visual_keys, description), t);
}

double tkey_reward(const FactSet& textual_keys, std::string_view think, const CoverageThresholds& t) {
  return discretize_coverage(coverage(textual_keys, think), t);
}

bool facts_conflict(const Fact& a, const Fact& b) {
  if (!a.subject || !b.subject || *a.subject != *b.subject) return false;
  if (a.value && b.value) return units_compatible(a, b) && !numbers_match(*a.value, *b.value);
  if (a.category && b.category) return *a.category != *b.category;
  return false;
}

bool fact_supported(const Fact& claimed, const FactSet& evidence) {
  if (evidence.contains(claimed.text)) return true;
  for (const auto& [text, e] : evidence) {
    if (claimed.value && e.value && numbers_match(*claimed.value, *e.value) && subjects_compatible(claimed, e) &&
        units_compatible(claimed, e)) {
      return true;
    }
    if (claimed.category && e.category && claimed.subject == e.subject && *claimed.category == *e.category) {
      return true;
    }
  }
  return false;
}

double consistency_reward(const FactSet& claimed, const FactSet& evidence) {
  std::size_t supported = 0;
  for (const auto& [text, f] : claimed) {
    for (const auto& [etext, e] : evidence) {
      if (facts_conflict(f, e)) return 0.0;
    }
    if (fact_supported(f, evidence)) ++supported;
  }
  return static_cast<double>(supported) / static_cast<double>(std::max<std::size_t>(1, claimed.size()));
}

RewardWeights schedule_weights(std::int64_t step, std::int64_t total_steps, const ScheduleConfig& cfg) {
  if (total_steps < 1) throw std::invalid_argument("total_steps must be >= 1");
  step = std::max<std::int64_t>(step, 0);
  const double raw = cfg.warmup_fraction * static_cast<double>(total_steps);
  const double nearest = std::round(raw);
  // Guard ceil() against products like 0.3 * 10 = 3.0000000000000004.
  const double warmup_d = std::fabs(raw - nearest) <= 1e-9 * std::max(1.0, raw) ? nearest : std::ceil(raw);
  const auto warmup = std::max<std::int64_t>(1, static_cast<std::int64_t>(warmup_d));
  if (step >= warmup) return cfg.end;
  const double alpha = static_cast<double>(step) / static_cast<double>(warmup);
  const auto s = cfg.start.as_array();
  const auto e = cfg.end.as_array();
  std::array<double, 6> w{};
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = (1.0 - alpha) * s[i] + alpha * e[i];
  return RewardWeights::from_array(w);
}

// Shewchuk/Neumaier exact partials with a correctly rounded final sum.
double exact_sum(std::span<const double> values) {
  std::vector<double> partials;
  partials.reserve(values.size());
  for (double x : values) {
    std::size_t i = 0;
    for (double y : partials) {
      if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }
  if (partials.empty()) return 0.0;
  std::size_t n = partials.size();
  double hi = partials[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

double exact_dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("exact_dot: length mismatch");
  std::vector<double> terms;
  terms.reserve(2 * a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double p = a[i] * b[i];
    terms.push_back(p);
    terms.push_back(std::fma(a[i], b[i], -p));  // exact product error
  }
  return exact_sum(terms);
}

double weighted_total(const std::array<double, 6>& components, const RewardWeights& weights) {
  const auto w = weights.as_array();
  return exact_dot(w, components);
}

RewardBreakdown total_reward(std::string_view raw_text, const ParseResult& parsed, const RewardItem& item,
                             const RewardWeights& weights, const RewardConfig& cfg) {
  RewardBreakdown out;
  out.weights = weights;
  out.fmt = format_reward(parsed.diagnostics);

  if (parsed.response) {
    const StructuredResponse& r = *parsed.response;
    out.acc = accuracy_reward(r.answer, item.gold, item.policy);
    out.vkey = vkey_reward(item.visual_keys, r.description, cfg.thresholds);
    out.tkey = tkey_reward(item.textual_keys, r.think, cfg.thresholds);
    if (cfg.repetition_scope == RepetitionScope::kJoint) {
      out.rep = repetition_reward(r.description + " " + r.think, cfg.ngram_order);
    } else {
      out.rep = 0.5 * (repetition_reward(r.description, cfg.ngram_order) +
                       repetition_reward(r.think, cfg.ngram_order));
    }
    std::vector<Fact> phrases = cfg.lexicon.phrases();
    append_unique(phrases, item.visual_keys);
    append_unique(phrases, item.textual_keys);
    const std::array<std::string_view, 2> claim_segments = {r.think, r.answer};
    const std::array<std::string_view, 2> evidence_segments = {r.description, item.question};
    const FactSet claimed = extract_facts(claim_segments, phrases);
    const FactSet evidence = extract_facts(evidence_segments, phrases);
    out.cons = consistency_reward(claimed, evidence);
  } else {
    if (auto answer = extract_answer_span(raw_text)) out.acc = accuracy_reward(*answer, item.gold, item.policy);
    out.rep = repetition_reward(raw_text, cfg.ngram_order);
  }
  out.total = weighted_total(out.components(), weights);
  return out;
}

}  // namespace groundrl
