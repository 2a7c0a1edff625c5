#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "groundrl/fact_normalizer.hpp"
#include "groundrl/template_parser.hpp"

namespace groundrl {

enum class MatchPolicy { kNormalizedExact, kNumeric, kChoiceLetter };

std::optional<MatchPolicy> parse_match_policy(std::string_view name);
std::string_view to_string(MatchPolicy policy);

struct CoverageThresholds {
  double tau_lo = 0.4;
  double tau_hi = 0.8;

  /// Throws ConfigError unless 0 <= tau_lo < tau_hi <= 1.
  void validate() const;
};

/// Per-component weights, in the fixed order acc, fmt, vkey, tkey, rep, cons.
struct RewardWeights {
  double acc = 1.0;
  double fmt = 1.0;
  double vkey = 1.0;
  double tkey = 1.0;
  double rep = 1.0;
  double cons = 1.0;

  std::array<double, 6> as_array() const { return {acc, fmt, vkey, tkey, rep, cons}; }
  static RewardWeights from_array(const std::array<double, 6>& w) { return {w[0], w[1], w[2], w[3], w[4], w[5]}; }
  void validate() const;

  bool operator==(const RewardWeights&) const = default;
};

inline constexpr std::array<std::string_view, 6> kComponentNames = {"acc", "fmt", "vkey", "tkey", "rep", "cons"};

/// Linear warmup from `start` to `end` over the first ceil(warmup_fraction * total) steps.
struct ScheduleConfig {
  RewardWeights start{0.5, 1.0, 1.0, 1.0, 1.0, 1.0};
  RewardWeights end{1.0, 1.0, 0.5, 0.5, 1.0, 0.5};
  double warmup_fraction = 0.5;

  void validate() const;
};

enum class RepetitionScope {
  kJoint,     // description and think concatenated
  kSeparate,  // mean of the two segment penalties
};

struct RewardConfig {
  CoverageThresholds thresholds;
  ScheduleConfig schedule;
  int ngram_order = 3;
  RepetitionScope repetition_scope = RepetitionScope::kJoint;
  Lexicon lexicon;

  void validate() const;
};

struct RewardBreakdown {
  double acc = 0.0;
  double fmt = 0.0;
  double vkey = 0.0;
  double tkey = 0.0;
  double rep = 0.0;
  double cons = 0.0;
  RewardWeights weights;
  double total = 0.0;

  std::array<double, 6> components() const { return {acc, fmt, vkey, tkey, rep, cons}; }
};

/// Everything the scorer needs to know about one prompt.
struct RewardItem {
  std::string gold;
  MatchPolicy policy = MatchPolicy::kNormalizedExact;
  FactSet visual_keys;
  FactSet textual_keys;
  std::string question;
};

/// Answer grading under one of three policies. Numeric answers match within
/// relative tolerance 1e-4; an answer without exactly one number scores 0.
double accuracy_reward(std::string_view answer, std::string_view gold, MatchPolicy policy);

/// The single number an answer states, if it states exactly one (`a/b` counts as one).
std::optional<double> parse_numeric_answer(std::string_view text);

/// Choice letter such as `B`, `(b)`, `B. 12 cm` or `option b`, lowercased.
std::optional<char> extract_choice_letter(std::string_view text);

/// -(1 - distinct/total) over whitespace-token n-grams; 0 when shorter than n.
double repetition_reward(std::string_view text, int n);

struct Coverage {
  std::size_t matched = 0;
  std::size_t total = 0;

  /// Recall; an empty key set is fully covered.
  double value() const { return total == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(total); }
};

Coverage coverage(const FactSet& keys, const NormalizedText& segment);
double coverage(const FactSet& keys, std::string_view segment);

/// Three-level step function: 1 above tau_hi, 0.5 in [tau_lo, tau_hi), else 0.
double discretize_coverage(double cov, const CoverageThresholds& t);

double vkey_reward(const FactSet& visual_keys, std::string_view description, const CoverageThresholds& t);
double tkey_reward(const FactSet& textual_keys, std::string_view think, const CoverageThresholds& t);

/// Clear conflict: same subject with numeric values differing beyond 1e-9
/// relative (units equal or absent), or same attribute with a different category.
bool facts_conflict(const Fact& a, const Fact& b);

/// Claimed fact backed by some evidence fact.
bool fact_supported(const Fact& claimed, const FactSet& evidence);

/// 0 on any conflict, else |supported claims| / max(1, |claims|).
double consistency_reward(const FactSet& claimed, const FactSet& evidence);

RewardWeights schedule_weights(std::int64_t step, std::int64_t total_steps, const ScheduleConfig& cfg);

double exact_sum(std::span<const double> values);
/// Correctly rounded sum of a_i * b_i.
double exact_dot(std::span<const double> a, std::span<const double> b);

/// Correctly rounded sum of w_i * r_i.
double weighted_total(const std::array<double, 6>& components, const RewardWeights& weights);

/// Full composite reward for one raw rollout.
///
/// Malformed responses keep accuracy on the last extractable answer span but
/// get zero visual, textual and consistency rewards.
RewardBreakdown total_reward(std::string_view raw_text, const ParseResult& parsed, const RewardItem& item,
                             const RewardWeights& weights, const RewardConfig& cfg);

inline RewardBreakdown score_rollout(std::string_view raw_text, const RewardItem& item, const RewardWeights& weights,
                                     const RewardConfig& cfg) {
  return total_reward(raw_text, parse_structured(raw_text), item, weights, cfg);
}

}  // namespace groundrl
