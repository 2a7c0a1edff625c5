#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "groundrl/reward.hpp"

namespace groundrl {

struct ClipConfig {
  double eps_low = 0.2;
  double eps_high = 0.28;

  /// Throws ConfigError unless both are positive (infinity disables a side).
  void validate() const;

  static ClipConfig unclipped() {
    return {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  }
};

struct LengthShapingConfig {
  std::size_t soft_limit = 4096;
  std::size_t hard_limit = 8192;

  void validate() const;
};

/// 0 up to the soft limit, linear down to -1 at the hard limit, -1 beyond.
double overlong_shaping(std::size_t length, const LengthShapingConfig& cfg);

struct Rollout {
  int prompt_id = 0;
  std::vector<int> token_ids;
  std::vector<double> old_logprobs;
  RewardBreakdown reward;
  bool correct = false;
  double shaping = 0.0;  // overlong penalty added to the scalar reward

  double scalar_reward() const { return reward.total + shaping; }
};

struct RolloutGroup {
  int prompt_id = 0;
  std::vector<Rollout> rollouts;
  std::vector<double> advantages;  // one per rollout, shared by all its tokens
};

/// (r - mean) / population std; all zeros when the rewards are constant.
std::vector<double> group_advantages(std::span<const double> rewards);

/// Fills `group.advantages` from each rollout's scalar reward.
void assign_advantages(RolloutGroup& group);

enum class SamplingMode {
  kCorrectness,  // drop groups that are all correct or all wrong
  kVariance,     // drop groups whose scalar rewards are all equal
};

std::string_view to_string(SamplingMode mode);

bool is_trivial_group(const RolloutGroup& group, SamplingMode mode);
std::vector<RolloutGroup> dynamic_sampling_filter(std::vector<RolloutGroup> groups, SamplingMode mode);

inline constexpr double kLogRatioClamp = 30.0;

/// exp(new - old) with the exponent clamped to [-30, 30].
double token_ratio(double new_logprob, double old_logprob);

struct TokenStat {
  std::size_t group = 0;
  std::size_t rollout = 0;
  std::size_t position = 0;
  double ratio = 1.0;
  double advantage = 0.0;
  double contribution = 0.0;   // min(r A, clip(r) A), before 1/N
  double grad_logprob = 0.0;   // dJ / d new_logprob, including 1/N
  bool clipped = false;        // the clipped branch was strictly smaller
};

struct ObjectiveResult {
  double objective = 0.0;
  bool empty_batch = false;
  std::size_t token_count = 0;
  std::size_t clipped_count = 0;
  std::vector<TokenStat> tokens;

  double clipped_fraction() const {
    return token_count == 0 ? 0.0 : static_cast<double>(clipped_count) / static_cast<double>(token_count);
  }
};

/// new_logprobs[g][i][t] for token t of rollout i in group g.
using LogprobTable = std::vector<std::vector<std::vector<double>>>;

/// Token-level clipped surrogate averaged over every token of every kept
/// rollout. Groups must carry advantages. An empty batch gives J = 0 and
/// sets `empty_batch`.
ObjectiveResult dapo_objective(std::span<const RolloutGroup> groups, const LogprobTable& new_logprobs,
                               const ClipConfig& clip);

/// Negative log-likelihood of the full target sequence.
double sft_loss(std::span<const double> target_logprobs);

}  // namespace groundrl
