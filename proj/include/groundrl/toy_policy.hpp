#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "groundrl/dapo.hpp"

namespace groundrl {

/// Tabular softmax policy: one categorical distribution per (context, position).
class ToyPolicy {
 public:
  static constexpr std::size_t kMaxVocab = 256;

  ToyPolicy(std::size_t contexts, std::size_t positions, std::size_t vocab, double temperature = 1.0);

  std::size_t contexts() const { return contexts_; }
  std::size_t positions() const { return positions_; }
  std::size_t vocab() const { return vocab_; }
  double temperature() const { return temperature_; }

  /// Restricts `position` to the listed tokens in every context; an empty
  /// list lifts the restriction.
  void set_allowed(std::size_t position, std::span<const int> tokens);
  bool allowed(std::size_t position, int token) const;

  std::vector<double>& parameters() { return logits_; }
  const std::vector<double>& parameters() const { return logits_; }
  std::size_t offset(std::size_t context, std::size_t position) const;

  std::vector<double> probabilities(std::size_t context, std::size_t position) const;
  double logprob(std::size_t context, std::size_t position, int token) const;
  std::vector<double> sequence_logprobs(std::size_t context, std::span<const int> tokens) const;

  std::vector<int> sample(std::size_t context, std::mt19937_64& rng) const;

  /// grad += scale * d logprob(context, position, token) / d logits.
  void add_logprob_gradient(std::size_t context, std::size_t position, int token, double scale,
                            std::vector<double>& grad) const;

 private:
  std::size_t contexts_;
  std::size_t positions_;
  std::size_t vocab_;
  double temperature_;
  std::vector<double> logits_;
  std::vector<std::vector<char>> allowed_;  // per position, empty = all tokens
};

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Current log-probs of every rollout token, laid out for dapo_objective.
/// Each group's prompt_id is its policy context; token t sits at position t.
LogprobTable policy_logprobs(const ToyPolicy& policy, std::span<const RolloutGroup> groups);

/// Gradient of the objective with respect to the policy logits.
std::vector<double> objective_gradient(const ToyPolicy& policy, std::span<const RolloutGroup> groups,
                                       const ObjectiveResult& result);

}  // namespace groundrl
