#include "groundrl/dapo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "groundrl/errors.hpp"

namespace groundrl {

void ClipConfig::validate() const {
  if (!(eps_low > 0.0) || !(eps_high > 0.0)) throw ConfigError("clip eps_low and eps_high must be positive");
}

void LengthShapingConfig::validate() const {
  if (soft_limit == 0 || soft_limit > hard_limit) {
    throw ConfigError("length shaping requires 0 < soft_limit <= hard_limit");
  }
}

double overlong_shaping(std::size_t length, const LengthShapingConfig& cfg) {
  if (length <= cfg.soft_limit) return 0.0;
  if (length >= cfg.hard_limit) return -1.0;
  const double span = static_cast<double>(cfg.hard_limit - cfg.soft_limit);
  return -static_cast<double>(length - cfg.soft_limit) / span;
}

std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("group_advantages needs at least two rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std = std::sqrt(var / n);

  std::vector<double> adv(rewards.size(), 0.0);
  const bool constant = std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; });
  if (constant || !(std > 0.0) || !std::isfinite(std)) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / std;
  return adv;
}

void assign_advantages(RolloutGroup& group) {
  std::vector<double> rewards;
  rewards.reserve(group.rollouts.size());
  for (const Rollout& r : group.rollouts) rewards.push_back(r.scalar_reward());
  group.advantages = group_advantages(rewards);
}

std::string_view to_string(SamplingMode mode) {
  return mode == SamplingMode::kCorrectness ? "correctness" : "variance";
}

bool is_trivial_group(const RolloutGroup& group, SamplingMode mode) {
  if (group.rollouts.empty()) return true;
  if (mode == SamplingMode::kCorrectness) {
    const bool first = group.rollouts.front().correct;
    return std::all_of(group.rollouts.begin(), group.rollouts.end(),
                       [&](const Rollout& r) { return r.correct == first; });
  }
  const double first = group.rollouts.front().scalar_reward();
  return std::all_of(group.rollouts.begin(), group.rollouts.end(),
                     [&](const Rollout& r) { return r.scalar_reward() == first; });
}

std::vector<RolloutGroup> dynamic_sampling_filter(std::vector<RolloutGroup> groups, SamplingMode mode) {
  std::vector<RolloutGroup> kept;
  kept.reserve(groups.size());
  for (RolloutGroup& g : groups) {
    if (!is_trivial_group(g, mode)) kept.push_back(std::move(g));
  }
  return kept;
}

double token_ratio(double new_logprob, double old_logprob) {
  return std::exp(std::clamp(new_logprob - old_logprob, -kLogRatioClamp, kLogRatioClamp));
}

ObjectiveResult dapo_objective(std::span<const RolloutGroup> groups, const LogprobTable& new_logprobs,
                               const ClipConfig& clip) {
  if (new_logprobs.size() != groups.size()) throw std::invalid_argument("log-prob table does not match groups");
  ObjectiveResult out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const RolloutGroup& group = groups[g];
    if (group.advantages.size() != group.rollouts.size() || new_logprobs[g].size() != group.rollouts.size()) {
      throw std::invalid_argument("group " + std::to_string(g) + " lacks advantages or log-probs");
    }
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
      if (new_logprobs[g][i].size() != group.rollouts[i].old_logprobs.size()) {
        throw std::invalid_argument("rollout log-prob length mismatch");
      }
      out.token_count += group.rollouts[i].old_logprobs.size();
    }
  }
  if (out.token_count == 0) {
    out.empty_batch = true;
    return out;
  }

  const double inv_n = 1.0 / static_cast<double>(out.token_count);
  const double lo = 1.0 - clip.eps_low;
  const double hi = 1.0 + clip.eps_high;
  out.tokens.reserve(out.token_count);
  double sum = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const RolloutGroup& group = groups[g];
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
      const Rollout& rollout = group.rollouts[i];
      const double a = group.advantages[i];
      for (std::size_t t = 0; t < rollout.old_logprobs.size(); ++t) {
        const double delta = new_logprobs[g][i][t] - rollout.old_logprobs[t];
        TokenStat s;
        s.group = g;
        s.rollout = i;
        s.position = t;
        s.advantage = a;
        s.ratio = token_ratio(new_logprobs[g][i][t], rollout.old_logprobs[t]);
        const double plain = s.ratio * a;
        const double clipped = std::clamp(s.ratio, lo, hi) * a;
        s.clipped = clipped < plain;
        s.contribution = s.clipped ? clipped : plain;
        const bool saturated = std::fabs(delta) > kLogRatioClamp;
        s.grad_logprob = s.clipped || saturated ? 0.0 : plain * inv_n;
        if (s.clipped) ++out.clipped_count;
        sum += s.contribution;
        out.tokens.push_back(s);
      }
    }
  }
  out.objective = sum * inv_n;
  return out;
}

double sft_loss(std::span<const double> target_logprobs) {
  if (target_logprobs.empty()) throw std::invalid_argument("sft_loss needs at least one token");
  double loss = 0.0;
  for (double lp : target_logprobs) loss -= lp;
  return loss;
}

}  // namespace groundrl
