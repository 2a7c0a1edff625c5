#include "groundrl/toy_policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "groundrl/errors.hpp"

namespace groundrl {

ToyPolicy::ToyPolicy(std::size_t contexts, std::size_t positions, std::size_t vocab, double temperature)
    : contexts_(contexts), positions_(positions), vocab_(vocab), temperature_(temperature) {
  if (contexts == 0 || positions == 0) throw ConfigError("toy policy needs at least one context and position");
  if (vocab == 0 || vocab > kMaxVocab) throw ConfigError("toy policy vocabulary must hold 1..256 tokens");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be positive");
  logits_.assign(contexts * positions * vocab, 0.0);
}

std::size_t ToyPolicy::offset(std::size_t context, std::size_t position) const {
  if (context >= contexts_ || position >= positions_) throw std::out_of_range("toy policy index out of range");
  return (context * positions_ + position) * vocab_;
}

void ToyPolicy::set_allowed(std::size_t position, std::span<const int> tokens) {
  if (position >= positions_) throw std::out_of_range("toy policy position out of range");
  if (allowed_.empty()) allowed_.resize(positions_);
  allowed_[position].clear();
  if (tokens.empty()) return;
  allowed_[position].assign(vocab_, 0);
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_) throw std::out_of_range("token outside vocabulary");
    allowed_[position][static_cast<std::size_t>(t)] = 1;
  }
}

bool ToyPolicy::allowed(std::size_t position, int token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= vocab_) return false;
  if (allowed_.empty() || allowed_[position].empty()) return true;
  return allowed_[position][static_cast<std::size_t>(token)] != 0;
}

std::vector<double> ToyPolicy::probabilities(std::size_t context, std::size_t position) const {
  const double* z = logits_.data() + offset(context, position);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < vocab_; ++v) {
    if (allowed(position, static_cast<int>(v))) top = std::max(top, z[v]);
  }
  std::vector<double> p(vocab_, 0.0);
  double sum = 0.0;
  for (std::size_t v = 0; v < vocab_; ++v) {
    if (!allowed(position, static_cast<int>(v))) continue;
    p[v] = std::exp((z[v] - top) / temperature_);
    sum += p[v];
  }
  for (double& x : p) x /= sum;
  return p;
}

double ToyPolicy::logprob(std::size_t context, std::size_t position, int token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= vocab_) throw std::out_of_range("token outside vocabulary");
  if (!allowed(position, token)) return -std::numeric_limits<double>::infinity();
  const double* z = logits_.data() + offset(context, position);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < vocab_; ++v) {
    if (allowed(position, static_cast<int>(v))) top = std::max(top, z[v]);
  }
  double sum = 0.0;
  for (std::size_t v = 0; v < vocab_; ++v) {
    if (allowed(position, static_cast<int>(v))) sum += std::exp((z[v] - top) / temperature_);
  }
  return (z[token] - top) / temperature_ - std::log(sum);
}

std::vector<double> ToyPolicy::sequence_logprobs(std::size_t context, std::span<const int> tokens) const {
  if (tokens.size() > positions_) throw std::invalid_argument("sequence longer than the policy");
  std::vector<double> out;
  out.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) out.push_back(logprob(context, t, tokens[t]));
  return out;
}

std::vector<int> ToyPolicy::sample(std::size_t context, std::mt19937_64& rng) const {
  std::vector<int> tokens(positions_);
  for (std::size_t t = 0; t < positions_; ++t) {
    const std::vector<double> p = probabilities(context, t);
    const double u = unit_uniform(rng);
    double acc = 0.0;
    std::size_t pick = vocab_ - 1;
    while (pick > 0 && p[pick] == 0.0) --pick;  // fallback when rounding leaves u above the total
    for (std::size_t v = 0; v < vocab_; ++v) {
      acc += p[v];
      if (u < acc) {
        pick = v;
        break;
      }
    }
    tokens[t] = static_cast<int>(pick);
  }
  return tokens;
}

void ToyPolicy::add_logprob_gradient(std::size_t context, std::size_t position, int token, double scale,
                                     std::vector<double>& grad) const {
  if (grad.size() != logits_.size()) throw std::invalid_argument("gradient buffer has the wrong size");
  const std::vector<double> p = probabilities(context, position);
  double* g = grad.data() + offset(context, position);
  const double k = scale / temperature_;
  if (!allowed(position, token)) return;
  for (std::size_t v = 0; v < vocab_; ++v) g[v] -= k * p[v];
  g[token] += k;
}

LogprobTable policy_logprobs(const ToyPolicy& policy, std::span<const RolloutGroup> groups) {
  LogprobTable table(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto context = static_cast<std::size_t>(groups[g].prompt_id);
    for (const Rollout& r : groups[g].rollouts) table[g].push_back(policy.sequence_logprobs(context, r.token_ids));
  }
  return table;
}

std::vector<double> objective_gradient(const ToyPolicy& policy, std::span<const RolloutGroup> groups,
                                       const ObjectiveResult& result) {
  std::vector<double> grad(policy.parameters().size(), 0.0);
  for (const TokenStat& s : result.tokens) {
    if (s.grad_logprob == 0.0) continue;
    const RolloutGroup& group = groups[s.group];
    const int token = group.rollouts[s.rollout].token_ids[s.position];
    policy.add_logprob_gradient(static_cast<std::size_t>(group.prompt_id), s.position, token, s.grad_logprob, grad);
  }
  return grad;
}

}  // namespace groundrl
