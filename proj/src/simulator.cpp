#include "groundrl/simulator.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <string>

#include "groundrl/errors.hpp"

namespace groundrl {

namespace {

constexpr std::array<std::string_view, 6> kTagTokens = {"<description>", "</description>", "<think>",
                                                         "</think>",      "<answer>",      "</answer>"};
constexpr std::array<std::string_view, 12> kVisualWords = {"circle", "triangle", "square", "red",   "blue",  "green",
                                                            "chord",  "arc",      "shaded", "label", "point", "line"};
constexpr std::array<std::string_view, 8> kNumbers = {"3", "5", "7", "12", "15", "20", "25", "40"};
constexpr std::array<std::string_view, 2> kFillers = {"figure", "so"};
constexpr std::array<std::string_view, 8> kChoices = {"a", "b", "c", "d", "e", "f", "g", "h"};

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(n)));
}

// First k entries of a seeded Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> choose_distinct(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + pick(rng, n - i)]);
  idx.resize(k);
  return idx;
}

struct RolloutMetrics {
  double accuracy = 0.0;
  double visual = 0.0;
  double textual = 0.0;
  double consistency = 0.0;
  double format = 0.0;
  double total = 0.0;
  std::size_t count = 0;

  void add(const RewardBreakdown& b, const ParseResult& parsed, const KeyFactWorld::Item& item) {
    accuracy += b.acc;
    format += b.fmt;
    consistency += b.cons;
    total += b.total;
    if (parsed.response) {
      visual += coverage(item.reward_item.visual_keys, parsed.response->description);
      textual += coverage(item.reward_item.textual_keys, parsed.response->think);
    }
    ++count;
  }

  double mean(double sum) const { return count == 0 ? 0.0 : sum / static_cast<double>(count); }
};

}  // namespace

void WorldConfig::validate() const {
  if (items == 0) throw ConfigError("world needs at least one item");
  if (choices == 0 || choices > kChoices.size()) throw ConfigError("world choices must lie in 1..8");
  if (visual_keys == 0 || visual_keys > kVisualWords.size()) throw ConfigError("world visual_keys must lie in 1..12");
  if (textual_keys == 0 || textual_keys + distractors > kNumbers.size()) {
    throw ConfigError("world textual_keys + distractors must lie in 1..8");
  }
  if (description_slots == 0 || think_slots == 0) throw ConfigError("world needs description and think slots");
}

KeyFactWorld KeyFactWorld::generate(const WorldConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  KeyFactWorld w;
  w.cfg_ = cfg;
  for (auto t : kTagTokens) w.vocab_.emplace_back(t);
  auto add_tokens = [&](auto const& words, std::vector<int>* into, std::size_t limit) {
    for (std::size_t i = 0; i < limit; ++i) {
      if (into) into->push_back(static_cast<int>(w.vocab_.size()));
      w.vocab_.emplace_back(words[i]);
    }
  };
  add_tokens(kVisualWords, &w.content_tokens_, kVisualWords.size());
  add_tokens(kNumbers, &w.content_tokens_, kNumbers.size());
  add_tokens(kFillers, &w.content_tokens_, kFillers.size());
  add_tokens(kChoices, &w.choice_tokens_, cfg.choices);

  auto push = [&](Slot s, int tag) {
    w.layout_.push_back(s);
    w.layout_tag_.push_back(tag);
  };
  push(Slot::kTag, 0);
  for (std::size_t i = 0; i < cfg.description_slots; ++i) push(Slot::kDescription, -1);
  push(Slot::kTag, 1);
  push(Slot::kTag, 2);
  for (std::size_t i = 0; i < cfg.think_slots; ++i) push(Slot::kThink, -1);
  push(Slot::kTag, 3);
  push(Slot::kTag, 4);
  push(Slot::kAnswer, -1);
  push(Slot::kTag, 5);

  std::mt19937_64 rng(seed);
  for (std::size_t n = 0; n < cfg.items; ++n) {
    Item item;
    for (std::size_t v : choose_distinct(rng, kVisualWords.size(), cfg.visual_keys)) {
      item.visual_keys.emplace_back(kVisualWords[v]);
    }
    const auto numbers = choose_distinct(rng, kNumbers.size(), cfg.textual_keys + cfg.distractors);
    for (std::size_t i = 0; i < cfg.textual_keys; ++i) item.textual_keys.emplace_back(kNumbers[numbers[i]]);
    std::vector<std::size_t> shown = numbers;
    std::sort(shown.begin(), shown.end());
    item.question = "which option fits the figure with values";
    for (std::size_t v : shown) item.question += " " + std::string(kNumbers[v]);
    item.answer_token = w.choice_tokens_[pick(rng, cfg.choices)];

    item.reward_item.gold = w.vocab_[static_cast<std::size_t>(item.answer_token)];
    item.reward_item.policy = MatchPolicy::kChoiceLetter;
    item.reward_item.question = item.question;
    for (const auto& k : item.visual_keys) item.reward_item.visual_keys.insert(std::string_view(k));
    for (const auto& k : item.textual_keys) item.reward_item.textual_keys.insert(std::string_view(k));
    w.items_.push_back(std::move(item));
  }
  return w;
}

std::string KeyFactWorld::decode(std::span<const int> tokens) const {
  std::string out;
  for (int t : tokens) {
    if (!out.empty()) out += ' ';
    out += vocab_.at(static_cast<std::size_t>(t));
  }
  return out;
}

std::vector<std::vector<int>> KeyFactWorld::position_masks() const {
  std::vector<std::vector<int>> masks(layout_.size());
  if (!cfg_.template_forced) return masks;
  for (std::size_t p = 0; p < layout_.size(); ++p) {
    switch (layout_[p]) {
      case Slot::kTag:
        masks[p] = {layout_tag_[p]};
        break;
      case Slot::kAnswer:
        masks[p] = choice_tokens_;
        break;
      default:
        masks[p] = content_tokens_;
    }
  }
  return masks;
}

std::vector<int> KeyFactWorld::sft_target(std::size_t /*item*/, std::mt19937_64& rng) const {
  std::vector<int> target(layout_.size());
  for (std::size_t p = 0; p < layout_.size(); ++p) {
    switch (layout_[p]) {
      case Slot::kTag:
        target[p] = layout_tag_[p];
        break;
      case Slot::kAnswer:
        target[p] = choice_tokens_[pick(rng, choice_tokens_.size())];
        break;
      default:
        target[p] = content_tokens_[pick(rng, content_tokens_.size())];
    }
  }
  return target;
}

void SimulationConfig::validate() const {
  if (groups_per_update == 0) throw ConfigError("groups_per_update must be at least 1");
  if (group_size < 2) throw ConfigError("group_size must be at least 2");
  if (inner_epochs == 0) throw ConfigError("inner_epochs must be at least 1");
  if (!(learning_rate > 0.0) || !(sft_learning_rate >= 0.0)) throw ConfigError("learning rates must be positive");
  if (eval_samples == 0) throw ConfigError("eval_samples must be at least 1");
  clip.validate();
  shaping.validate();
  reward.validate();
}

ScheduleConfig SimulationConfig::effective_schedule() const {
  ScheduleConfig s = reward.schedule;
  for (RewardWeights* w : {&s.start, &s.end}) {
    if (no_vkey) w->vkey = 0.0;
    if (no_tkey) w->tkey = 0.0;
    if (no_cons) w->cons = 0.0;
  }
  return s;
}

EvaluationSummary evaluate_policy(const KeyFactWorld& world, const ToyPolicy& policy, const SimulationConfig& cfg,
                                  std::mt19937_64& rng) {
  RolloutMetrics m;
  const RewardWeights weights = cfg.reward.schedule.end;
  for (std::size_t i = 0; i < world.items().size(); ++i) {
    const auto& item = world.items()[i];
    for (std::size_t s = 0; s < cfg.eval_samples; ++s) {
      const std::vector<int> tokens = policy.sample(i, rng);
      const std::string text = world.decode(tokens);
      const ParseResult parsed = parse_structured(text);
      m.add(total_reward(text, parsed, item.reward_item, weights, cfg.reward), parsed, item);
    }
  }
  EvaluationSummary out;
  out.accuracy = m.mean(m.accuracy);
  out.visual_coverage = m.mean(m.visual);
  out.textual_coverage = m.mean(m.textual);
  out.coverage = 0.5 * (out.visual_coverage + out.textual_coverage);
  out.consistency = m.mean(m.consistency);
  out.format = m.mean(m.format);
  out.total = m.mean(m.total);
  return out;
}

SimulationResult simulate_training(const KeyFactWorld& world, const SimulationConfig& cfg,
                                   const std::function<void(const UpdateRecord&)>& on_update) {
  cfg.validate();
  const std::size_t n_items = world.items().size();
  ToyPolicy policy(n_items, world.sequence_length(), world.vocabulary().size(), cfg.temperature);
  const auto masks = world.position_masks();
  for (std::size_t p = 0; p < masks.size(); ++p) policy.set_allowed(p, masks[p]);

  std::mt19937_64 rng(cfg.seed);
  std::mt19937_64 eval_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  auto& theta = policy.parameters();

  // Cold start: maximize the likelihood of template-shaped targets.
  for (std::size_t step = 0; step < cfg.sft_steps; ++step) {
    std::vector<double> grad(theta.size(), 0.0);
    const double scale = 1.0 / static_cast<double>(cfg.sft_targets_per_item);
    for (std::size_t i = 0; i < n_items; ++i) {
      for (std::size_t k = 0; k < cfg.sft_targets_per_item; ++k) {
        const std::vector<int> target = world.sft_target(i, rng);
        for (std::size_t t = 0; t < target.size(); ++t) policy.add_logprob_gradient(i, t, target[t], scale, grad);
      }
    }
    for (std::size_t j = 0; j < theta.size(); ++j) theta[j] += cfg.sft_learning_rate * grad[j];
  }

  SimulationResult result;
  result.initial = evaluate_policy(world, policy, cfg, eval_rng);
  const ScheduleConfig schedule = cfg.effective_schedule();

  for (std::size_t u = 0; u < cfg.updates; ++u) {
    const RewardWeights weights =
        schedule_weights(static_cast<std::int64_t>(u), static_cast<std::int64_t>(cfg.updates), schedule);
    UpdateRecord rec;
    rec.update = u;
    std::vector<RolloutGroup> kept;
    RolloutMetrics m;
    double reward_sum = 0.0;
    for (std::size_t attempt = 0;; ++attempt) {
      std::vector<RolloutGroup> groups;
      m = RolloutMetrics{};
      reward_sum = 0.0;
      for (std::size_t k = 0; k < cfg.groups_per_update; ++k) {
        RolloutGroup group;
        const std::size_t i = pick(rng, n_items);
        group.prompt_id = static_cast<int>(i);
        const auto& item = world.items()[i];
        for (std::size_t r = 0; r < cfg.group_size; ++r) {
          Rollout rollout;
          rollout.prompt_id = group.prompt_id;
          rollout.token_ids = policy.sample(i, rng);
          rollout.old_logprobs = policy.sequence_logprobs(i, rollout.token_ids);
          const std::string text = world.decode(rollout.token_ids);
          const ParseResult parsed = parse_structured(text);
          rollout.reward = total_reward(text, parsed, item.reward_item, weights, cfg.reward);
          rollout.correct = rollout.reward.acc == 1.0;
          rollout.shaping = overlong_shaping(rollout.token_ids.size(), cfg.shaping);
          m.add(rollout.reward, parsed, item);
          reward_sum += rollout.scalar_reward();
          group.rollouts.push_back(std::move(rollout));
        }
        groups.push_back(std::move(group));
      }
      kept = dynamic_sampling_filter(std::move(groups), cfg.sampling);
      if (!kept.empty()) break;
      if (attempt >= cfg.max_resamples) {
        throw RuntimeAbort("update " + std::to_string(u) + ": every group was filtered in " +
                           std::to_string(attempt + 1) + " consecutive batches (" + std::string(to_string(cfg.sampling)) +
                           " mode); no learning signal left");
      }
      ++rec.resamples;
    }
    for (RolloutGroup& g : kept) assign_advantages(g);

    ObjectiveResult obj;
    for (std::size_t epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
      obj = dapo_objective(kept, policy_logprobs(policy, kept), cfg.clip);
      const std::vector<double> grad = objective_gradient(policy, kept, obj);
      for (std::size_t j = 0; j < theta.size(); ++j) theta[j] += cfg.learning_rate * grad[j];
    }

    rec.objective = obj.objective;
    rec.clipped_fraction = obj.clipped_fraction();
    rec.kept_groups = kept.size();
    rec.sampled_groups = cfg.groups_per_update;
    rec.accuracy = m.mean(m.accuracy);
    rec.visual_coverage = m.mean(m.visual);
    rec.textual_coverage = m.mean(m.textual);
    rec.coverage = 0.5 * (rec.visual_coverage + rec.textual_coverage);
    rec.consistency = m.mean(m.consistency);
    rec.mean_reward = m.mean(reward_sum);
    if (on_update) on_update(rec);
    result.curve.push_back(rec);
  }

  result.final = evaluate_policy(world, policy, cfg, eval_rng);
  return result;
}

nlohmann::ordered_json to_json(const UpdateRecord& r) {
  return nlohmann::ordered_json{
      {"update", r.update},
      {"objective", r.objective},
      {"accuracy", r.accuracy},
      {"coverage", r.coverage},
      {"visual_coverage", r.visual_coverage},
      {"textual_coverage", r.textual_coverage},
      {"consistency", r.consistency},
      {"clipped_fraction", r.clipped_fraction},
      {"mean_reward", r.mean_reward},
      {"kept_groups", r.kept_groups},
      {"sampled_groups", r.sampled_groups},
      {"resamples", r.resamples},
  };
}

nlohmann::ordered_json to_json(const EvaluationSummary& s) {
  return nlohmann::ordered_json{
      {"accuracy", s.accuracy},
      {"coverage", s.coverage},
      {"visual_coverage", s.visual_coverage},
      {"textual_coverage", s.textual_coverage},
      {"consistency", s.consistency},
      {"format", s.format},
      {"total", s.total},
  };
}

}  // namespace groundrl
