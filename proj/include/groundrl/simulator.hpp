#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "groundrl/dapo.hpp"
#include "groundrl/reward.hpp"
#include "groundrl/toy_policy.hpp"

namespace groundrl {

struct WorldConfig {
  std::size_t items = 32;
  std::size_t choices = 4;
  std::size_t visual_keys = 2;
  std::size_t textual_keys = 2;
  std::size_t distractors = 2;  // extra numbers in the question that are not keys
  std::size_t description_slots = 3;
  std::size_t think_slots = 3;
  bool template_forced = false;  // pin tag slots to their tags and the answer slot to choice letters

  void validate() const;
};

/// A synthetic grounded-reasoning task small enough for a tabular policy.
///
/// Every response is a fixed-length token sequence laid out as
/// `<description> d.. </description> <think> t.. </think> <answer> a </answer>`,
/// decoded by joining token strings with spaces and scored by the real reward engine.
class KeyFactWorld {
 public:
  struct Item {
    std::string question;
    std::vector<std::string> visual_keys;
    std::vector<std::string> textual_keys;
    int answer_token = 0;
    RewardItem reward_item;
  };

  static KeyFactWorld generate(const WorldConfig& cfg, std::uint64_t seed);

  const WorldConfig& config() const { return cfg_; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  const std::vector<Item>& items() const { return items_; }
  std::size_t sequence_length() const { return layout_.size(); }

  std::string decode(std::span<const int> tokens) const;

  /// Allowed tokens per position (empty = unrestricted).
  std::vector<std::vector<int>> position_masks() const;

  /// A cold-start target: correct tags, random content words and a random choice.
  std::vector<int> sft_target(std::size_t item, std::mt19937_64& rng) const;

 private:
  enum class Slot { kTag, kDescription, kThink, kAnswer };

  WorldConfig cfg_;
  std::vector<std::string> vocab_;
  std::vector<Slot> layout_;
  std::vector<int> layout_tag_;  // tag token for kTag slots, -1 otherwise
  std::vector<int> content_tokens_;
  std::vector<int> choice_tokens_;
  std::vector<Item> items_;
};

struct SimulationConfig {
  std::size_t updates = 500;
  std::size_t groups_per_update = 16;
  std::size_t group_size = 8;
  std::size_t inner_epochs = 2;
  double learning_rate = 40.0;
  double temperature = 1.0;
  ClipConfig clip;
  SamplingMode sampling = SamplingMode::kCorrectness;
  std::size_t max_resamples = 64;
  LengthShapingConfig shaping{64, 128};
  std::size_t sft_steps = 40;
  std::size_t sft_targets_per_item = 4;
  double sft_learning_rate = 1.0;
  std::size_t eval_samples = 64;
  RewardConfig reward;
  bool no_vkey = false;
  bool no_tkey = false;
  bool no_cons = false;
  std::uint64_t seed = 1;

  void validate() const;
  /// The reward schedule with ablated components zeroed at both ends.
  ScheduleConfig effective_schedule() const;
};

struct UpdateRecord {
  std::size_t update = 0;
  double objective = 0.0;
  double accuracy = 0.0;
  double visual_coverage = 0.0;
  double textual_coverage = 0.0;
  double coverage = 0.0;
  double consistency = 0.0;
  double mean_reward = 0.0;
  double clipped_fraction = 0.0;
  std::size_t kept_groups = 0;
  std::size_t sampled_groups = 0;
  std::size_t resamples = 0;
};

struct EvaluationSummary {
  double accuracy = 0.0;
  double visual_coverage = 0.0;
  double textual_coverage = 0.0;
  double coverage = 0.0;
  double consistency = 0.0;
  double format = 0.0;
  double total = 0.0;  // under the unablated end-of-schedule weights
};

/// One learning-curve line.
nlohmann::ordered_json to_json(const UpdateRecord& r);
nlohmann::ordered_json to_json(const EvaluationSummary& s);

struct SimulationResult {
  std::vector<UpdateRecord> curve;
  EvaluationSummary initial;  // after the cold start, before any update
  EvaluationSummary final;
};

/// Cold-start SFT followed by DAPO updates on the toy policy. Deterministic
/// for a fixed seed. Throws RuntimeAbort when a batch stays fully filtered
/// after `max_resamples` fresh draws. `on_update`, when set, sees each record
/// as soon as it is produced.
SimulationResult simulate_training(const KeyFactWorld& world, const SimulationConfig& cfg,
                                   const std::function<void(const UpdateRecord&)>& on_update = {});

/// Sampled evaluation of a policy on every item of the world.
EvaluationSummary evaluate_policy(const KeyFactWorld& world, const ToyPolicy& policy, const SimulationConfig& cfg,
                                  std::mt19937_64& rng);

}  // namespace groundrl
