#include <doctest.h>

#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "groundrl/dapo.hpp"
#include "groundrl/errors.hpp"
#include "groundrl/simulator.hpp"
#include "groundrl/toy_policy.hpp"

using namespace groundrl;

namespace {

RolloutGroup group_with(std::vector<bool> correct, std::vector<double> rewards = {}) {
  RolloutGroup g;
  for (std::size_t i = 0; i < correct.size(); ++i) {
    Rollout r;
    r.token_ids = {0};
    r.old_logprobs = {0.0};
    r.correct = correct[i];
    r.reward.total = rewards.empty() ? (correct[i] ? 1.0 : 0.0) : rewards[i];
    g.rollouts.push_back(r);
  }
  return g;
}

// One group holding a single one-token rollout with the given ratio and advantage.
double single_token_objective(double ratio, double advantage, const ClipConfig& clip) {
  RolloutGroup g = group_with({true});
  g.advantages = {advantage};
  const LogprobTable lp = {{{std::log(ratio)}}};
  return dapo_objective(std::span<const RolloutGroup>(&g, 1), lp, clip).objective;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double pop_std(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / v.size());
}

}  // namespace

TEST_CASE("group advantages examples") {
  const std::vector<double> r1 = {1, 0, 0, 1};
  const auto a1 = group_advantages(r1);
  CHECK(a1[0] == doctest::Approx(1.0));
  CHECK(a1[1] == doctest::Approx(-1.0));
  CHECK(a1[2] == doctest::Approx(-1.0));
  CHECK(a1[3] == doctest::Approx(1.0));
  const std::vector<double> same = {3, 3, 3};
  for (double a : group_advantages(same)) CHECK(a == 0.0);
  const std::vector<double> two = {2, 0};
  const auto a2 = group_advantages(two);
  CHECK(a2[0] == doctest::Approx(1.0));
  CHECK(a2[1] == doctest::Approx(-1.0));
  const std::vector<double> one = {1};
  CHECK_THROWS(group_advantages(one));
}

TEST_CASE("group advantages are standardized") {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> reward(-1.0, 6.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t g = 2 + rng() % 15;
    std::vector<double> r(g);
    for (double& x : r) x = trial % 2 == 0 ? reward(rng) : static_cast<double>(rng() % 3) * 0.5;
    if (std::all_of(r.begin(), r.end(), [&](double x) { return x == r[0]; })) r[0] += 1.0;
    const auto a = group_advantages(r);
    CHECK(std::fabs(mean_of(a)) < 1e-9);
    CHECK(std::fabs(pop_std(a) - 1.0) < 1e-5);
    CHECK(std::fabs(a[0]) <= std::sqrt(static_cast<double>(g - 1)) + 1e-12);
  }
}

TEST_CASE("dynamic sampling drops uniform groups") {
  CHECK(is_trivial_group(group_with({true, true, true, true}), SamplingMode::kCorrectness));
  CHECK(is_trivial_group(group_with({false, false, false, false}), SamplingMode::kCorrectness));
  CHECK_FALSE(is_trivial_group(group_with({true, false, true, false}), SamplingMode::kCorrectness));
  CHECK_FALSE(is_trivial_group(group_with({true, true}, {1.0, 2.0}), SamplingMode::kVariance));
  CHECK(is_trivial_group(group_with({true, false}, {1.5, 1.5}), SamplingMode::kVariance));

  for (std::size_t g = 2; g <= 8; ++g) {
    std::vector<RolloutGroup> groups;
    for (std::size_t mask = 0; mask < (1u << g); ++mask) {
      std::vector<bool> correct(g);
      for (std::size_t i = 0; i < g; ++i) correct[i] = (mask >> i) & 1u;
      groups.push_back(group_with(correct));
    }
    const std::size_t total = groups.size();
    const auto kept = dynamic_sampling_filter(std::move(groups), SamplingMode::kCorrectness);
    CHECK(total - kept.size() == 2);
  }
}

TEST_CASE("token ratio") {
  CHECK(token_ratio(-1.3, -1.3) == 1.0);
  CHECK(token_ratio(std::log(1.5) - 2.0, -2.0) == doctest::Approx(1.5));
  CHECK(token_ratio(1000.0, 0.0) == std::exp(30.0));
  CHECK(token_ratio(-1000.0, 0.0) == std::exp(-30.0));
  CHECK(std::isfinite(token_ratio(0.0, -1e300)));
}

TEST_CASE("clipped objective examples") {
  const ClipConfig clip;
  CHECK(single_token_objective(1.0, 0.7, clip) == doctest::Approx(0.7));
  CHECK(single_token_objective(1.5, 1.0, clip) == doctest::Approx(1.28));
  CHECK(single_token_objective(0.5, -1.0, clip) == doctest::Approx(-0.8));
  CHECK(single_token_objective(0.5, 1.0, clip) == doctest::Approx(0.5));
  CHECK(single_token_objective(1.5, -1.0, clip) == doctest::Approx(-1.5));

  const std::vector<RolloutGroup> none;
  const auto empty = dapo_objective(none, {}, clip);
  CHECK(empty.empty_batch);
  CHECK(empty.objective == 0.0);
  CHECK_THROWS_AS((ClipConfig{0.0, 0.2}.validate()), ConfigError);
}

TEST_CASE("objective normalizes by the total token count") {
  RolloutGroup g = group_with({true, false});
  g.rollouts[0].token_ids = {1, 2, 3};
  g.rollouts[0].old_logprobs = {0, 0, 0};
  g.advantages = {1.0, -1.0};
  const LogprobTable lp = {{{0, 0, 0}, {0}}};
  const auto res = dapo_objective(std::span<const RolloutGroup>(&g, 1), lp, ClipConfig{});
  CHECK(res.token_count == 4);
  CHECK(res.objective == doctest::Approx((3.0 - 1.0) / 4.0));
}

TEST_CASE("contributions stay inside the clipping sandwich and reduce without clipping") {
  std::mt19937_64 rng(73);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<RolloutGroup> groups(1 + rng() % 3);
    LogprobTable lp(groups.size());
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      auto& g = groups[gi];
      const std::size_t n = 2 + rng() % 4;
      for (std::size_t i = 0; i < n; ++i) {
        Rollout r;
        const std::size_t len = 1 + rng() % 6;
        r.token_ids.assign(len, 0);
        for (std::size_t t = 0; t < len; ++t) r.old_logprobs.push_back(-std::fabs(u(rng)));
        r.reward.total = u(rng);
        g.rollouts.push_back(r);
        lp[gi].emplace_back();
        for (double old : r.old_logprobs) lp[gi].back().push_back(old + u(rng) * 0.6);
      }
      assign_advantages(g);
    }
    const ClipConfig clip{0.2, 0.28};
    const auto res = dapo_objective(groups, lp, clip);
    double plain = 0.0;
    for (const auto& s : res.tokens) {
      const double a = s.ratio * s.advantage;
      const double b = (1 - clip.eps_low) * s.advantage;
      const double c = (1 + clip.eps_high) * s.advantage;
      CHECK(s.contribution >= std::min({a, b, c}) - 1e-15);
      CHECK(s.contribution <= std::max({a, b, c}) + 1e-15);
      plain += a;
    }
    const auto open = dapo_objective(groups, lp, ClipConfig::unclipped());
    CHECK(open.clipped_count == 0);
    CHECK(open.objective == doctest::Approx(plain / res.token_count).epsilon(1e-12));
  }
}

TEST_CASE("overlong shaping") {
  const LengthShapingConfig cfg{100, 200};
  CHECK(overlong_shaping(0, cfg) == 0.0);
  CHECK(overlong_shaping(100, cfg) == 0.0);
  CHECK(overlong_shaping(150, cfg) == -0.5);
  CHECK(overlong_shaping(200, cfg) == -1.0);
  CHECK(overlong_shaping(5000, cfg) == -1.0);
  CHECK(overlong_shaping(101, LengthShapingConfig{100, 100}) == -1.0);
  CHECK_THROWS_AS((LengthShapingConfig{0, 10}.validate()), ConfigError);
  CHECK_THROWS_AS((LengthShapingConfig{20, 10}.validate()), ConfigError);
}

TEST_CASE("shaping enters the scalar reward before advantages") {
  RolloutGroup g = group_with({true, true}, {1.0, 1.0});
  g.rollouts[1].shaping = -0.5;
  assign_advantages(g);
  CHECK(g.advantages[0] == doctest::Approx(1.0));
  CHECK(g.advantages[1] == doctest::Approx(-1.0));
}

TEST_CASE("sft loss") {
  const std::vector<double> zeros(7, 0.0);
  CHECK(sft_loss(zeros) == 0.0);
  const std::vector<double> uniform(12, -std::log(40.0));
  CHECK(sft_loss(uniform) == doctest::Approx(12 * std::log(40.0)));
  CHECK_THROWS(sft_loss(std::vector<double>{}));

  std::mt19937_64 rng(79);
  std::uniform_real_distribution<double> lp(-12.0, 0.0);
  std::vector<double> seq(5000);
  for (double& x : seq) x = lp(rng);
  boost::multiprecision::cpp_rational exact = 0;
  for (double x : seq) exact -= boost::multiprecision::cpp_rational(x);
  const double oracle = static_cast<double>(exact);
  CHECK(std::fabs(sft_loss(seq) - oracle) <= 1e-12 * oracle);
}

TEST_CASE("toy policy distributions") {
  std::mt19937_64 rng(83);
  ToyPolicy policy(3, 4, 256, 0.7);
  std::normal_distribution<double> n(0.0, 3.0);
  for (double& z : policy.parameters()) z = n(rng);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < 4; ++p) {
      const auto probs = policy.probabilities(c, p);
      CHECK(std::fabs(std::accumulate(probs.begin(), probs.end(), 0.0) - 1.0) < 1e-12);
      CHECK(std::exp(policy.logprob(c, p, 17)) == doctest::Approx(probs[17]).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(ToyPolicy(1, 1, 257), ConfigError);
  CHECK_THROWS_AS(ToyPolicy(1, 1, 4, 0.0), ConfigError);

  ToyPolicy small(1, 1, 3);
  small.parameters() = {0.0, std::log(2.0), std::log(3.0)};
  std::array<int, 3> counts{};
  for (int i = 0; i < 60000; ++i) ++counts[small.sample(0, rng)[0]];
  CHECK(counts[0] / 60000.0 == doctest::Approx(1.0 / 6).epsilon(0.05));
  CHECK(counts[2] / 60000.0 == doctest::Approx(0.5).epsilon(0.05));

  const std::vector<int> only = {1};
  small.set_allowed(0, only);
  CHECK(small.logprob(0, 0, 1) == 0.0);
  CHECK(std::isinf(small.logprob(0, 0, 0)));
  for (int i = 0; i < 100; ++i) CHECK(small.sample(0, rng)[0] == 1);
}

TEST_CASE("analytic objective gradient matches central differences") {
  std::mt19937_64 rng(89);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int checked = 0;
  while (checked < 20) {
    ToyPolicy policy(2, 4, 5, 0.5 + 1.5 * unit(rng));
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& z : policy.parameters()) z = n(rng);
    const ClipConfig clip{0.1 + 0.2 * unit(rng), 0.2 + 0.2 * unit(rng)};
    std::vector<RolloutGroup> groups(2);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      groups[g].prompt_id = static_cast<int>(g);
      for (int i = 0; i < 3; ++i) {
        Rollout r;
        r.prompt_id = groups[g].prompt_id;
        r.token_ids = policy.sample(g, rng);
        r.old_logprobs = policy.sequence_logprobs(g, r.token_ids);
        for (double& lp : r.old_logprobs) lp += 0.5 * (unit(rng) - 0.5);
        r.reward.total = n(rng);
        groups[g].rollouts.push_back(r);
      }
      assign_advantages(groups[g]);
    }
    const auto res = dapo_objective(groups, policy_logprobs(policy, groups), clip);
    const bool near_boundary = std::any_of(res.tokens.begin(), res.tokens.end(), [&](const TokenStat& s) {
      return std::fabs(s.ratio - (1 - clip.eps_low)) < 1e-3 || std::fabs(s.ratio - (1 + clip.eps_high)) < 1e-3;
    });
    if (near_boundary) continue;

    const auto analytic = objective_gradient(policy, groups, res);
    std::vector<double> numeric(analytic.size());
    const double h = 1e-5;
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      const double saved = policy.parameters()[j];
      policy.parameters()[j] = saved + h;
      const double up = dapo_objective(groups, policy_logprobs(policy, groups), clip).objective;
      policy.parameters()[j] = saved - h;
      const double down = dapo_objective(groups, policy_logprobs(policy, groups), clip).objective;
      policy.parameters()[j] = saved;
      numeric[j] = (up - down) / (2 * h);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      diff += (analytic[j] - numeric[j]) * (analytic[j] - numeric[j]);
      na += analytic[j] * analytic[j];
      nn += numeric[j] * numeric[j];
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    CHECK(rel < 1e-4);
    ++checked;
  }
}

TEST_CASE("key-fact world layout") {
  const auto world = KeyFactWorld::generate(WorldConfig{}, 5);
  CHECK(world.items().size() == 32);
  CHECK(world.sequence_length() == 13);
  CHECK(world.vocabulary().size() <= ToyPolicy::kMaxVocab);
  std::mt19937_64 rng(1);
  const auto target = world.sft_target(0, rng);
  const std::string text = world.decode(target);
  const auto parsed = parse_structured(text);
  REQUIRE(parsed.diagnostics.well_formed);
  CHECK(accuracy_reward(parsed.response->answer, "a", MatchPolicy::kChoiceLetter) +
            accuracy_reward(parsed.response->answer, "b", MatchPolicy::kChoiceLetter) +
            accuracy_reward(parsed.response->answer, "c", MatchPolicy::kChoiceLetter) +
            accuracy_reward(parsed.response->answer, "d", MatchPolicy::kChoiceLetter) ==
        1.0);
  for (const auto& item : world.items()) {
    CHECK(item.visual_keys.size() == 2);
    CHECK(item.textual_keys.size() == 2);
    for (const auto& k : item.textual_keys) CHECK(match_key(k, item.question));
  }
  CHECK_THROWS_AS(KeyFactWorld::generate(WorldConfig{.choices = 9}, 1), ConfigError);
}

TEST_CASE("degenerate world is solved before any update") {
  WorldConfig wc;
  wc.items = 1;
  wc.choices = 1;
  wc.template_forced = true;
  const auto world = KeyFactWorld::generate(wc, 3);
  SimulationConfig cfg;
  cfg.updates = 0;
  cfg.eval_samples = 32;
  const auto result = simulate_training(world, cfg);
  CHECK(result.curve.empty());
  CHECK(result.initial.accuracy == 1.0);
  CHECK(result.initial.format == 1.0);
  CHECK(result.final.accuracy == 1.0);

  cfg.updates = 3;
  cfg.max_resamples = 4;
  CHECK_THROWS_AS(simulate_training(world, cfg), RuntimeAbort);
}

TEST_CASE("simulation is deterministic for a fixed seed") {
  const auto world = KeyFactWorld::generate(WorldConfig{}, 11);
  SimulationConfig cfg;
  cfg.updates = 30;
  cfg.seed = 11;
  cfg.eval_samples = 8;
  const auto a = simulate_training(world, cfg);
  const auto b = simulate_training(world, cfg);
  REQUIRE(a.curve.size() == 30);
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].objective == b.curve[i].objective);
    CHECK(a.curve[i].accuracy == b.curve[i].accuracy);
    CHECK(a.curve[i].coverage == b.curve[i].coverage);
    CHECK(a.curve[i].clipped_fraction == b.curve[i].clipped_fraction);
  }
  CHECK(a.final.total == b.final.total);

  cfg.seed = 12;
  const auto c = simulate_training(world, cfg);
  bool differs = false;
  for (std::size_t i = 0; i < a.curve.size(); ++i) differs = differs || a.curve[i].accuracy != c.curve[i].accuracy;
  CHECK(differs);
}

TEST_CASE("ablations zero their weights at both schedule ends") {
  SimulationConfig cfg;
  cfg.no_vkey = true;
  cfg.no_cons = true;
  const auto s = cfg.effective_schedule();
  CHECK(s.start.vkey == 0.0);
  CHECK(s.end.vkey == 0.0);
  CHECK(s.start.cons == 0.0);
  CHECK(s.end.cons == 0.0);
  CHECK(s.end.tkey == cfg.reward.schedule.end.tkey);
}
