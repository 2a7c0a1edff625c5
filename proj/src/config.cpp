#include "groundrl/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "groundrl/errors.hpp"

namespace groundrl {

using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were read so leftovers can be reported.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  void read(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + " must be a number");
      out = v->get<double>();
    }
  }

  void read(const char* key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) {
        throw ConfigError(where(key) + " must be a non-negative integer");
      }
      out = v->get<std::size_t>();
    }
  }

  void read(const char* key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key) + " must be an integer");
      out = v->get<int>();
    }
  }

  void read_u64(const char* key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(where(key) + " must be a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void read(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + " must be true or false");
      out = v->get<bool>();
    }
  }

  const json* string(const char* key) {
    const json* v = find(key);
    if (v && !v->is_string()) throw ConfigError(where(key) + " must be a string");
    return v;
  }

  std::optional<Section> child(const char* key) {
    if (const json* v = find(key)) return Section(*v, where(key));
    return std::nullopt;
  }

  const json* raw(const char* key) { return find(key); }

  std::string where(const char* key = nullptr) const {
    if (!key) return path_.empty() ? std::string("config") : path_;
    return path_.empty() ? std::string(key) : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + where(k.c_str()) + "'");
    }
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_weights(Section& parent, const char* key, RewardWeights& w) {
  auto s = parent.child(key);
  if (!s) return;
  s->read("acc", w.acc);
  s->read("fmt", w.fmt);
  s->read("vkey", w.vkey);
  s->read("tkey", w.tkey);
  s->read("rep", w.rep);
  s->read("cons", w.cons);
  s->finish();
}

void read_reward(Section& s, RewardConfig& cfg, const std::filesystem::path& base_dir) {
  s.read("tau_lo", cfg.thresholds.tau_lo);
  s.read("tau_hi", cfg.thresholds.tau_hi);
  s.read("ngram_order", cfg.ngram_order);
  if (const json* v = s.string("repetition_scope")) {
    const auto name = v->get<std::string>();
    if (name == "joint") {
      cfg.repetition_scope = RepetitionScope::kJoint;
    } else if (name == "separate") {
      cfg.repetition_scope = RepetitionScope::kSeparate;
    } else {
      throw ConfigError(s.where("repetition_scope") + " must be \"joint\" or \"separate\"");
    }
  }
  if (auto sched = s.child("schedule")) {
    sched->read("warmup_fraction", cfg.schedule.warmup_fraction);
    read_weights(*sched, "start", cfg.schedule.start);
    read_weights(*sched, "end", cfg.schedule.end);
    sched->finish();
  }
  if (const json* v = s.string("lexicon")) {
    std::filesystem::path p = v->get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    try {
      cfg.lexicon = Lexicon::load(p);
    } catch (const std::exception& e) {
      throw ConfigError(s.where("lexicon") + ": " + e.what());
    }
  }
  if (const json* v = s.raw("lexicon_phrases")) {
    if (!v->is_array()) throw ConfigError(s.where("lexicon_phrases") + " must be an array of strings");
    for (const json& p : *v) {
      if (!p.is_string()) throw ConfigError(s.where("lexicon_phrases") + " must be an array of strings");
      cfg.lexicon.add(p.get<std::string>());
    }
  }
  s.finish();
}

void read_simulation(Section& s, WorldConfig& world, SimulationConfig& sim) {
  if (auto w = s.child("world")) {
    w->read("items", world.items);
    w->read("choices", world.choices);
    w->read("visual_keys", world.visual_keys);
    w->read("textual_keys", world.textual_keys);
    w->read("distractors", world.distractors);
    w->read("description_slots", world.description_slots);
    w->read("think_slots", world.think_slots);
    w->read("template_forced", world.template_forced);
    w->finish();
  }
  s.read("updates", sim.updates);
  s.read("groups_per_update", sim.groups_per_update);
  s.read("group_size", sim.group_size);
  s.read("inner_epochs", sim.inner_epochs);
  s.read("learning_rate", sim.learning_rate);
  s.read("temperature", sim.temperature);
  if (auto c = s.child("clip")) {
    c->read("eps_low", sim.clip.eps_low);
    c->read("eps_high", sim.clip.eps_high);
    c->finish();
  }
  if (const json* v = s.string("sampling")) {
    const auto name = v->get<std::string>();
    if (name == "correctness") {
      sim.sampling = SamplingMode::kCorrectness;
    } else if (name == "variance") {
      sim.sampling = SamplingMode::kVariance;
    } else {
      throw ConfigError(s.where("sampling") + " must be \"correctness\" or \"variance\"");
    }
  }
  s.read("max_resamples", sim.max_resamples);
  if (auto l = s.child("shaping")) {
    l->read("soft_limit", sim.shaping.soft_limit);
    l->read("hard_limit", sim.shaping.hard_limit);
    l->finish();
  }
  s.read("sft_steps", sim.sft_steps);
  s.read("sft_targets_per_item", sim.sft_targets_per_item);
  s.read("sft_learning_rate", sim.sft_learning_rate);
  s.read("eval_samples", sim.eval_samples);
  s.read_u64("seed", sim.seed);
  s.read("no_vkey", sim.no_vkey);
  s.read("no_tkey", sim.no_tkey);
  s.read("no_cons", sim.no_cons);
  s.finish();
}

}  // namespace

void ServiceConfig::validate() const {
  if (max_batch == 0) throw ConfigError("service.max_batch must be at least 1");
  if (max_body_bytes == 0) throw ConfigError("service.max_body_bytes must be positive");
}

void AppConfig::validate() const {
  reward.validate();
  service.validate();
  clean.validate();
  distill.validate(mock_teachers);
  world.validate();
  SimulationConfig sim = simulate;
  sim.reward = reward;
  sim.validate();
}

AppConfig config_from_json(const json& doc, const std::filesystem::path& base_dir) {
  AppConfig cfg;
  Section root(doc, "");
  if (auto s = root.child("reward")) read_reward(*s, cfg.reward, base_dir);
  if (auto s = root.child("service")) {
    s->read("max_batch", cfg.service.max_batch);
    s->read("max_body_bytes", cfg.service.max_body_bytes);
    s->read("threads", cfg.service.threads);
    s->finish();
  }
  if (auto s = root.child("clean")) {
    s->read("min_score", cfg.clean.min_score);
    if (auto w = s->child("weights")) {
      w->read("formal", cfg.clean.weights.formal);
      w->read("cot", cfg.clean.weights.cot);
      w->read("answer", cfg.clean.weights.answer);
      w->read("misc", cfg.clean.weights.misc);
      w->finish();
    }
    s->read("enable_sampling", cfg.clean.enable_sampling);
    s->read("sample_size", cfg.clean.sample_size);
    s->read("max_retries", cfg.clean.max_retries);
    s->read_u64("seed", cfg.clean.seed);
    s->finish();
  }
  if (auto s = root.child("distill")) {
    s->read("samples_per_teacher", cfg.distill.samples_per_teacher);
    s->read("judge_budget", cfg.distill.judge_budget);
    s->read("tau_acc", cfg.distill.tau_acc);
    s->read("tau_coh", cfg.distill.tau_coh);
    s->read("tau_cons", cfg.distill.tau_cons);
    s->read("w1", cfg.distill.w1);
    s->read("w2", cfg.distill.w2);
    s->read_u64("seed", cfg.distill.seed);
    s->read("mock_teachers", cfg.mock_teachers);
    s->finish();
  }
  if (auto s = root.child("simulate")) read_simulation(*s, cfg.world, cfg.simulate);
  root.finish();
  cfg.simulate.reward = cfg.reward;
  cfg.validate();
  return cfg;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(doc, path.parent_path());
}

json weights_json(const RewardWeights& w) {
  json out = json::object();
  const auto values = w.as_array();
  for (std::size_t i = 0; i < values.size(); ++i) out[std::string(kComponentNames[i])] = values[i];
  return out;
}

json reward_config_json(const RewardConfig& cfg) {
  json phrases = json::array();
  for (const Fact& f : cfg.lexicon.phrases()) phrases.push_back(f.text);
  return json{
      {"tau_lo", cfg.thresholds.tau_lo},
      {"tau_hi", cfg.thresholds.tau_hi},
      {"ngram_order", cfg.ngram_order},
      {"repetition_scope", cfg.repetition_scope == RepetitionScope::kJoint ? "joint" : "separate"},
      {"schedule",
       {{"warmup_fraction", cfg.schedule.warmup_fraction},
        {"start", weights_json(cfg.schedule.start)},
        {"end", weights_json(cfg.schedule.end)}}},
      {"lexicon_phrases", phrases},
  };
}

std::string canonical_dump(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

std::string config_hash(const RewardConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_dump(reward_config_json(cfg)))));
  return buf;
}

}  // namespace groundrl
