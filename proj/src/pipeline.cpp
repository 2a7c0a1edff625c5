#include "groundrl/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>

#include "groundrl/errors.hpp"

namespace groundrl {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string format_number(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    char c = s[i];
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if (c != prefix[i]) return false;
  }
  return true;
}

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string get_string(const json& j, const char* key, bool required) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    if (required) throw InputError(std::string("missing field '") + key + "'");
    return {};
  }
  if (!it->is_string()) throw InputError(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

void check_unit_interval(double x, const char* name) {
  if (!std::isfinite(x) || x < 0.0 || x > 1.0) throw ConfigError(std::string(name) + " must be in [0, 1]");
}

void check_threshold(double x, const char* name) {
  if (!std::isfinite(x) || x < 0.0) throw ConfigError(std::string(name) + " must be finite and non-negative");
}

double weighted_score(const CandidateTrajectory& c, double w1, double w2) { return w1 * c.s_acc + w2 * c.s_coh; }

ordered_json strings_json(const std::vector<std::string>& v) {
  ordered_json out = ordered_json::array();
  for (const auto& s : v) out.push_back(s);
  return out;
}

PipelineRecord quarantine(PipelineRecord r, std::string reason) {
  r.passed_quality_check = false;
  r.processing_log.push_back(std::move(reason));
  return r;
}

}  // namespace

SourceSample sample_from_json(const json& j) {
  if (!j.is_object()) throw InputError("sample must be a JSON object");
  SourceSample s;
  s.id = get_string(j, "id", true);
  if (s.id.empty()) throw InputError("sample id must not be empty");
  s.question = get_string(j, "question", true);
  s.image_path = get_string(j, "image_path", false);
  // Cleaned records feed distillation directly.
  const char* cot_key = j.contains("cot") ? "cot" : "cot_thinking";
  const char* answer_key = j.contains("answer") ? "answer" : "final_answer";
  s.original_cot = get_string(j, cot_key, false);
  if (j.contains(answer_key) && !j.at(answer_key).is_null()) s.answer = get_string(j, answer_key, true);
  return s;
}

std::vector<SourceSample> read_samples(std::istream& in) {
  std::vector<SourceSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(sample_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw InputError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

ordered_json to_json(const SourceSample& s) {
  ordered_json j{{"id", s.id}, {"image_path", s.image_path}, {"question", s.question}};
  if (!s.original_cot.empty()) j["cot"] = s.original_cot;
  if (s.answer) j["answer"] = *s.answer;
  return j;
}

void QualityWeights::validate() const {
  check_unit_interval(formal, "w_f");
  check_unit_interval(cot, "w_c");
  check_unit_interval(answer, "w_a");
  check_unit_interval(misc, "w_m");
  const double sum = exact_sum(std::array{formal, cot, answer, misc});
  if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError("quality weights must sum to 1, got " + format_number(sum));
}

double quality_score(const QualityMetrics& m, const QualityWeights& w) {
  w.validate();
  const std::array<double, 4> weights{w.formal, w.cot, w.answer, w.misc};
  const std::array<double, 4> scores{m.formal_score, m.cot_score, m.answer_score, m.misc_score};
  for (double s : scores) {
    if (!std::isfinite(s) || s < 0.0 || s > 1.0) throw InputError("quality scores must be in [0, 1]");
  }
  return exact_dot(weights, scores);
}

std::string build_formal_description(std::string_view caption, const std::vector<Detection>& detections,
                                     std::string_view ocr_text) {
  const std::string_view cap = trim(caption);
  if (cap.empty()) throw std::invalid_argument("caption must not be empty");
  std::string out = "[layout]\n";
  out += cap;
  out += '\n';
  if (!detections.empty()) {
    out += "[objects]\n";
    for (std::size_t i = 0; i < detections.size(); ++i) {
      const Detection& d = detections[i];
      out += std::to_string(i + 1) + ". " + d.cls + " [";
      for (std::size_t k = 0; k < 4; ++k) {
        if (k) out += ", ";
        out += format_number(d.bbox[k]);
      }
      out += "]\n";
    }
  }
  const std::string_view ocr = trim(ocr_text);
  if (!ocr.empty()) {
    out += "[ocr]\n";
    out += ocr;
    out += '\n';
  }
  return out;
}

std::string restructure_prompt(std::string_view question, std::string_view formal_description) {
  std::string p =
      "Use only the provided formal image description and the question. Do not consult the original CoT or "
      "external knowledge beyond the description.\n\nQuestion:\n";
  p += trim(question);
  p += "\n\nFormal image description:\n";
  p += formal_description;
  p += "\nReason step by step, one step per line, and end with a line \"answer: <final answer>\".\n";
  return p;
}

std::string restructure_cot(std::string_view question, std::string_view formal_description, Restructurer& client,
                            std::size_t max_retries, std::vector<std::string>& log) {
  const std::string prompt = restructure_prompt(question, formal_description);
  for (std::size_t attempt = 0;; ++attempt) {
    try {
      return client.complete(prompt);
    } catch (const ClientError& e) {
      log.push_back("restructure: attempt " + std::to_string(attempt + 1) + " failed: " + e.what());
      if (attempt >= max_retries) throw;
    }
  }
}

std::string extract_final_answer(std::string_view cot) {
  std::string_view last_line;
  std::optional<std::string_view> marked;
  std::size_t pos = 0;
  while (pos <= cot.size()) {
    std::size_t nl = cot.find('\n', pos);
    if (nl == std::string_view::npos) nl = cot.size();
    const std::string_view line = trim(cot.substr(pos, nl - pos));
    if (!line.empty()) {
      last_line = line;
      if (starts_with_ci(line, "answer:")) marked = trim(line.substr(7));
    }
    pos = nl + 1;
  }
  return std::string(marked ? *marked : last_line);
}

std::vector<std::string> enumerate_steps(std::string_view trajectory) {
  std::vector<std::string> steps;
  std::size_t pos = 0;
  while (pos <= trajectory.size()) {
    std::size_t nl = trajectory.find('\n', pos);
    if (nl == std::string_view::npos) nl = trajectory.size();
    const std::string_view line = trim(trajectory.substr(pos, nl - pos));
    if (!line.empty()) steps.emplace_back(line);
    pos = nl + 1;
  }
  return steps;
}

ordered_json to_json(const PipelineRecord& r) {
  ordered_json detections = ordered_json::array();
  for (const Detection& d : r.detected_objects) {
    detections.push_back(ordered_json{{"class", d.cls}, {"bbox", {d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]}}});
  }
  const QualityMetrics& m = r.quality_metrics;
  return ordered_json{
      {"id", r.id},
      {"image_path", r.image_path},
      {"question", r.question},
      {"formal_description", r.formal_description},
      {"cot_thinking", r.cot_thinking},
      {"final_answer", r.final_answer},
      {"quality_metrics",
       {{"formal_score", m.formal_score},
        {"cot_score", m.cot_score},
        {"answer_score", m.answer_score},
        {"misc_score", m.misc_score},
        {"overall_score", m.overall_score}}},
      {"passed_quality_check", r.passed_quality_check},
      {"metadata", {{"detected_objects", detections}, {"ocr_text", r.ocr_text}}},
      {"processing_log", strings_json(r.processing_log)},
  };
}

void CleanConfig::validate() const {
  check_threshold(min_score, "min_score");
  weights.validate();
  if (enable_sampling && sample_size == 0) throw ConfigError("sample_size must be positive when sampling is enabled");
}

const std::vector<PipelineRecord>& CleanResult::output() const { return sampling_ran ? sampled : passed; }

PipelineRecord clean_record(const SourceSample& sample, const ExternalClients& clients, const CleanConfig& cfg) {
  if (!clients.captioner || !clients.detector || !clients.ocr || !clients.restructurer || !clients.judge) {
    throw ConfigError("cleaning needs captioner, detector, ocr, restructurer and judge clients");
  }
  PipelineRecord r;
  r.id = sample.id;
  r.image_path = sample.image_path;
  r.question = sample.question;

  std::string caption;
  try {
    caption = clients.captioner->caption(sample);
    r.detected_objects = clients.detector->detect(sample);
  } catch (const ClientError& e) {
    return quarantine(std::move(r), std::string("image analysis failed: ") + e.what());
  }
  try {
    r.ocr_text = clients.ocr->read_text(sample);
  } catch (const ClientError& e) {
    r.ocr_text.clear();
    r.processing_log.push_back(std::string("ocr: fallback to empty text after error: ") + e.what());
  }
  try {
    r.formal_description = build_formal_description(caption, r.detected_objects, r.ocr_text);
  } catch (const std::invalid_argument& e) {
    return quarantine(std::move(r), std::string("formal description: ") + e.what());
  }

  try {
    r.cot_thinking = restructure_cot(sample.question, r.formal_description, *clients.restructurer, cfg.max_retries,
                                     r.processing_log);
  } catch (const ClientError&) {
    return quarantine(std::move(r), "restructure: giving up after " + std::to_string(cfg.max_retries + 1) +
                                        " attempts");
  }
  r.final_answer = extract_final_answer(r.cot_thinking);

  try {
    r.quality_metrics = clients.judge->assess(sample, r.formal_description, r.cot_thinking, r.final_answer);
    r.quality_metrics.overall_score = quality_score(r.quality_metrics, cfg.weights);
  } catch (const ClientError& e) {
    return quarantine(std::move(r), std::string("quality check failed: ") + e.what());
  } catch (const InputError& e) {
    return quarantine(std::move(r), std::string("quality check failed: ") + e.what());
  }
  r.passed_quality_check = r.quality_metrics.overall_score >= cfg.min_score;
  return r;
}

CleanResult clean_dataset(const std::vector<SourceSample>& samples, const ExternalClients& clients,
                          const CleanConfig& cfg) {
  cfg.validate();
  CleanResult out;
  for (const SourceSample& s : samples) {
    PipelineRecord r = clean_record(s, clients, cfg);
    (r.passed_quality_check ? out.passed : out.failed).push_back(std::move(r));
  }
  if (cfg.enable_sampling) {
    out.sampling_ran = true;
    const std::size_t n = out.passed.size();
    const std::size_t k = std::min(cfg.sample_size, n);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    MockStream rng(cfg.seed, "sampler", "");
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i : idx) out.sampled.push_back(out.passed[i]);
  }
  return out;
}

void DistillConfig::validate() const {
  if (samples_per_teacher == 0) throw ConfigError("samples_per_teacher must be at least 1");
  if (judge_budget == 0) throw ConfigError("judge_budget must be at least 1");
  check_threshold(tau_acc, "tau_acc");
  check_threshold(tau_coh, "tau_coh");
  check_threshold(tau_cons, "tau_cons");
  if (!std::isfinite(w1) || !std::isfinite(w2) || w1 < 0.0 || w2 < 0.0 || !(w1 + w2 > 0.0)) {
    throw ConfigError("selection weights must be non-negative with w1 + w2 > 0");
  }
}

void DistillConfig::validate(std::size_t teachers) const {
  validate();
  if (teachers == 0) throw ConfigError("distillation needs at least one teacher");
  if (judge_budget > samples_per_teacher * teachers) {
    throw ConfigError("judge_budget exceeds samples_per_teacher * teachers");
  }
}

std::vector<CandidateTrajectory> topk_by_logprob(std::vector<CandidateTrajectory> candidates, std::size_t b) {
  if (b == 0) throw std::invalid_argument("top-k needs B >= 1");
  std::stable_sort(candidates.begin(), candidates.end(), [](const auto& x, const auto& y) {
    if (x.logprob != y.logprob) return x.logprob > y.logprob;
    return x.id < y.id;
  });
  if (candidates.size() > b) candidates.resize(b);
  return candidates;
}

std::vector<CandidateTrajectory> self_consistency_filter(const std::vector<CandidateTrajectory>& candidates) {
  std::map<std::string, std::size_t> counts;
  std::vector<std::string> keys;
  keys.reserve(candidates.size());
  for (const auto& c : candidates) {
    keys.push_back(normalize_fact(c.final_answer));
    ++counts[keys.back()];
  }
  std::size_t top = 0;
  for (const auto& [k, n] : counts) top = std::max(top, n);
  std::vector<CandidateTrajectory> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (counts[keys[i]] == top) out.push_back(candidates[i]);
  }
  return out;
}

std::vector<CandidateTrajectory> verify_candidates(const std::vector<CandidateTrajectory>& candidates, bool has_gold,
                                                   const VerifyThresholds& t) {
  std::vector<CandidateTrajectory> kept;
  for (const auto& c : candidates) {
    if (c.s_acc >= t.tau_acc && c.s_coh >= t.tau_coh) kept.push_back(c);
  }
  if (!has_gold) return self_consistency_filter(kept);

  std::map<std::string, std::size_t> best;  // normalized answer -> index into kept
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const std::string key = normalize_fact(kept[i].final_answer);
    auto [it, inserted] = best.emplace(key, i);
    if (inserted) continue;
    const auto& cur = kept[it->second];
    const double a = weighted_score(kept[i], t.w1, t.w2);
    const double b = weighted_score(cur, t.w1, t.w2);
    if (a > b || (a == b && kept[i].id < cur.id)) it->second = i;
  }
  std::vector<std::size_t> idx;
  for (const auto& [k, i] : best) idx.push_back(i);
  std::sort(idx.begin(), idx.end());
  std::vector<CandidateTrajectory> out;
  for (std::size_t i : idx) out.push_back(kept[i]);
  return out;
}

const CandidateTrajectory& select_best(const std::vector<CandidateTrajectory>& candidates, double w1, double w2) {
  if (candidates.empty()) throw std::invalid_argument("select_best needs at least one candidate");
  const CandidateTrajectory* best = &candidates.front();
  for (const auto& c : candidates) {
    const double a = weighted_score(c, w1, w2);
    const double b = weighted_score(*best, w1, w2);
    if (a > b || (a == b && c.id < best->id)) best = &c;
  }
  return *best;
}

KeyInfo extract_keyinfo(const SourceSample& sample, const CandidateTrajectory& trajectory,
                        KeyInfoExtractor& extractor, std::vector<std::string>& log) {
  KeyInfo info = extractor.extract(sample, trajectory);
  const std::size_t steps = enumerate_steps(trajectory.text).size();
  std::vector<ApplicationLink> kept;
  for (auto& link : info.application_map) {
    if (link.step < steps) {
      kept.push_back(std::move(link));
    } else {
      log.push_back("keyinfo: dropped link '" + link.fact + "' to missing step " + std::to_string(link.step));
    }
  }
  info.application_map = std::move(kept);
  return info;
}

ordered_json to_json(const DistilledRecord& r) {
  ordered_json links = ordered_json::array();
  for (const auto& l : r.key_info.application_map) links.push_back(ordered_json{{"fact", l.fact}, {"step", l.step}});
  return ordered_json{
      {"id", r.id},
      {"image_path", r.image_path},
      {"question", r.question},
      {"answer", r.answer},
      {"trajectory", r.trajectory},
      {"teacher", r.teacher},
      {"s_acc", r.s_acc},
      {"s_coh", r.s_coh},
      {"key_info_available", r.key_info_available},
      {"visual_keys", strings_json(r.key_info.visual.strings())},
      {"textual_keys", strings_json(r.key_info.textual.strings())},
      {"application_map", links},
      {"processing_log", strings_json(r.processing_log)},
  };
}

RewardItem to_reward_item(const DistilledRecord& r, MatchPolicy policy) {
  RewardItem item;
  item.gold = r.answer;
  item.policy = policy;
  item.visual_keys = r.key_info.visual;
  item.textual_keys = r.key_info.textual;
  item.question = r.question;
  return item;
}

ordered_json to_json(const DistillSummary& s) {
  return ordered_json{
      {"items", s.items},
      {"distilled", s.distilled},
      {"skipped", s.skipped},
      {"judge_calls", s.judge_calls},
      {"max_judge_calls_per_item", s.max_judge_calls_per_item},
      {"without_key_info", s.without_key_info},
      {"diagnostics", strings_json(s.diagnostics)},
  };
}

DistillResult distill(const std::vector<SourceSample>& samples, const ExternalClients& clients,
                      const DistillConfig& cfg) {
  if (!clients.judge || !clients.extractor) throw ConfigError("distillation needs judge and extractor clients");
  for (Teacher* t : clients.teachers) {
    if (!t) throw ConfigError("null teacher client");
  }
  cfg.validate(clients.teachers.size());
  const VerifyThresholds thresholds{cfg.tau_acc, cfg.tau_coh, cfg.w1, cfg.w2};

  DistillResult out;
  for (const SourceSample& s : samples) {
    ++out.summary.items;
    std::vector<std::string> log;

    std::vector<CandidateTrajectory> pool;
    for (Teacher* t : clients.teachers) {
      std::vector<CandidateTrajectory> got;
      try {
        got = t->generate(s, cfg.samples_per_teacher);
      } catch (const ClientError& e) {
        log.push_back("teacher " + t->name() + " failed: " + e.what());
        continue;
      }
      if (got.size() > cfg.samples_per_teacher) got.resize(cfg.samples_per_teacher);
      for (auto& c : got) {
        c.id = pool.size();
        c.teacher = t->name();
        pool.push_back(std::move(c));
      }
    }

    std::vector<CandidateTrajectory> judged;
    std::size_t calls = 0;
    for (auto& c : topk_by_logprob(std::move(pool), cfg.judge_budget)) {
      ++calls;
      try {
        const JudgeScores js = clients.judge->judge(s, c);
        c.s_acc = js.s_acc;
        c.s_coh = js.s_coh;
        judged.push_back(std::move(c));
      } catch (const ClientError& e) {
        log.push_back("judge failed on candidate " + std::to_string(c.id) + ": " + e.what());
      }
    }
    out.summary.judge_calls += calls;
    out.summary.max_judge_calls_per_item = std::max(out.summary.max_judge_calls_per_item, calls);

    const std::vector<CandidateTrajectory> verified = verify_candidates(judged, s.answer.has_value(), thresholds);
    if (verified.empty()) {
      ++out.summary.skipped;
      out.summary.diagnostics.push_back(s.id + ": no candidate survived verification (" +
                                        std::to_string(judged.size()) + " judged)");
      continue;
    }
    const CandidateTrajectory& best = select_best(verified, cfg.w1, cfg.w2);

    DistilledRecord r;
    r.id = s.id;
    r.image_path = s.image_path;
    r.question = s.question;
    r.answer = best.final_answer;
    r.trajectory = best.text;
    r.teacher = best.teacher;
    r.s_acc = best.s_acc;
    r.s_coh = best.s_coh;
    try {
      r.key_info = extract_keyinfo(s, best, *clients.extractor, log);
      r.key_info_available = true;
    } catch (const ClientError& e) {
      r.key_info = KeyInfo{};
      log.push_back(std::string("keyinfo: extraction failed, record usable for answer reward only: ") + e.what());
      ++out.summary.without_key_info;
    }
    r.processing_log = std::move(log);
    out.records.push_back(std::move(r));
    ++out.summary.distilled;
  }
  return out;
}

// ---- mocks ----

std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

MockStream::MockStream(std::uint64_t seed, std::string_view tag, std::string_view key) {
  std::uint64_t s = seed;
  state_ = splitmix64(s) ^ fnv1a64(key, fnv1a64(tag) ^ 0x1f);
}

std::uint64_t MockStream::next() { return splitmix64(state_); }

double MockStream::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::size_t MockStream::below(std::size_t n) {
  if (n == 0) throw std::invalid_argument("below(0)");
  return static_cast<std::size_t>(uniform() * static_cast<double>(n));
}

namespace {

constexpr std::array<std::string_view, 8> kObjects = {"circle", "triangle", "mug", "bar", "line", "square", "arrow",
                                                      "label"};
constexpr std::array<std::string_view, 5> kColors = {"red", "blue", "green", "white", "black"};
constexpr std::array<std::string_view, 4> kPlaces = {"left of", "right of", "above", "below"};
constexpr std::array<std::string_view, 5> kQuantities = {"radius", "length", "width", "height", "angle"};

std::string_view pick(MockStream& rng, auto const& list) { return list[rng.below(list.size())]; }

std::string unit_for(std::string_view quantity) { return quantity == "angle" ? "degrees" : "cm"; }

std::string visual_fact(const SourceSample& s) {
  MockStream rng(0x5eed, "scene", s.id);
  return std::string("the ") + std::string(pick(rng, kObjects)) + " is " + std::string(pick(rng, kColors));
}

std::string latent_answer(const SourceSample& s) {
  MockStream rng(0x5eed, "latent", s.id + "\n" + s.question);
  return std::to_string(2 + rng.below(40)) + " cm";
}

std::string distractor(const std::string& answer, MockStream& rng) {
  const std::optional<double> v = parse_numeric_answer(answer);
  if (!v) return std::string(pick(rng, kColors));
  return format_number(*v + 1.0 + static_cast<double>(rng.below(3))) + " cm";
}

std::vector<std::string> question_facts(std::string_view question) {
  const std::array<std::string_view, 1> segs{question};
  return extract_facts(segs, std::span<const Fact>{}).strings();
}

std::string section(const std::string& text, std::string_view begin, std::string_view end) {
  const auto a = text.find(begin);
  if (a == std::string::npos) return {};
  const auto start = a + begin.size();
  const auto b = text.find(end, start);
  return text.substr(start, b == std::string::npos ? std::string::npos : b - start);
}

}  // namespace

std::string MockCaptioner::caption(const SourceSample& sample) {
  MockStream rng(seed_, "caption", sample.id);
  std::string out = "a " + std::string(pick(rng, kColors)) + " " + std::string(pick(rng, kObjects)) + " " +
                    std::string(pick(rng, kPlaces)) + " a " + std::string(pick(rng, kColors)) + " " +
                    std::string(pick(rng, kObjects)) + " on a plain background; " + visual_fact(sample);
  return out;
}

std::vector<Detection> MockDetector::detect(const SourceSample& sample) {
  MockStream rng(seed_, "detect", sample.id);
  std::vector<Detection> out(rng.below(4));
  for (Detection& d : out) {
    d.cls = pick(rng, kObjects);
    const double x = static_cast<double>(rng.below(600));
    const double y = static_cast<double>(rng.below(440));
    d.bbox = {x, y, x + 1 + static_cast<double>(rng.below(40)), y + 1 + static_cast<double>(rng.below(40))};
  }
  return out;
}

std::string MockOcr::read_text(const SourceSample& sample) {
  MockStream fail(seed_, "ocr-fail", sample.id);
  if (fail.uniform() < failure_rate_) throw ClientError("ocr timed out");
  MockStream rng(seed_, "ocr", sample.id);
  if (rng.below(3) == 0) return {};
  return "label " + std::string(1, static_cast<char>('A' + rng.below(4))) + " " + std::to_string(rng.below(90)) +
         " " + unit_for(pick(rng, kQuantities));
}

std::string MockRestructurer::complete(const std::string& prompt) {
  transcript_.push_back(prompt);
  const std::uint64_t key = fnv1a64(prompt);
  auto it = std::find_if(attempts_.begin(), attempts_.end(), [&](const auto& a) { return a.first == key; });
  if (it == attempts_.end()) it = attempts_.insert(attempts_.end(), {key, 0});
  if (it->second++ < failures_) throw ClientError("restructurer timed out");

  const std::string question = section(prompt, "Question:\n", "\n\nFormal image description:\n");
  const std::string layout = section(prompt, "[layout]\n", "\n");
  MockStream rng(seed_, "cot", question + "\n" + layout);
  std::string cot = "observe: " + layout + "\n";
  for (const auto& f : question_facts(question)) cot += "given: " + f + "\n";
  cot += "step: relate the observed objects to the given quantities\n";
  cot += "answer: " + std::to_string(2 + rng.below(40)) + " cm\n";
  return cot;
}

QualityMetrics MockJudge::assess(const SourceSample& sample, const std::string& formal_description,
                                 const std::string& cot, const std::string& answer) {
  MockStream rng(seed_, "assess", sample.id + "\n" + formal_description + "\n" + cot + "\n" + answer);
  QualityMetrics m;
  m.formal_score = 0.75 + 0.25 * rng.uniform();
  m.cot_score = 0.7 + 0.3 * rng.uniform();
  m.answer_score = 0.75 + 0.25 * rng.uniform();
  m.misc_score = 0.5 + 0.5 * rng.uniform();
  return m;
}

JudgeScores MockJudge::judge(const SourceSample& sample, const CandidateTrajectory& candidate) {
  ++judge_calls_;
  MockStream rng(seed_, "judge", sample.id + "\n" + candidate.text);
  JudgeScores js;
  if (sample.answer) {
    const MatchPolicy policy =
        parse_numeric_answer(*sample.answer) ? MatchPolicy::kNumeric : MatchPolicy::kNormalizedExact;
    js.s_acc = accuracy_reward(candidate.final_answer, *sample.answer, policy);
  } else {
    js.s_acc = 1.0;
  }
  js.s_coh = 0.3 + 0.7 * rng.uniform();
  return js;
}

std::vector<CandidateTrajectory> MockTeacher::generate(const SourceSample& sample, std::size_t n) {
  const std::string truth = sample.answer ? *sample.answer : latent_answer(sample);
  const std::vector<std::string> facts = question_facts(sample.question);
  std::vector<CandidateTrajectory> out;
  for (std::size_t k = 0; k < n; ++k) {
    MockStream rng(seed_, "teacher:" + name_, sample.id + "#" + std::to_string(k));
    CandidateTrajectory c;
    c.final_answer = rng.uniform() < accuracy_ ? truth : distractor(truth, rng);
    if (rng.below(4) != 0) c.text += "observe: " + visual_fact(sample) + "\n";
    for (const auto& f : facts) {
      if (rng.below(5) != 0) c.text += "given: " + f + "\n";
    }
    c.text += "step: combine the facts\n";
    c.text += "answer: " + c.final_answer + "\n";
    c.logprob = -(0.05 * static_cast<double>(c.text.size()) + 4.0 * rng.uniform());
    out.push_back(std::move(c));
  }
  return out;
}

KeyInfo MockExtractor::extract(const SourceSample& sample, const CandidateTrajectory& trajectory) {
  MockStream fail(seed_, "extract-fail", sample.id);
  if (fail.uniform() < failure_rate_) throw ClientError("extractor unavailable");
  KeyInfo info;
  const std::vector<std::string> steps = enumerate_steps(trajectory.text);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const std::string_view line = steps[i];
    if (starts_with_ci(line, "observe:")) {
      info.visual.insert(trim(line.substr(8)));
    } else if (starts_with_ci(line, "given:")) {
      Fact f = parse_fact(trim(line.substr(6)));
      if (f.text.empty()) continue;
      info.application_map.push_back({f.text, i});
      info.textual.insert(std::move(f));
    }
  }
  return info;
}

MockClientSet::MockClientSet(std::uint64_t seed, std::size_t teacher_count)
    : captioner(seed),
      detector(seed),
      ocr(seed),
      restructurer(seed),
      judge(seed),
      extractor(seed) {
  for (std::size_t i = 0; i < teacher_count; ++i) {
    teachers.emplace_back("teacher_" + std::to_string(i + 1), seed + 0x100 * (i + 1), 0.45 + 0.1 * static_cast<double>(i % 3));
  }
}

ExternalClients MockClientSet::clients() {
  ExternalClients c{&captioner, &detector, &ocr, &restructurer, &judge, {}, &extractor};
  for (auto& t : teachers) c.teachers.push_back(&t);
  return c;
}

std::vector<SourceSample> mock_corpus(std::size_t n, std::uint64_t seed, std::size_t unlabeled_every) {
  std::vector<SourceSample> out;
  for (std::size_t i = 1; i <= n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "sample_%04zu", i);
    MockStream rng(seed, "corpus", id);
    SourceSample s;
    s.id = id;
    s.image_path = "images/" + s.id.substr(7) + ".jpg";
    const std::string_view q1 = pick(rng, kQuantities);
    std::string_view q2 = pick(rng, kQuantities);
    if (q2 == q1) q2 = q1 == kQuantities[0] ? kQuantities[1] : kQuantities[0];
    const std::string_view object = pick(rng, kObjects);
    s.question = std::string("The figure shows ") + (object.front() == 'a' ? "an " : "a ") + std::string(object) + ". The " + std::string(q1) + " is " +
                 std::to_string(1 + rng.below(30)) + " " + unit_for(q1) + " and the " + std::string(q2) + " is " +
                 std::to_string(1 + rng.below(30)) + " " + unit_for(q2) + ". What is the missing length?";
    s.original_cot = "[original cot " + s.id + "] guess from the picture that it is about " +
                     std::to_string(rng.below(50)) + " cm";
    if (unlabeled_every == 0 || i % unlabeled_every != 0) s.answer = std::to_string(2 + rng.below(40)) + " cm";
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace groundrl
