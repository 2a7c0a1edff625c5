#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "groundrl/fact_normalizer.hpp"
#include "groundrl/reward.hpp"

namespace groundrl {

/// A transient failure of an external model call (timeout, transport error).
class ClientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One raw input sample. `original_cot` and `answer` are optional in the input.
struct SourceSample {
  std::string id;
  std::string image_path;
  std::string question;
  std::string original_cot;
  std::optional<std::string> answer;
};

/// Reads `id`, `question` and optionally `image_path`, `cot`, `answer`.
/// Other keys are ignored so records from earlier stages can be fed back in.
SourceSample sample_from_json(const nlohmann::json& j);
std::vector<SourceSample> read_samples(std::istream& in);
nlohmann::ordered_json to_json(const SourceSample& s);

struct Detection {
  std::string cls;
  std::array<double, 4> bbox{};  // x1, y1, x2, y2

  bool operator==(const Detection&) const = default;
};

struct QualityWeights {
  double formal = 0.30;
  double cot = 0.35;
  double answer = 0.30;
  double misc = 0.05;

  /// Throws ConfigError unless every weight is in [0,1] and they sum to 1 within 1e-9.
  void validate() const;
};

struct QualityMetrics {
  double formal_score = 0.0;
  double cot_score = 0.0;
  double answer_score = 0.0;
  double misc_score = 0.0;
  double overall_score = 0.0;
};

/// Correctly rounded w_f s_f + w_c s_c + w_a s_a + w_m s_m. Validates the weights.
double quality_score(const QualityMetrics& m, const QualityWeights& w);

// External model interfaces. Real backends are adapters supplied by the user;
// the Mock* classes below are pure functions of (input, seed).

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual std::string caption(const SourceSample& sample) = 0;
};

class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<Detection> detect(const SourceSample& sample) = 0;
};

class OcrEngine {
 public:
  virtual ~OcrEngine() = default;
  virtual std::string read_text(const SourceSample& sample) = 0;
};

/// Text-only LLM used to rebuild the chain of thought.
class Restructurer {
 public:
  virtual ~Restructurer() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

struct JudgeScores {
  double s_acc = 0.0;
  double s_coh = 0.0;
};

struct CandidateTrajectory {
  std::size_t id = 0;
  std::string teacher;
  std::string text;
  double logprob = 0.0;
  double s_acc = 0.0;
  double s_coh = 0.0;
  std::string final_answer;
};

class Judge {
 public:
  virtual ~Judge() = default;
  /// Per-dimension quality of a cleaned record.
  virtual QualityMetrics assess(const SourceSample& sample, const std::string& formal_description,
                                const std::string& cot, const std::string& answer) = 0;
  /// Correctness and coherence of one distillation candidate.
  virtual JudgeScores judge(const SourceSample& sample, const CandidateTrajectory& candidate) = 0;
};

class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual std::string name() const = 0;
  /// `n` sampled trajectories with text, logprob and final_answer filled in.
  virtual std::vector<CandidateTrajectory> generate(const SourceSample& sample, std::size_t n) = 0;
};

struct ApplicationLink {
  std::string fact;
  std::size_t step = 0;

  bool operator==(const ApplicationLink&) const = default;
};

struct KeyInfo {
  FactSet visual;
  FactSet textual;
  std::vector<ApplicationLink> application_map;
};

class KeyInfoExtractor {
 public:
  virtual ~KeyInfoExtractor() = default;
  virtual KeyInfo extract(const SourceSample& sample, const CandidateTrajectory& trajectory) = 0;
};

struct ExternalClients {
  Captioner* captioner = nullptr;
  Detector* detector = nullptr;
  OcrEngine* ocr = nullptr;
  Restructurer* restructurer = nullptr;
  Judge* judge = nullptr;
  std::vector<Teacher*> teachers;
  KeyInfoExtractor* extractor = nullptr;
};

// ---- formal description and CoT restructuring ----

/// Canonical text with sections `[layout]`, `[objects]` and `[ocr]` in that
/// order. Empty object lists and OCR text leave their section out.
std::string build_formal_description(std::string_view caption, const std::vector<Detection>& detections,
                                     std::string_view ocr_text);

/// The instruction sent to the restructurer. Built from the question and the
/// formal description only.
std::string restructure_prompt(std::string_view question, std::string_view formal_description);

/// Calls the restructurer with up to `max_retries` retries on ClientError.
/// Every failed attempt is appended to `log`; rethrows the last error.
std::string restructure_cot(std::string_view question, std::string_view formal_description, Restructurer& client,
                            std::size_t max_retries, std::vector<std::string>& log);

/// Text after the last `answer:` marker, else the last non-empty line.
std::string extract_final_answer(std::string_view cot);

/// Non-empty trimmed lines of a trajectory; application-map indices refer to these.
std::vector<std::string> enumerate_steps(std::string_view trajectory);

// ---- cleaning (SFT data) ----

struct PipelineRecord {
  std::string id;
  std::string image_path;
  std::string question;
  std::string formal_description;
  std::string cot_thinking;
  std::string final_answer;
  QualityMetrics quality_metrics;
  bool passed_quality_check = false;
  std::vector<Detection> detected_objects;
  std::string ocr_text;
  std::vector<std::string> processing_log;
};

nlohmann::ordered_json to_json(const PipelineRecord& r);

struct CleanConfig {
  double min_score = 0.9;
  QualityWeights weights;
  bool enable_sampling = false;
  std::size_t sample_size = 0;  // records kept by the sampler
  std::size_t max_retries = 2;
  std::uint64_t seed = 1;

  /// Thresholds above 1 are allowed and reject everything.
  void validate() const;
};

struct CleanResult {
  std::vector<PipelineRecord> passed;
  std::vector<PipelineRecord> failed;
  std::vector<PipelineRecord> sampled;  // filled only when sampling is enabled
  bool sampling_ran = false;

  /// The returned set: `sampled` when sampling ran, else `passed`.
  const std::vector<PipelineRecord>& output() const;
};

/// Full cleaning pass for one sample. Client failures produce a failed record
/// with the reason in its processing log; they never propagate.
PipelineRecord clean_record(const SourceSample& sample, const ExternalClients& clients, const CleanConfig& cfg);

/// Gate every sample on overall_score >= min_score, then optionally draw a
/// uniform sample of `sample_size` passed records (kept in input order).
CleanResult clean_dataset(const std::vector<SourceSample>& samples, const ExternalClients& clients,
                          const CleanConfig& cfg);

// ---- key-info distillation (RL data) ----

struct DistillConfig {
  std::size_t samples_per_teacher = 4;  // N
  std::size_t judge_budget = 4;         // B
  double tau_acc = 0.5;
  double tau_coh = 0.5;
  double tau_cons = 0.5;  // carried as configuration, not used by any step
  double w1 = 1.0;
  double w2 = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
  /// Also checks B <= N * teachers.
  void validate(std::size_t teachers) const;
};

/// The B highest-logprob candidates, ties by ascending id; all of them if B is larger.
std::vector<CandidateTrajectory> topk_by_logprob(std::vector<CandidateTrajectory> candidates, std::size_t b);

/// Candidates whose final answer is the most frequent normalized answer; every
/// class tied for the maximum is kept.
std::vector<CandidateTrajectory> self_consistency_filter(const std::vector<CandidateTrajectory>& candidates);

struct VerifyThresholds {
  double tau_acc = 0.5;
  double tau_coh = 0.5;
  double w1 = 1.0;
  double w2 = 1.0;
};

/// Threshold filter, then self-consistency (no gold) or dedup by normalized
/// final answer keeping the best weighted score (gold present). Input order kept.
std::vector<CandidateTrajectory> verify_candidates(const std::vector<CandidateTrajectory>& candidates, bool has_gold,
                                                   const VerifyThresholds& t);

/// Argmax of w1 s_acc + w2 s_coh, ties by ascending id. Throws on an empty list.
const CandidateTrajectory& select_best(const std::vector<CandidateTrajectory>& candidates, double w1, double w2);

/// Runs the extractor and drops application-map entries whose step index is
/// out of range, noting each drop in `log`.
KeyInfo extract_keyinfo(const SourceSample& sample, const CandidateTrajectory& trajectory,
                        KeyInfoExtractor& extractor, std::vector<std::string>& log);

struct DistilledRecord {
  std::string id;
  std::string image_path;
  std::string question;
  std::string answer;  // verified answer
  std::string trajectory;
  std::string teacher;
  double s_acc = 0.0;
  double s_coh = 0.0;
  bool key_info_available = false;
  KeyInfo key_info;
  std::vector<std::string> processing_log;
};

nlohmann::ordered_json to_json(const DistilledRecord& r);

/// Keys and gold answer for reward-core.
RewardItem to_reward_item(const DistilledRecord& r, MatchPolicy policy = MatchPolicy::kNormalizedExact);

struct DistillSummary {
  std::size_t items = 0;
  std::size_t distilled = 0;
  std::size_t skipped = 0;
  std::size_t judge_calls = 0;
  std::size_t max_judge_calls_per_item = 0;
  std::size_t without_key_info = 0;
  std::vector<std::string> diagnostics;  // one line per skipped item
};

nlohmann::ordered_json to_json(const DistillSummary& s);

struct DistillResult {
  std::vector<DistilledRecord> records;
  DistillSummary summary;
};

/// sample -> top-B -> judge -> verify -> select -> extract for every item.
/// Items with no surviving candidate are skipped and listed in the summary.
DistillResult distill(const std::vector<SourceSample>& samples, const ExternalClients& clients,
                      const DistillConfig& cfg);

// ---- deterministic mocks ----

/// 64-bit FNV-1a, used for seeded mock outputs and config hashes.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// Deterministic stream seeded from (seed, tag, key).
class MockStream {
 public:
  MockStream(std::uint64_t seed, std::string_view tag, std::string_view key);
  std::uint64_t next();
  double uniform();  // [0, 1)
  std::size_t below(std::size_t n);

 private:
  std::uint64_t state_;
};

class MockCaptioner : public Captioner {
 public:
  explicit MockCaptioner(std::uint64_t seed) : seed_(seed) {}
  std::string caption(const SourceSample& sample) override;

 private:
  std::uint64_t seed_;
};

class MockDetector : public Detector {
 public:
  explicit MockDetector(std::uint64_t seed) : seed_(seed) {}
  std::vector<Detection> detect(const SourceSample& sample) override;

 private:
  std::uint64_t seed_;
};

class MockOcr : public OcrEngine {
 public:
  /// Throws ClientError for a `failure_rate` fraction of samples (decided per id).
  explicit MockOcr(std::uint64_t seed, double failure_rate = 0.0) : seed_(seed), failure_rate_(failure_rate) {}
  std::string read_text(const SourceSample& sample) override;

 private:
  std::uint64_t seed_;
  double failure_rate_;
};

class MockRestructurer : public Restructurer {
 public:
  /// The first `failures_before_success` calls for each prompt throw ClientError.
  explicit MockRestructurer(std::uint64_t seed, std::size_t failures_before_success = 0)
      : seed_(seed), failures_(failures_before_success) {}
  std::string complete(const std::string& prompt) override;
  const std::vector<std::string>& transcript() const { return transcript_; }

 private:
  std::uint64_t seed_;
  std::size_t failures_;
  std::vector<std::string> transcript_;
  std::vector<std::pair<std::uint64_t, std::size_t>> attempts_;
};

class MockJudge : public Judge {
 public:
  explicit MockJudge(std::uint64_t seed) : seed_(seed) {}
  QualityMetrics assess(const SourceSample& sample, const std::string& formal_description, const std::string& cot,
                        const std::string& answer) override;
  /// s_acc is 1/0 answer agreement when a gold answer exists, else 1.
  JudgeScores judge(const SourceSample& sample, const CandidateTrajectory& candidate) override;
  std::size_t judge_calls() const { return judge_calls_; }

 private:
  std::uint64_t seed_;
  std::size_t judge_calls_ = 0;
};

class MockTeacher : public Teacher {
 public:
  MockTeacher(std::string name, std::uint64_t seed, double accuracy = 0.6)
      : name_(std::move(name)), seed_(seed), accuracy_(accuracy) {}
  std::string name() const override { return name_; }
  std::vector<CandidateTrajectory> generate(const SourceSample& sample, std::size_t n) override;

 private:
  std::string name_;
  std::uint64_t seed_;
  double accuracy_;
};

/// Reads `observe: <fact>` steps as visual facts and `given: <fact>` steps as
/// textual facts linked to their step. Throws ClientError on a `failure_rate`
/// fraction of items.
class MockExtractor : public KeyInfoExtractor {
 public:
  explicit MockExtractor(std::uint64_t seed, double failure_rate = 0.0) : seed_(seed), failure_rate_(failure_rate) {}
  KeyInfo extract(const SourceSample& sample, const CandidateTrajectory& trajectory) override;

 private:
  std::uint64_t seed_;
  double failure_rate_;
};

/// Owns one of each mock, seeded from `seed`, with `teachers` teachers.
struct MockClientSet {
  explicit MockClientSet(std::uint64_t seed, std::size_t teachers = 2);

  MockCaptioner captioner;
  MockDetector detector;
  MockOcr ocr;
  MockRestructurer restructurer;
  MockJudge judge;
  std::vector<MockTeacher> teachers;
  MockExtractor extractor;

  ExternalClients clients();
};

/// A synthetic corpus of `n` samples with ids `sample_0001`.. and gold answers
/// on every item except each `unlabeled_every`-th (0 = all labeled).
std::vector<SourceSample> mock_corpus(std::size_t n, std::uint64_t seed, std::size_t unlabeled_every = 0);

}  // namespace groundrl
