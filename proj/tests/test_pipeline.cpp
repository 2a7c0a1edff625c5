#include <doctest.h>

#include <algorithm>
#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "groundrl/errors.hpp"
#include "groundrl/pipeline.hpp"

using namespace groundrl;
using boost::multiprecision::cpp_rational;

namespace {

std::string read_file(const std::string& name) {
  std::ifstream in(std::string(GROUNDRL_GOLDEN_DIR) + "/" + name, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "missing golden file " << name);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string jsonl(const std::vector<PipelineRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

std::string jsonl(const std::vector<DistilledRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

CandidateTrajectory cand(std::size_t id, double logprob, double acc = 1.0, double coh = 1.0, std::string answer = "a") {
  CandidateTrajectory c;
  c.id = id;
  c.logprob = logprob;
  c.s_acc = acc;
  c.s_coh = coh;
  c.final_answer = std::move(answer);
  c.text = "answer: " + c.final_answer;
  return c;
}

std::vector<std::size_t> ids(const std::vector<CandidateTrajectory>& cs) {
  std::vector<std::size_t> out;
  for (const auto& c : cs) out.push_back(c.id);
  return out;
}

class FailingOcr : public OcrEngine {
 public:
  std::string read_text(const SourceSample&) override { throw ClientError("ocr backend down"); }
};

// Counts judge calls per sample id while delegating to the mock.
class CountingJudge : public Judge {
 public:
  explicit CountingJudge(Judge& inner) : inner_(inner) {}
  QualityMetrics assess(const SourceSample& s, const std::string& f, const std::string& c,
                        const std::string& a) override {
    return inner_.assess(s, f, c, a);
  }
  JudgeScores judge(const SourceSample& s, const CandidateTrajectory& c) override {
    ++calls[s.id];
    return inner_.judge(s, c);
  }
  std::map<std::string, std::size_t> calls;

 private:
  Judge& inner_;
};

class OutOfRangeExtractor : public KeyInfoExtractor {
 public:
  KeyInfo extract(const SourceSample&, const CandidateTrajectory&) override {
    KeyInfo k;
    k.textual.insert("radius = 5 cm");
    k.application_map = {{"radius = 5 cm", 0}, {"radius = 5 cm", 99}};
    return k;
  }
};

}  // namespace

TEST_CASE("build_formal_description sections") {
  CHECK(build_formal_description("a mug on a table", {}, "") == "[layout]\na mug on a table\n");
  CHECK(build_formal_description("  a mug  ", {}, "  \n") == "[layout]\na mug\n");
  CHECK(build_formal_description("cap", {{"mug", {1, 2.5, 3, 4}}}, "") ==
        "[layout]\ncap\n[objects]\n1. mug [1, 2.5, 3, 4]\n");
  CHECK(build_formal_description("cap", {}, "x = 1") == "[layout]\ncap\n[ocr]\nx = 1\n");
  CHECK_THROWS_AS(build_formal_description(" ", {}, ""), std::invalid_argument);
}

TEST_CASE("formal description golden fixture from mock clients") {
  const auto corpus = mock_corpus(100, 7);
  const auto it = std::find_if(corpus.begin(), corpus.end(), [](const auto& s) { return s.id == "sample_0006"; });
  REQUIRE(it != corpus.end());
  MockCaptioner cap(7);
  MockDetector det(7);
  MockOcr ocr(7);
  const auto detections = det.detect(*it);
  REQUIRE(detections.size() == 2);
  CHECK(build_formal_description(cap.caption(*it), detections, ocr.read_text(*it)) ==
        read_file("formal_description_sample_0006.txt"));
}

TEST_CASE("OCR failure falls back to an empty block and is logged") {
  MockClientSet m(3);
  FailingOcr bad;
  ExternalClients c = m.clients();
  c.ocr = &bad;
  CleanConfig cfg;
  cfg.min_score = 0.0;
  const auto sample = mock_corpus(1, 3).front();
  const PipelineRecord r = clean_record(sample, c, cfg);
  CHECK(r.passed_quality_check);
  CHECK(r.ocr_text.empty());
  CHECK(r.formal_description.find("[ocr]") == std::string::npos);
  REQUIRE(r.processing_log.size() == 1);
  CHECK(r.processing_log[0].find("ocr: fallback") == 0);
  CHECK(!r.cot_thinking.empty());
}

TEST_CASE("restructuring never sees the original chain of thought") {
  MockClientSet m(11);
  CleanConfig cfg;
  const auto corpus = mock_corpus(50, 11);
  clean_dataset(corpus, m.clients(), cfg);
  REQUIRE(m.restructurer.transcript().size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::string& prompt = m.restructurer.transcript()[i];
    CHECK(prompt.find(corpus[i].original_cot) == std::string::npos);
    CHECK(prompt.find("[original cot") == std::string::npos);
    CHECK(prompt.find(corpus[i].question) != std::string::npos);
    CHECK(prompt.find("Do not consult the original CoT") != std::string::npos);
  }
}

TEST_CASE("restructure retries then succeeds or fails the record") {
  const auto sample = mock_corpus(1, 5).front();
  SUBCASE("recovers within the retry budget") {
    MockClientSet m(5);
    MockRestructurer flaky(5, 2);
    ExternalClients c = m.clients();
    c.restructurer = &flaky;
    CleanConfig cfg;
    cfg.min_score = 0.0;
    const PipelineRecord r = clean_record(sample, c, cfg);
    CHECK(r.passed_quality_check);
    CHECK(flaky.transcript().size() == 3);
    CHECK(std::count_if(r.processing_log.begin(), r.processing_log.end(),
                        [](const auto& l) { return l.find("restructure: attempt") == 0; }) == 2);
  }
  SUBCASE("gives up after max_retries + 1 attempts") {
    MockClientSet m(5);
    MockRestructurer dead(5, 100);
    ExternalClients c = m.clients();
    c.restructurer = &dead;
    CleanConfig cfg;
    cfg.min_score = 0.0;
    cfg.max_retries = 2;
    const PipelineRecord r = clean_record(sample, c, cfg);
    CHECK_FALSE(r.passed_quality_check);
    CHECK(dead.transcript().size() == 3);
    REQUIRE(r.processing_log.size() == 4);
    CHECK(r.processing_log.back() == "restructure: giving up after 3 attempts");
    const auto result = clean_dataset({sample}, c, cfg);
    CHECK(result.passed.empty());
    CHECK(result.failed.size() == 1);
  }
  SUBCASE("deterministic mock gives a deterministic cot") {
    MockRestructurer a(5), b(5);
    std::vector<std::string> log;
    CHECK(restructure_cot(sample.question, "[layout]\nx\n", a, 0, log) ==
          restructure_cot(sample.question, "[layout]\nx\n", b, 0, log));
    CHECK(log.empty());
  }
}

TEST_CASE("extract_final_answer") {
  CHECK(extract_final_answer("step 1\nanswer: 12 cm\n") == "12 cm");
  CHECK(extract_final_answer("Answer: a\nmore\nANSWER:  b  ") == "b");
  CHECK(extract_final_answer("no marker here\n\nlast line\n\n") == "last line");
  CHECK(extract_final_answer("") == "");
}

TEST_CASE("quality_score") {
  const QualityWeights typical;
  CHECK_NOTHROW(typical.validate());
  QualityMetrics m{0.94, 0.88, 0.97, 1.0, 0.0};
  const double overall = quality_score(m, typical);
  CHECK(overall == doctest::Approx(0.931).epsilon(1e-14));

  // Exactness: the result is the correctly rounded dot product of the binary inputs.
  const cpp_rational exact = cpp_rational(0.30) * cpp_rational(0.94) + cpp_rational(0.35) * cpp_rational(0.88) +
                             cpp_rational(0.30) * cpp_rational(0.97) + cpp_rational(0.05) * cpp_rational(1.0);
  const cpp_rational got(overall);
  CHECK(abs(got - exact) <= abs(cpp_rational(std::nextafter(overall, 2.0)) - exact));
  CHECK(abs(got - exact) <= abs(cpp_rational(std::nextafter(overall, 0.0)) - exact));

  CHECK(quality_score({1, 1, 1, 1, 0}, typical) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(quality_score({0, 0, 0, 0, 0}, typical) == 0.0);
  CHECK(quality_score({1, 1, 1, 1, 0}, {0.25, 0.25, 0.25, 0.25}) == 1.0);

  CHECK_THROWS_AS(QualityWeights({0.30, 0.35, 0.30, 0.06}).validate(), ConfigError);
  CHECK_THROWS_AS(QualityWeights({0.30, 0.35, 0.30, 0.05 + 2e-9}).validate(), ConfigError);
  CHECK_NOTHROW(QualityWeights({0.30, 0.35, 0.30, 0.05 + 5e-10}).validate());
  CHECK_THROWS_AS(QualityWeights({1.2, -0.2, 0.0, 0.0}).validate(), ConfigError);
  CHECK_THROWS_AS(quality_score(m, {0.5, 0.5, 0.5, 0.0}), ConfigError);
  CHECK_THROWS_AS(quality_score({1.5, 0, 0, 0, 0}, typical), InputError);
}

TEST_CASE("clean_dataset gate examples") {
  const auto corpus = mock_corpus(40, 2);
  SUBCASE("min_score 0 passes everything") {
    MockClientSet m(2);
    CleanConfig cfg;
    cfg.min_score = 0.0;
    const auto r = clean_dataset(corpus, m.clients(), cfg);
    CHECK(r.passed.size() == corpus.size());
    CHECK(r.failed.empty());
  }
  SUBCASE("min_score just above 1 fails everything") {
    MockClientSet m(2);
    CleanConfig cfg;
    cfg.min_score = std::nextafter(1.0, 2.0);
    const auto r = clean_dataset(corpus, m.clients(), cfg);
    CHECK(r.passed.empty());
    CHECK(r.failed.size() == corpus.size());
  }
  SUBCASE("invalid config") {
    MockClientSet m(2);
    CleanConfig cfg;
    cfg.min_score = -0.1;
    CHECK_THROWS_AS(clean_dataset(corpus, m.clients(), cfg), ConfigError);
    cfg.min_score = 0.5;
    cfg.weights.misc = 0.5;
    CHECK_THROWS_AS(clean_dataset(corpus, m.clients(), cfg), ConfigError);
  }
}

TEST_CASE("clean_dataset partition matches an independent recount") {
  const auto corpus = mock_corpus(100, 9);
  MockClientSet m(9);
  CleanConfig cfg;
  cfg.min_score = 0.9;
  const auto r = clean_dataset(corpus, m.clients(), cfg);

  std::set<std::string> passed, failed;
  for (const auto& rec : r.passed) passed.insert(rec.id);
  for (const auto& rec : r.failed) failed.insert(rec.id);
  CHECK(passed.size() + failed.size() == corpus.size());
  for (const auto& s : corpus) CHECK(passed.count(s.id) + failed.count(s.id) == 1);
  CHECK(!passed.empty());
  CHECK(!failed.empty());

  // Recount from the per-dimension scores alone, with a plain rational dot product.
  std::set<std::string> expected;
  for (const auto* set : {&r.passed, &r.failed}) {
    for (const auto& rec : *set) {
      const auto& q = rec.quality_metrics;
      const cpp_rational overall = cpp_rational(0.30) * cpp_rational(q.formal_score) +
                                   cpp_rational(0.35) * cpp_rational(q.cot_score) +
                                   cpp_rational(0.30) * cpp_rational(q.answer_score) +
                                   cpp_rational(0.05) * cpp_rational(q.misc_score);
      CHECK(std::fabs(static_cast<double>(overall) - q.overall_score) == 0.0);
      if (overall >= cpp_rational(0.9)) expected.insert(rec.id);
      CHECK(rec.passed_quality_check == (q.overall_score >= 0.9));
    }
  }
  CHECK(expected == passed);

  // Passed records keep input order.
  for (std::size_t i = 1; i < r.passed.size(); ++i) CHECK(r.passed[i - 1].id < r.passed[i].id);
}

TEST_CASE("cleaning output is byte-reproducible and frozen") {
  const auto corpus = mock_corpus(100, 7);
  CleanConfig cfg;
  MockClientSet a(7), b(7), c(8);
  const auto ra = clean_dataset(corpus, a.clients(), cfg);
  const auto rb = clean_dataset(corpus, b.clients(), cfg);
  const auto rc = clean_dataset(corpus, c.clients(), cfg);
  CHECK(jsonl(ra.passed) == jsonl(rb.passed));
  CHECK(jsonl(ra.failed) == jsonl(rb.failed));
  CHECK(jsonl(ra.failed) != jsonl(rc.failed));

  const std::vector<PipelineRecord> head(ra.passed.begin(), ra.passed.begin() + 3);
  CHECK(jsonl(head) == read_file("clean_seed7_head.jsonl"));
}

TEST_CASE("record JSON follows the output schema") {
  MockClientSet m(7);
  CleanConfig cfg;
  cfg.min_score = 0.0;
  const auto r = clean_record(mock_corpus(1, 7).front(), m.clients(), cfg);
  const auto j = to_json(r);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"id", "image_path", "question", "formal_description", "cot_thinking",
                                         "final_answer", "quality_metrics", "passed_quality_check", "metadata",
                                         "processing_log"});
  CHECK(j["quality_metrics"].contains("overall_score"));
  CHECK(j["metadata"].contains("detected_objects"));
  CHECK(j["metadata"].contains("ocr_text"));
  CHECK(j["passed_quality_check"].is_boolean());
}

TEST_CASE("optional sampling stage") {
  const auto corpus = mock_corpus(60, 4);
  CleanConfig cfg;
  cfg.min_score = 0.0;
  MockClientSet m(4);
  auto plain = clean_dataset(corpus, m.clients(), cfg);
  CHECK_FALSE(plain.sampling_ran);
  CHECK(&plain.output() == &plain.passed);

  cfg.enable_sampling = true;
  cfg.sample_size = 10;
  MockClientSet m2(4), m3(4);
  const auto s1 = clean_dataset(corpus, m2.clients(), cfg);
  const auto s2 = clean_dataset(corpus, m3.clients(), cfg);
  REQUIRE(s1.output().size() == 10);
  CHECK(jsonl(s1.output()) == jsonl(s2.output()));
  for (std::size_t i = 1; i < s1.sampled.size(); ++i) CHECK(s1.sampled[i - 1].id < s1.sampled[i].id);

  cfg.sample_size = 1000;
  MockClientSet m4(4);
  CHECK(clean_dataset(corpus, m4.clients(), cfg).output().size() == corpus.size());
  cfg.sample_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("topk_by_logprob") {
  CHECK(ids(topk_by_logprob({cand(0, -1), cand(1, -2), cand(2, -3)}, 1)) == std::vector<std::size_t>{0});
  CHECK(ids(topk_by_logprob({cand(5, -1), cand(3, -1), cand(4, -2)}, 1)) == std::vector<std::size_t>{3});
  CHECK(ids(topk_by_logprob({cand(2, -3), cand(0, -1), cand(1, -2)}, 10)) == std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS_AS(topk_by_logprob({cand(0, -1)}, 0), std::invalid_argument);
}

TEST_CASE("verify_candidates") {
  const VerifyThresholds t{0.9, 0.9, 1.0, 1.0};
  CHECK(verify_candidates({cand(0, 0, 0.95, 0.95)}, true, t).size() == 1);
  CHECK(verify_candidates({cand(0, 0, 0.95, 0.85)}, true, t).empty());
  CHECK(verify_candidates({cand(0, 0, 0.85, 0.95)}, false, t).empty());

  // No gold: modal answer wins, every modal candidate kept.
  CHECK(ids(verify_candidates({cand(0, 0, 1, 1, "A"), cand(1, 0, 1, 1, "B"), cand(2, 0, 1, 1, "A")}, false, t)) ==
        std::vector<std::size_t>{0, 2});
  CHECK(ids(verify_candidates({cand(0, 0, 1, 1, "A"), cand(1, 0, 1, 1, "B")}, false, t)) ==
        std::vector<std::size_t>{0, 1});
  CHECK(ids(verify_candidates({cand(0, 0, 1, 1, "12 cm"), cand(1, 0, 1, 1, " 12  CM ")}, false, t)).size() == 2);

  // Gold present: one survivor per answer, the best weighted score, ties to the lower id.
  CHECK(ids(verify_candidates({cand(0, 0, 1, 0.95, "A"), cand(1, 0, 1, 0.99, "A")}, true, t)) ==
        std::vector<std::size_t>{1});
  CHECK(ids(verify_candidates({cand(3, 0, 1, 1, "A"), cand(1, 0, 1, 1, "a")}, true, t)) ==
        std::vector<std::size_t>{1});
  CHECK(ids(verify_candidates({cand(0, 0, 1, 1, "A"), cand(1, 0, 1, 1, "B")}, true, t)) ==
        std::vector<std::size_t>{0, 1});

  const VerifyThresholds impossible{std::nextafter(1.0, 2.0), 0.0, 1.0, 1.0};
  CHECK(verify_candidates({cand(0, 0, 1, 1)}, true, impossible).empty());
}

TEST_CASE("select_best") {
  const std::vector<CandidateTrajectory> cs = {cand(0, 0, 0.9, 0.2), cand(1, 0, 0.4, 0.95), cand(2, 0, 0.7, 0.7)};
  CHECK(select_best(cs, 1, 0).id == 0);
  CHECK(select_best(cs, 0, 1).id == 1);
  CHECK(select_best(cs, 1, 1).id == 2);
  CHECK(select_best({cand(4, 0, 1, 1), cand(2, 0, 1, 1)}, 1, 1).id == 2);
  CHECK_THROWS_AS(select_best({}, 1, 1), std::invalid_argument);
}

TEST_CASE("select_best is invariant under positive weight scaling") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 5000; ++trial) {
    std::vector<CandidateTrajectory> cs;
    const std::size_t n = 1 + rng() % 8;
    for (std::size_t i = 0; i < n; ++i) {
      // Scores on a coarse grid so ties happen often.
      cs.push_back(cand(rng() % 100, 0, static_cast<double>(rng() % 5) / 4, static_cast<double>(rng() % 5) / 4));
    }
    const double w1 = static_cast<double>(rng() % 4);
    const double w2 = static_cast<double>(1 + rng() % 4);
    const double c = std::ldexp(1.0, static_cast<int>(rng() % 20) - 10);
    CHECK(select_best(cs, w1, w2).id == select_best(cs, c * w1, c * w2).id);
  }
}

TEST_CASE("extract_keyinfo") {
  SUBCASE("golden (V, Z) for a fixture trajectory") {
    CandidateTrajectory t;
    t.text =
        "observe: the circle is red\n"
        "given: Radius = 5 cm\n"
        "\n"
        "observe: chord AB is parallel to CD\n"
        "given: angle is 40 degrees\n"
        "step: the chord spans 40 degrees of the circle\n"
        "given: radius = 5.0 cm\n"
        "answer: 3.42 cm\n";
    MockExtractor ex(1);
    std::vector<std::string> log;
    const KeyInfo k = extract_keyinfo(SourceSample{"fx", "", "q", "", std::nullopt}, t, ex, log);
    nlohmann::ordered_json j;
    j["visual"] = k.visual.strings();
    j["textual"] = k.textual.strings();
    j["application_map"] = nlohmann::ordered_json::array();
    for (const auto& l : k.application_map) j["application_map"].push_back({{"fact", l.fact}, {"step", l.step}});
    CHECK(j.dump(2) + "\n" == read_file("keyinfo_fixture.json"));
    CHECK(log.empty());
  }
  SUBCASE("empty trajectory gives an empty map") {
    MockExtractor ex(1);
    std::vector<std::string> log;
    const KeyInfo k = extract_keyinfo(SourceSample{"e", "", "q", "", std::nullopt}, CandidateTrajectory{}, ex, log);
    CHECK(k.application_map.empty());
    CHECK(k.visual.empty());
    CHECK(k.textual.empty());
  }
  SUBCASE("out-of-range links are dropped and logged") {
    OutOfRangeExtractor ex;
    CandidateTrajectory t;
    t.text = "given: radius = 5 cm\nanswer: 1";
    std::vector<std::string> log;
    const KeyInfo k = extract_keyinfo(SourceSample{"o", "", "q", "", std::nullopt}, t, ex, log);
    REQUIRE(k.application_map.size() == 1);
    CHECK(k.application_map[0].step == 0);
    CHECK(log.size() == 1);
  }
}

TEST_CASE("distill count matches an independent recount") {
  const auto corpus = mock_corpus(20, 13, 4);
  DistillConfig cfg;
  cfg.tau_acc = 0.5;
  cfg.tau_coh = 0.6;
  MockClientSet m(13);
  const DistillResult result = distill(corpus, m.clients(), cfg);

  // Recount with fresh mocks: an item survives iff some top-B candidate passes both thresholds.
  MockClientSet fresh(13);
  std::size_t expected = 0;
  for (const auto& s : corpus) {
    std::vector<CandidateTrajectory> pool;
    for (auto& t : fresh.teachers) {
      for (auto& c : t.generate(s, cfg.samples_per_teacher)) {
        c.id = pool.size();
        pool.push_back(c);
      }
    }
    std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
      return a.logprob != b.logprob ? a.logprob > b.logprob : a.id < b.id;
    });
    bool any = false;
    for (std::size_t i = 0; i < std::min(cfg.judge_budget, pool.size()); ++i) {
      const JudgeScores js = fresh.judge.judge(s, pool[i]);
      any = any || (js.s_acc >= cfg.tau_acc && js.s_coh >= cfg.tau_coh);
    }
    expected += any ? 1 : 0;
  }
  CHECK(result.records.size() == expected);
  CHECK(result.summary.distilled == expected);
  CHECK(result.summary.skipped == corpus.size() - expected);
  CHECK(result.summary.diagnostics.size() == result.summary.skipped);
  CHECK(expected > 0);
  CHECK(expected < corpus.size());

  for (const auto& r : result.records) {
    const auto& s = *std::find_if(corpus.begin(), corpus.end(), [&](const auto& x) { return x.id == r.id; });
    if (s.answer) CHECK(accuracy_reward(r.answer, *s.answer, MatchPolicy::kNumeric) == 1.0);
    CHECK(r.key_info_available);
    const std::size_t steps = enumerate_steps(r.trajectory).size();
    for (const auto& link : r.key_info.application_map) {
      CHECK(link.step < steps);
      CHECK(r.key_info.textual.contains(link.fact));
    }
  }
}

TEST_CASE("judge budget is respected per item") {
  const auto corpus = mock_corpus(30, 21, 3);
  for (std::size_t n : {1u, 2u, 5u}) {
    for (std::size_t teachers : {1u, 3u}) {
      for (std::size_t b = 1; b <= n * teachers; b += 2) {
        MockClientSet m(21, teachers);
        CountingJudge counting(m.judge);
        ExternalClients c = m.clients();
        c.judge = &counting;
        DistillConfig cfg;
        cfg.samples_per_teacher = n;
        cfg.judge_budget = b;
        const auto result = distill(corpus, c, cfg);
        for (const auto& [id, calls] : counting.calls) CHECK(calls <= b);
        CHECK(result.summary.max_judge_calls_per_item <= b);
        CHECK(result.summary.judge_calls == corpus.size() * std::min(b, n * teachers));
      }
    }
  }
  DistillConfig cfg;
  cfg.samples_per_teacher = 2;
  cfg.judge_budget = 5;
  MockClientSet m(1, 2);
  CHECK_THROWS_AS(distill(corpus, m.clients(), cfg), ConfigError);
}

TEST_CASE("distill degenerate and edge configurations") {
  const auto corpus = mock_corpus(20, 13);
  SUBCASE("N = 1, B = 1, one teacher is judge-then-keep") {
    MockClientSet m(13, 1);
    DistillConfig cfg;
    cfg.samples_per_teacher = 1;
    cfg.judge_budget = 1;
    const auto result = distill(corpus, m.clients(), cfg);
    MockClientSet fresh(13, 1);
    std::size_t k = 0;
    for (const auto& s : corpus) {
      const auto only = fresh.teachers[0].generate(s, 1).front();
      const JudgeScores js = fresh.judge.judge(s, only);
      if (js.s_acc >= cfg.tau_acc && js.s_coh >= cfg.tau_coh) {
        REQUIRE(k < result.records.size());
        CHECK(result.records[k].id == s.id);
        CHECK(result.records[k].trajectory == only.text);
        ++k;
      }
    }
    CHECK(k == result.records.size());
  }
  SUBCASE("tau_acc above 1 leaves nothing") {
    MockClientSet m(13);
    DistillConfig cfg;
    cfg.tau_acc = std::nextafter(1.0, 2.0);
    const auto result = distill(corpus, m.clients(), cfg);
    CHECK(result.records.empty());
    CHECK(result.summary.skipped == corpus.size());
  }
  SUBCASE("extractor failure keeps the item without key info") {
    MockClientSet m(13);
    MockExtractor broken(13, 1.0);
    ExternalClients c = m.clients();
    c.extractor = &broken;
    const auto result = distill(corpus, c, DistillConfig{});
    REQUIRE(!result.records.empty());
    CHECK(result.summary.without_key_info == result.records.size());
    for (const auto& r : result.records) {
      CHECK_FALSE(r.key_info_available);
      CHECK(r.key_info.visual.empty());
      CHECK(r.processing_log.back().find("keyinfo: extraction failed") == 0);
    }
  }
  SUBCASE("validation") {
    DistillConfig cfg;
    cfg.w1 = 0;
    cfg.w2 = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = DistillConfig{};
    cfg.judge_budget = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = DistillConfig{};
    cfg.tau_coh = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_THROWS_AS(DistillConfig{}.validate(0), ConfigError);
  }
}

TEST_CASE("distill is deterministic and its keys feed the reward") {
  const auto corpus = mock_corpus(20, 13, 5);
  MockClientSet a(13), b(13);
  const auto ra = distill(corpus, a.clients(), DistillConfig{});
  const auto rb = distill(corpus, b.clients(), DistillConfig{});
  CHECK(jsonl(ra.records) == jsonl(rb.records));
  CHECK(to_json(ra.summary).dump() == to_json(rb.summary).dump());

  REQUIRE(!ra.records.empty());
  const DistilledRecord& rec = ra.records.front();
  const RewardItem item = to_reward_item(rec, MatchPolicy::kNumeric);
  std::string description, think;
  for (const auto& k : item.visual_keys.strings()) description += k + ". ";
  for (const auto& k : item.textual_keys.strings()) think += k + ". ";
  const std::string rollout = "<description>" + description + "</description><think>" + think +
                              "</think><answer>" + rec.answer + "</answer>";
  const RewardBreakdown br = score_rollout(rollout, item, RewardWeights{}, RewardConfig{});
  CHECK(br.acc == 1.0);
  CHECK(br.fmt == 1.0);
  CHECK(br.vkey == 1.0);
  CHECK(br.tkey == 1.0);
}

TEST_CASE("reading samples") {
  std::istringstream in(
      "{\"id\":\"a\",\"question\":\"q\",\"answer\":\"1\",\"extra\":3}\n\n"
      "{\"id\":\"b\",\"question\":\"q2\",\"image_path\":\"x.png\",\"cot\":\"old\"}\n");
  const auto samples = read_samples(in);
  REQUIRE(samples.size() == 2);
  CHECK(samples[0].answer == std::optional<std::string>("1"));
  CHECK_FALSE(samples[1].answer.has_value());
  CHECK(samples[1].original_cot == "old");
  CHECK(samples[1].image_path == "x.png");

  std::istringstream bad_json("{\"id\":\"a\",\"question\":\"q\"}\n{oops\n");
  CHECK_THROWS_WITH_AS(read_samples(bad_json), doctest::Contains("line 2"), InputError);
  std::istringstream missing("{\"question\":\"q\"}\n");
  CHECK_THROWS_AS(read_samples(missing), InputError);
  std::istringstream wrong_type("{\"id\":\"a\",\"question\":5}\n");
  CHECK_THROWS_AS(read_samples(wrong_type), InputError);
}

TEST_CASE("mock clients are pure functions of input and seed") {
  const auto corpus = mock_corpus(10, 3);
  MockCaptioner c1(3), c2(3), c3(4);
  MockDetector d1(3), d2(3);
  MockTeacher t1("t", 3), t2("t", 3);
  bool differs = false;
  for (const auto& s : corpus) {
    CHECK(c1.caption(s) == c2.caption(s));
    CHECK(c1.caption(s) == c1.caption(s));
    differs = differs || c1.caption(s) != c3.caption(s);
    CHECK(d1.detect(s) == d2.detect(s));
    const auto a = t1.generate(s, 3);
    const auto b = t2.generate(s, 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(a[i].text == b[i].text);
      CHECK(a[i].logprob == b[i].logprob);
    }
  }
  CHECK(differs);
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}
