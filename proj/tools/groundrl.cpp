#include <csignal>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <pthread.h>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "groundrl/config.hpp"
#include "groundrl/errors.hpp"
#include "groundrl/pipeline.hpp"
#include "groundrl/service.hpp"
#include "groundrl/simulator.hpp"

namespace {

using nlohmann::json;
using namespace groundrl;

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kConfig = 2,
  kInput = 3,
  kAbort = 4,
  kBind = 5,
};

class BindError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string input = "-";
  std::string output = "-";
  std::string keys;
  std::string rejected;
  std::string listen = "127.0.0.1:8080";
  bool no_vkey = false;
  bool no_tkey = false;
  bool no_cons = false;
  std::size_t count = 100;
  std::size_t unlabeled_every = 0;
};

AppConfig load(const Options& opt) {
  AppConfig cfg = opt.config_path.empty() ? config_from_json(json::object()) : load_config(opt.config_path);
  if (opt.seed) {
    cfg.clean.seed = *opt.seed;
    cfg.distill.seed = *opt.seed;
    cfg.simulate.seed = *opt.seed;
  }
  return cfg;
}

// Input stream for a path, "-" meaning stdin.
class Input {
 public:
  explicit Input(const std::string& path) {
    if (path == "-") return;
    file_ = std::make_unique<std::ifstream>(path);
    if (!*file_) throw InputError("cannot open input file " + path);
  }
  std::istream& get() { return file_ ? *file_ : std::cin; }

 private:
  std::unique_ptr<std::ifstream> file_;
};

class Output {
 public:
  explicit Output(const std::string& path) {
    if (path == "-") return;
    file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
    if (!*file_) throw InputError("cannot open output file " + path);
  }
  std::ostream& get() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

std::map<std::string, json> read_keys(const std::string& path) {
  std::map<std::string, json> keys;
  if (path.empty()) return keys;
  Input in(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in.get(), line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw InputError("keys file line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) {
      throw InputError("keys file line " + std::to_string(lineno) + ": needs a string 'id'");
    }
    std::string id = j["id"].get<std::string>();
    keys[std::move(id)] = std::move(j);
  }
  return keys;
}

// Fills fields the rollout line leaves out from its keys record.
void merge_keys(json& item, const json& keys) {
  auto take = [&](const char* from, const char* to) {
    if (!item.contains(to) && keys.contains(from)) item[to] = keys[from];
  };
  take("gold_answer", "gold_answer");
  take("answer", "gold_answer");
  take("match_policy", "match_policy");
  take("visual_keys", "visual_keys");
  take("textual_keys", "textual_keys");
  take("question", "question");
}

int run_score(const Options& opt) {
  const AppConfig cfg = load(opt);
  const ScoringEngine engine(cfg.reward, cfg.service.max_batch, 1);
  const auto keys = read_keys(opt.keys);
  Input in(opt.input);
  Output out(opt.output);

  json results = json::array();
  std::string line;
  std::size_t lineno = 0, index = 0;
  while (std::getline(in.get(), line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json result;
    try {
      json item = json::parse(line);
      if (item.is_object() && item.contains("id") && item["id"].is_string()) {
        auto it = keys.find(item["id"].get<std::string>());
        if (it != keys.end()) merge_keys(item, it->second);
      }
      result = engine.score_item(item, index);
    } catch (const json::exception& e) {
      result = json{{"index", index}, {"error", "line " + std::to_string(lineno) + ": malformed JSON: " + e.what()}};
    }
    out.get() << canonical_dump(result) << '\n';
    results.push_back(std::move(result));
    ++index;
  }
  std::cerr << canonical_dump(json{{"summary", summarize_results(results)}, {"config_hash", engine.config_hash()}})
            << '\n';
  return kOk;
}

std::pair<std::string, int> parse_listen(const std::string& listen) {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos || colon == 0) throw ConfigError("--listen expects host:port, got " + listen);
  try {
    std::size_t used = 0;
    const int port = std::stoi(listen.substr(colon + 1), &used);
    if (used != listen.size() - colon - 1 || port < 0 || port > 65535) throw std::out_of_range("port");
    return {listen.substr(0, colon), port};
  } catch (const std::logic_error&) {
    throw ConfigError("--listen has an invalid port: " + listen);
  }
}

int run_serve(const Options& opt) {
  const AppConfig cfg = load(opt);
  const auto [host, port] = parse_listen(opt.listen);

  // Block the stop signals before any thread starts so only sigwait sees them.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  const ScoringEngine engine(cfg.reward, cfg.service.max_batch, 1);
  RewardService service(engine, cfg.service);
  if (!service.bind(host, port)) throw BindError("cannot bind " + opt.listen);
  std::cerr << "listening on " << host << ":" << service.port() << " (config " << engine.config_hash() << ")"
            << std::endl;

  std::thread server([&] { service.run(); });
  int sig = 0;
  sigwait(&stop_signals, &sig);
  service.stop();
  server.join();
  std::cerr << canonical_dump(json{{"signal", sig}, {"requests_served", service.requests_served()}}) << std::endl;
  return kOk;
}

int run_simulate(const Options& opt) {
  AppConfig cfg = load(opt);
  SimulationConfig sim = cfg.simulate;
  sim.no_vkey = sim.no_vkey || opt.no_vkey;
  sim.no_tkey = sim.no_tkey || opt.no_tkey;
  sim.no_cons = sim.no_cons || opt.no_cons;
  const KeyFactWorld world = KeyFactWorld::generate(cfg.world, sim.seed);
  Output out(opt.output);
  const SimulationResult result =
      simulate_training(world, sim, [&](const UpdateRecord& r) { out.get() << to_json(r).dump() << '\n'; });
  out.get().flush();
  nlohmann::ordered_json summary{{"seed", sim.seed},
                                 {"updates", result.curve.size()},
                                 {"no_vkey", sim.no_vkey},
                                 {"no_tkey", sim.no_tkey},
                                 {"no_cons", sim.no_cons},
                                 {"initial", to_json(result.initial)},
                                 {"final", to_json(result.final)}};
  std::cerr << summary.dump() << '\n';
  return kOk;
}

int run_clean(const Options& opt) {
  const AppConfig cfg = load(opt);
  Input in(opt.input);
  const std::vector<SourceSample> samples = read_samples(in.get());
  MockClientSet mocks(cfg.clean.seed, cfg.mock_teachers);
  const CleanResult result = clean_dataset(samples, mocks.clients(), cfg.clean);
  Output out(opt.output);
  for (const auto& r : result.output()) out.get() << to_json(r).dump() << '\n';
  if (!opt.rejected.empty()) {
    Output rej(opt.rejected);
    for (const auto& r : result.failed) rej.get() << to_json(r).dump() << '\n';
  }
  std::cerr << nlohmann::ordered_json{{"records", samples.size()},
                                      {"passed", result.passed.size()},
                                      {"failed", result.failed.size()},
                                      {"written", result.output().size()}}
                   .dump()
            << '\n';
  return kOk;
}

int run_distill(const Options& opt) {
  const AppConfig cfg = load(opt);
  Input in(opt.input);
  const std::vector<SourceSample> samples = read_samples(in.get());
  MockClientSet mocks(cfg.distill.seed, cfg.mock_teachers);
  const DistillResult result = distill(samples, mocks.clients(), cfg.distill);
  Output out(opt.output);
  for (const auto& r : result.records) out.get() << to_json(r).dump() << '\n';
  std::cerr << to_json(result.summary).dump() << '\n';
  return kOk;
}

int run_mock_corpus(const Options& opt) {
  Output out(opt.output);
  for (const auto& s : mock_corpus(opt.count, opt.seed.value_or(1), opt.unlabeled_every)) {
    out.get() << to_json(s).dump() << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grounded multimodal reasoning rewards: scoring, service, toy training and data pipeline"};
  app.require_subcommand(1);
  Options opt;
  app.add_option("--config", opt.config_path, "JSON config file (defaults apply when omitted)")->envname("GROUNDRL_CONFIG");
  app.add_option("--seed", opt.seed, "Seed for every random source (default 1)");

  auto* score = app.add_subcommand("score", "Score rollouts from a JSONL file");
  score->add_option("--input", opt.input, "Rollout JSONL, one request item per line (- for stdin)");
  score->add_option("--keys", opt.keys, "JSONL of per-id gold answers and key sets");
  score->add_option("--output", opt.output, "Per-item result JSONL (- for stdout)");

  auto* serve = app.add_subcommand("serve", "Run the reward-scoring HTTP service");
  serve->add_option("--listen", opt.listen, "host:port to listen on")->envname("GROUNDRL_LISTEN")->capture_default_str();

  auto* simulate = app.add_subcommand("simulate", "Train the toy policy and write its learning curve");
  simulate->add_option("--output", opt.output, "Learning-curve JSONL (- for stdout)");
  simulate->add_flag("--no-vkey", opt.no_vkey, "Drop the visual key reward");
  simulate->add_flag("--no-tkey", opt.no_tkey, "Drop the textual key reward");
  simulate->add_flag("--no-cons", opt.no_cons, "Drop the consistency reward");

  auto* clean = app.add_subcommand("clean", "Clean an SFT dataset with the mock model clients");
  clean->add_option("--input", opt.input, "Sample JSONL (- for stdin)");
  clean->add_option("--output", opt.output, "Passed (or sampled) record JSONL");
  clean->add_option("--rejected", opt.rejected, "Optional JSONL for failed records");

  auto* distill_cmd = app.add_subcommand("distill", "Distill RL items with key info using the mock model clients");
  distill_cmd->add_option("--input", opt.input, "Sample JSONL (- for stdin)");
  distill_cmd->add_option("--output", opt.output, "Distilled record JSONL");

  auto* corpus = app.add_subcommand("mock-corpus", "Write a synthetic sample JSONL for clean and distill");
  corpus->add_option("--count", opt.count, "Number of samples")->check(CLI::PositiveNumber);
  corpus->add_option("--unlabeled-every", opt.unlabeled_every, "Drop the answer of every k-th sample (0 keeps all)");
  corpus->add_option("--output", opt.output, "Sample JSONL (- for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (score->parsed()) return run_score(opt);
    if (serve->parsed()) return run_serve(opt);
    if (simulate->parsed()) return run_simulate(opt);
    if (clean->parsed()) return run_clean(opt);
    if (distill_cmd->parsed()) return run_distill(opt);
    if (corpus->parsed()) return run_mock_corpus(opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInput;
  } catch (const RuntimeAbort& e) {
    std::cerr << "run aborted: " << e.what() << '\n';
    return kAbort;
  } catch (const BindError& e) {
    std::cerr << "bind failed: " << e.what() << '\n';
    return kBind;
  }
  return kUsage;
}
