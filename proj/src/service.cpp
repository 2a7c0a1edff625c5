#include "groundrl/service.hpp"

#include <algorithm>
#include <set>
#include <thread>
#include <vector>

#include <httplib.h>

#include "groundrl/errors.hpp"
#include "groundrl/template_parser.hpp"

namespace groundrl {

using nlohmann::json;

namespace {

json error_body(std::string message) { return json{{"error", {{"message", std::move(message)}}}}; }

const std::set<std::string>& item_keys() {
  static const std::set<std::string> keys = {"id",       "rollout_text", "gold_answer", "match_policy", "visual_keys",
                                             "textual_keys", "question", "step",        "total_steps"};
  return keys;
}

std::string string_field(const json& item, const char* key) {
  auto it = item.find(key);
  if (it == item.end()) return {};
  if (!it->is_string()) throw InputError(std::string("'") + key + "' must be a string");
  return it->get<std::string>();
}

FactSet key_field(const json& item, const char* key) {
  FactSet out;
  auto it = item.find(key);
  if (it == item.end()) return out;
  if (!it->is_array()) throw InputError(std::string("'") + key + "' must be an array of strings");
  for (const json& k : *it) {
    if (!k.is_string()) throw InputError(std::string("'") + key + "' must be an array of strings");
    out.insert(k.get<std::string>());
  }
  return out;
}

std::int64_t int_field(const json& item, const char* key, std::int64_t fallback) {
  auto it = item.find(key);
  if (it == item.end()) return fallback;
  if (!it->is_number_integer()) throw InputError(std::string("'") + key + "' must be an integer");
  return it->get<std::int64_t>();
}

}  // namespace

RequestError::RequestError(int status, json body)
    : std::runtime_error(body.dump()), status_(status), body_(std::move(body)) {}

json breakdown_json(const RewardBreakdown& b) {
  return json{{"acc", b.acc},   {"fmt", b.fmt},   {"vkey", b.vkey},   {"tkey", b.tkey},
              {"rep", b.rep},   {"cons", b.cons}, {"total", b.total}, {"weights", weights_json(b.weights)}};
}

json diagnostics_json(const FormatDiagnostics& d) {
  json opens = json::object(), closes = json::object();
  for (std::size_t i = 0; i < kSegmentNames.size(); ++i) {
    opens[std::string(kSegmentNames[i])] = d.open_counts[i];
    closes[std::string(kSegmentNames[i])] = d.close_counts[i];
  }
  json spans = json::array();
  for (const TextSpan& s : d.stray_text_spans) spans.push_back(json::array({s.offset, s.length}));
  return json{{"well_formed", d.well_formed},
              {"open_counts", opens},
              {"close_counts", closes},
              {"order_violations", d.order_violations},
              {"stray_text_spans", spans}};
}

ScoringEngine::ScoringEngine(RewardConfig cfg, std::size_t max_batch, std::size_t threads)
    : cfg_(std::move(cfg)), max_batch_(max_batch), threads_(threads) {
  cfg_.validate();
  if (max_batch_ == 0) throw ConfigError("max_batch must be at least 1");
  if (threads_ == 0) threads_ = std::max(1u, std::thread::hardware_concurrency());
  hash_ = groundrl::config_hash(cfg_);
}

json ScoringEngine::score_item(const json& item, std::size_t index) const {
  try {
    if (!item.is_object()) throw InputError("item must be an object");
    for (const auto& [k, v] : item.items()) {
      if (!item_keys().count(k)) throw InputError("unknown field '" + k + "'");
    }
    auto text_it = item.find("rollout_text");
    if (text_it == item.end() || !text_it->is_string()) throw InputError("'rollout_text' must be a string");

    RewardItem ri;
    ri.gold = string_field(item, "gold_answer");
    ri.question = string_field(item, "question");
    if (item.contains("match_policy")) {
      const std::string name = string_field(item, "match_policy");
      const auto policy = parse_match_policy(name);
      if (!policy) throw InputError("unknown match_policy '" + name + "'");
      ri.policy = *policy;
    }
    ri.visual_keys = key_field(item, "visual_keys");
    ri.textual_keys = key_field(item, "textual_keys");
    const std::int64_t step = int_field(item, "step", 0);
    const std::int64_t total = int_field(item, "total_steps", 1);
    if (total < 1) throw InputError("'total_steps' must be at least 1");
    if (step < 0 || step > total) throw InputError("'step' must lie in [0, total_steps]");

    const std::string& text = text_it->get_ref<const std::string&>();
    const ParseResult parsed = parse_structured(text);
    const RewardWeights weights = schedule_weights(step, total, cfg_.schedule);
    const RewardBreakdown b = total_reward(text, parsed, ri, weights, cfg_);

    json out{{"index", index}, {"breakdown", breakdown_json(b)}, {"format", diagnostics_json(parsed.diagnostics)}};
    if (item.contains("id")) out["id"] = item["id"];
    return out;
  } catch (const InputError& e) {
    json out{{"index", index}, {"error", e.what()}};
    if (item.is_object() && item.contains("id")) out["id"] = item["id"];
    return out;
  }
}

json summarize_results(const json& results) {
  std::size_t scored = 0, errors = 0, well_formed = 0;
  std::vector<double> totals;
  for (const json& r : results) {
    if (r.contains("error")) {
      ++errors;
      continue;
    }
    ++scored;
    totals.push_back(r["breakdown"]["total"].get<double>());
    if (r["format"]["well_formed"].get<bool>()) ++well_formed;
  }
  const double mean = totals.empty() ? 0.0 : exact_sum(totals) / static_cast<double>(totals.size());
  return json{{"items", results.size()},
              {"scored", scored},
              {"errors", errors},
              {"well_formed", well_formed},
              {"mean_total", mean}};
}

json ScoringEngine::score_request(const json& request) const {
  if (!request.is_object()) throw RequestError(400, error_body("request must be a JSON object"));
  for (const auto& [k, v] : request.items()) {
    if (k != "items") throw RequestError(400, error_body("unknown request field '" + k + "'"));
  }
  auto it = request.find("items");
  if (it == request.end() || !it->is_array()) throw RequestError(400, error_body("'items' must be an array"));
  const json& items = *it;
  if (items.empty()) throw RequestError(400, error_body("batch is empty"));
  if (items.size() > max_batch_) {
    json body = error_body("batch of " + std::to_string(items.size()) + " items exceeds the limit");
    body["error"]["limit"] = max_batch_;
    throw RequestError(413, body);
  }

  std::vector<json> results(items.size());
  const std::size_t workers = std::min(threads_, items.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < items.size(); ++i) results[i] = score_item(items[i], i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < items.size(); i = next++) results[i] = score_item(items[i], i);
      });
    }
    for (auto& t : pool) t.join();
  }

  json out_results = json::array();
  for (auto& r : results) out_results.push_back(std::move(r));
  json summary = summarize_results(out_results);
  return json{{"engine_version", kEngineVersion},
              {"config_hash", hash_},
              {"results", std::move(out_results)},
              {"summary", std::move(summary)}};
}

std::string ScoringEngine::score_body(std::string_view body) const {
  json request;
  try {
    request = json::parse(body);
  } catch (const json::exception& e) {
    throw RequestError(400, error_body(std::string("malformed JSON: ") + e.what()));
  }
  return canonical_dump(score_request(request));
}

RewardService::RewardService(const ScoringEngine& engine, ServiceConfig cfg)
    : engine_(engine), cfg_(cfg), server_(std::make_unique<httplib::Server>()),
      started_(std::chrono::steady_clock::now()) {
  cfg_.validate();
  server_->set_payload_max_length(cfg_.max_body_bytes);
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
  });
  const std::size_t threads = cfg_.threads ? cfg_.threads : std::max(8u, std::thread::hardware_concurrency());
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };

  server_->Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      res.set_content(engine_.score_body(req.body), "application/json");
      ++served_;
    } catch (const RequestError& e) {
      res.status = e.status();
      res.set_content(canonical_dump(e.body()), "application/json");
    }
  });
  server_->Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(canonical_dump(health()), "application/json");
  });
  server_->set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    json body = error_body(httplib::status_message(res.status));
    res.set_content(canonical_dump(body), "application/json");
  });
}

RewardService::~RewardService() { stop(); }

bool RewardService::bind(const std::string& host, int port) {
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
    return port_ > 0;
  }
  if (!server_->bind_to_port(host, port)) return false;
  port_ = port;
  return true;
}

void RewardService::run() { server_->listen_after_bind(); }

void RewardService::stop() {
  if (server_) server_->stop();
}

json RewardService::health() const {
  const double uptime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  return json{{"status", "ok"},
              {"version", kEngineVersion},
              {"uptime_seconds", uptime},
              {"requests_served", served_.load()},
              {"config_hash", engine_.config_hash()}};
}

}  // namespace groundrl
