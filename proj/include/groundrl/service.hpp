#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "groundrl/config.hpp"
#include "groundrl/reward.hpp"

namespace httplib {
class Server;
}

namespace groundrl {

inline constexpr std::string_view kEngineVersion = "1.0.0";

/// A request rejected as a whole. `body` is the JSON error document.
class RequestError : public std::runtime_error {
 public:
  RequestError(int status, nlohmann::json body);
  int status() const { return status_; }
  const nlohmann::json& body() const { return body_; }

 private:
  int status_;
  nlohmann::json body_;
};

nlohmann::json breakdown_json(const RewardBreakdown& b);
nlohmann::json diagnostics_json(const FormatDiagnostics& d);

/// Stateless batch scorer. Every method is const and safe to call concurrently.
class ScoringEngine {
 public:
  explicit ScoringEngine(RewardConfig cfg, std::size_t max_batch = 1024, std::size_t threads = 1);

  const RewardConfig& config() const { return cfg_; }
  const std::string& config_hash() const { return hash_; }
  std::size_t max_batch() const { return max_batch_; }

  /// Scores one request item. A malformed item yields `{"index", "error"}`
  /// instead of throwing.
  nlohmann::json score_item(const nlohmann::json& item, std::size_t index) const;

  /// Response document for a parsed request `{"items": [...]}`. Throws
  /// RequestError (400 or 413) when the request as a whole is unusable.
  nlohmann::json score_request(const nlohmann::json& request) const;

  /// Parses the body, scores it and returns canonical JSON bytes.
  std::string score_body(std::string_view body) const;

 private:
  RewardConfig cfg_;
  std::string hash_;
  std::size_t max_batch_;
  std::size_t threads_;
};

/// Batch summary over item results: counts and the mean total of scored items.
nlohmann::json summarize_results(const nlohmann::json& results);

/// HTTP front end: `POST /score` and `GET /health`.
class RewardService {
 public:
  RewardService(const ScoringEngine& engine, ServiceConfig cfg);
  ~RewardService();
  RewardService(const RewardService&) = delete;
  RewardService& operator=(const RewardService&) = delete;

  /// Returns false when the address cannot be bound. Port 0 picks a free port.
  bool bind(const std::string& host, int port);
  int port() const { return port_; }

  /// Serves until stop() is called.
  void run();
  void stop();

  std::uint64_t requests_served() const { return served_.load(); }
  nlohmann::json health() const;

 private:
  const ScoringEngine& engine_;
  ServiceConfig cfg_;
  std::unique_ptr<httplib::Server> server_;
  std::atomic<std::uint64_t> served_{0};
  std::chrono::steady_clock::time_point started_;
  int port_ = -1;
};

}  // namespace groundrl
