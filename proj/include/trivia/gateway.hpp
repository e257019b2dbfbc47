// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0
//
// The single boundary to external models. Four roles share one chat-completion
// protocol; every backend is reached through Gateway, which enforces the
// per-role in-flight cap and the bounded retry policy.

#pragma once

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace trivia {

enum class Role { kPolicy, kTeacher, kValidator, kAnswerer };

std::string_view to_string(Role role);
std::optional<Role> parse_role(std::string_view name);

struct ContentPart {
  enum class Kind { kText, kImage };
  Kind kind = Kind::kText;
  std::string value;  // text, or image file path / data URL

  static ContentPart text(std::string s) { return {Kind::kText, std::move(s)}; }
  static ContentPart image(std::string ref) { return {Kind::kImage, std::move(ref)}; }
};

struct ChatMessage {
  std::string speaker = "user";
  std::vector<ContentPart> parts;
};

struct ChatRequest {
  Role role = Role::kPolicy;
  std::vector<ChatMessage> messages;
  double temperature = 1.0;
  int n_samples = 1;
  int max_tokens = 4096;
  std::optional<std::uint64_t> seed;

  bool has_image() const;
};

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ChatReply {
  std::vector<std::string> choices;
  Usage usage;
  double latency_ms = 0.0;
  std::string endpoint_id;
  int attempts = 1;
};

class GatewayError : public std::runtime_error {
 public:
  enum class Kind {
    kUnreachable,
    kAuthRejected,
    kMalformedReply,
    kFixtureMissing,
    kNotConfigured,
    kInvalidRequest,
  };
  GatewayError(Kind kind, Role role, const std::string& what)
      : std::runtime_error(std::string(to_string(role)) + ": " + what), kind_(kind), role_(role) {}
  Kind kind() const { return kind_; }
  Role role() const { return role_; }

 private:
  Kind kind_;
  Role role_;
};

/// Thrown by backends for failures worth retrying: transport errors, HTTP 429
/// and 5xx.
class TransientError : public std::runtime_error {
 public:
  TransientError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct RetryPolicy {
  int max_attempts = 4;
  double backoff_base_ms = 500.0;
  double backoff_max_ms = 30000.0;
};

/// Endpoint settings for one role. The auth token itself is never stored;
/// only the name of the environment variable holding it.
struct RoleConfig {
  std::string endpoint;
  std::string model;
  std::string auth_env;
  double timeout_s = 120.0;
  RetryPolicy retry;
  int max_concurrency = 4;
  bool vision = true;

  static RoleConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatReply complete(const ChatRequest& request) = 0;
};

/// Canonical request form: role, messages (speaker + typed parts), sampling
/// settings. Used for fixture keys and as the body the HTTP adapter derives
/// its payload from.
nlohmann::json canonical_request(const ChatRequest& request);

/// 16 hex digits: FNV-1a 64 over the canonical JSON dump.
std::string request_key(const ChatRequest& request);

/// messages-array chat-completion body (OpenAI-compatible). Image files are
/// inlined as base64 data URLs.
nlohmann::json chat_completion_body(const ChatRequest& request, const RoleConfig& config);

/// Parses a chat-completion reply body; throws GatewayError(kMalformedReply).
ChatReply parse_chat_completion(std::string_view body, Role role);

class HttpBackend : public ChatBackend {
 public:
  explicit HttpBackend(RoleConfig config);
  ChatReply complete(const ChatRequest& request) override;

 private:
  RoleConfig config_;
  std::string base_;  // scheme://host[:port]
  std::string path_;
};

/// Replies come from a fixture directory: manifest.json plus one
/// <request_key>.json file per recorded request. Requests without a fixture
/// either fault (strict) or get the manifest's default reply.
class MockBackend : public ChatBackend {
 public:
  explicit MockBackend(const std::filesystem::path& fixture_dir);
  ChatReply complete(const ChatRequest& request) override;

  bool strict() const { return strict_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::filesystem::path dir_;
  bool strict_ = true;
  std::string default_reply_;
  std::map<std::string, std::string> entries_;  // key -> file name
};

/// Forwards to `inner` and writes every exchange into a fixture directory
/// readable by MockBackend. Call finish() to write the manifest.
class RecordingBackend : public ChatBackend {
 public:
  RecordingBackend(std::shared_ptr<ChatBackend> inner, std::filesystem::path fixture_dir);
  ChatReply complete(const ChatRequest& request) override;
  void finish() const;

 private:
  std::shared_ptr<ChatBackend> inner_;
  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::string> entries_;
};

/// Counting gate capping concurrent holders.
class InFlightLimiter {
 public:
  explicit InFlightLimiter(int capacity) : capacity_(capacity < 1 ? 1 : capacity) {}
  void acquire();
  void release();
  int in_flight() const;
  int peak() const;

 private:
  int capacity_;
  int in_flight_ = 0;
  int peak_ = 0;
  mutable std::mutex mu_;
  std::condition_variable cv_;
};

class Gateway {
 public:
  using Sleeper = std::function<void(double ms)>;
  using Logger = std::function<void(const std::string& line)>;

  Gateway();

  /// Registers (or replaces) the backend serving a role.
  void configure(Role role, RoleConfig config, std::shared_ptr<ChatBackend> backend);

  /// Every role is served by the fixture directory.
  static std::shared_ptr<Gateway> from_mock(const std::filesystem::path& fixture_dir);

  /// Every role listed in the endpoint config file gets an HttpBackend.
  static std::shared_ptr<Gateway> from_config_file(const std::filesystem::path& path);

  bool configured(Role role) const;
  const RoleConfig& config(Role role) const;

  /// Sends the request to its role's backend, holding an in-flight slot for
  /// the whole exchange. Transient failures are retried up to
  /// retry.max_attempts total attempts with jittered exponential backoff.
  ChatReply chat(const ChatRequest& request);

  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }
  void set_logger(Logger logger) { logger_ = std::move(logger); }

  int peak_in_flight(Role role) const;
  std::uint64_t retries(Role role) const;

  /// Delay before retry number `retry` (1-based): base * 2^(retry-1), capped,
  /// scaled by a jitter factor in [0.5, 1].
  double backoff_ms(const RetryPolicy& policy, int retry);

 private:
  struct Slot {
    RoleConfig config;
    std::shared_ptr<ChatBackend> backend;
    std::unique_ptr<InFlightLimiter> limiter;
    std::uint64_t retries = 0;
  };

  Slot& slot(Role role);
  const Slot& slot(Role role) const;
  void log(const std::string& line) const;

  std::map<Role, Slot> slots_;
  mutable std::mutex mu_;
  std::mt19937_64 jitter_rng_;
  Sleeper sleeper_;
  Logger logger_;
};

}  // namespace trivia
