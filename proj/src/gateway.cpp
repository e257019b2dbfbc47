// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include "trivia/gateway.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

namespace trivia {

using nlohmann::json;

namespace {

class SlotGuard {
 public:
  explicit SlotGuard(InFlightLimiter& limiter) : limiter_(limiter) { limiter_.acquire(); }
  ~SlotGuard() { limiter_.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  InFlightLimiter& limiter_;
};

}  // namespace

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kPolicy: return "policy";
    case Role::kTeacher: return "teacher";
    case Role::kValidator: return "validator";
    case Role::kAnswerer: return "answerer";
  }
  return "unknown";
}

std::optional<Role> parse_role(std::string_view name) {
  for (Role r : {Role::kPolicy, Role::kTeacher, Role::kValidator, Role::kAnswerer}) {
    if (to_string(r) == name) return r;
  }
  return std::nullopt;
}

bool ChatRequest::has_image() const {
  for (const auto& m : messages)
    for (const auto& p : m.parts)
      if (p.kind == ContentPart::Kind::kImage) return true;
  return false;
}

RoleConfig RoleConfig::from_json(const json& j) {
  RoleConfig c;
  c.endpoint = j.value("endpoint", "");
  c.model = j.value("model", "");
  c.auth_env = j.value("auth_env", "");
  c.timeout_s = j.value("timeout_s", c.timeout_s);
  c.max_concurrency = j.value("max_concurrency", c.max_concurrency);
  c.vision = j.value("vision", c.vision);
  if (j.contains("retry")) {
    const json& r = j.at("retry");
    c.retry.max_attempts = r.value("max_attempts", c.retry.max_attempts);
    c.retry.backoff_base_ms = r.value("backoff_base_ms", c.retry.backoff_base_ms);
    c.retry.backoff_max_ms = r.value("backoff_max_ms", c.retry.backoff_max_ms);
  }
  if (c.max_concurrency < 1) throw std::invalid_argument("max_concurrency must be >= 1");
  if (c.retry.max_attempts < 1) throw std::invalid_argument("retry.max_attempts must be >= 1");
  return c;
}

json RoleConfig::to_json() const {
  json j = json::object();
  j["endpoint"] = endpoint;
  j["model"] = model;
  j["auth_env"] = auth_env;
  j["timeout_s"] = timeout_s;
  j["max_concurrency"] = max_concurrency;
  j["vision"] = vision;
  j["retry"] = {{"max_attempts", retry.max_attempts},
                {"backoff_base_ms", retry.backoff_base_ms},
                {"backoff_max_ms", retry.backoff_max_ms}};
  return j;
}

json canonical_request(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    json parts = json::array();
    for (const auto& p : m.parts) {
      parts.push_back(p.kind == ContentPart::Kind::kText ? json{{"text", p.value}}
                                                         : json{{"image", p.value}});
    }
    messages.push_back({{"speaker", m.speaker}, {"parts", std::move(parts)}});
  }
  json j = {{"role", to_string(request.role)},
            {"messages", std::move(messages)},
            {"temperature", request.temperature},
            {"n", request.n_samples},
            {"max_tokens", request.max_tokens}};
  if (request.seed) j["seed"] = *request.seed;
  return j;
}

std::string request_key(const ChatRequest& request) {
  const std::string text =
      canonical_request(request).dump(-1, ' ', false, json::error_handler_t::replace);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

// ---------------------------------------------------------------------------

MockBackend::MockBackend(const std::filesystem::path& fixture_dir) : dir_(fixture_dir) {
  std::ifstream in(dir_ / "manifest.json");
  if (!in) {
    throw GatewayError(GatewayError::Kind::kFixtureMissing, Role::kPolicy,
                       "no manifest.json in " + dir_.string());
  }
  json manifest = json::parse(in);
  strict_ = manifest.value("policy", "strict") == "strict";
  default_reply_ = manifest.value("default_reply", "");
  const json entries = manifest.value("entries", json::object());
  for (const auto& [key, file] : entries.items()) {
    entries_[key] = file.get<std::string>();
  }
}

ChatReply MockBackend::complete(const ChatRequest& request) {
  const std::string key = request_key(request);
  ChatReply reply;
  reply.endpoint_id = "mock:" + key;
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    if (strict_) {
      throw GatewayError(GatewayError::Kind::kFixtureMissing, request.role,
                         "no fixture for request " + key);
    }
    reply.choices.assign(static_cast<std::size_t>(request.n_samples), default_reply_);
    return reply;
  }
  std::ifstream in(dir_ / it->second);
  if (!in) {
    throw GatewayError(GatewayError::Kind::kFixtureMissing, request.role,
                       "fixture file missing: " + it->second);
  }
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array()) {
    throw GatewayError(GatewayError::Kind::kMalformedReply, request.role,
                       "bad fixture file " + it->second);
  }
  for (const auto& c : j["choices"]) reply.choices.push_back(c.get<std::string>());
  if (static_cast<int>(reply.choices.size()) != request.n_samples) {
    throw GatewayError(GatewayError::Kind::kMalformedReply, request.role,
                       "fixture " + it->second + " holds " + std::to_string(reply.choices.size()) +
                           " choices, request wants " + std::to_string(request.n_samples));
  }
  return reply;
}

RecordingBackend::RecordingBackend(std::shared_ptr<ChatBackend> inner,
                                   std::filesystem::path fixture_dir)
    : inner_(std::move(inner)), dir_(std::move(fixture_dir)) {
  std::filesystem::create_directories(dir_);
}

ChatReply RecordingBackend::complete(const ChatRequest& request) {
  ChatReply reply = inner_->complete(request);
  const std::string key = request_key(request);
  const std::string file = key + ".json";
  json j = json::object();
  j["role"] = to_string(request.role);
  j["request"] = canonical_request(request);
  j["choices"] = reply.choices;
  std::lock_guard lock(mu_);
  std::ofstream(dir_ / file) << j.dump(1, ' ', false, json::error_handler_t::replace) << "\n";
  entries_[key] = file;
  return reply;
}

void RecordingBackend::finish() const {
  std::lock_guard lock(mu_);
  json entries = json::object();
  for (const auto& [k, f] : entries_) entries[k] = f;
  json manifest = {{"version", 1}, {"policy", "strict"}, {"entries", std::move(entries)}};
  std::ofstream(dir_ / "manifest.json") << manifest.dump(1) << "\n";
}

// ---------------------------------------------------------------------------

void InFlightLimiter::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return in_flight_ < capacity_; });
  ++in_flight_;
  peak_ = std::max(peak_, in_flight_);
}

void InFlightLimiter::release() {
  {
    std::lock_guard lock(mu_);
    --in_flight_;
  }
  cv_.notify_one();
}

int InFlightLimiter::in_flight() const {
  std::lock_guard lock(mu_);
  return in_flight_;
}

int InFlightLimiter::peak() const {
  std::lock_guard lock(mu_);
  return peak_;
}

Gateway::Gateway()
    : jitter_rng_(0x7269766961ULL),
      sleeper_([](double ms) {
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
      }) {}

void Gateway::configure(Role role, RoleConfig config, std::shared_ptr<ChatBackend> backend) {
  std::lock_guard lock(mu_);
  Slot s;
  s.limiter = std::make_unique<InFlightLimiter>(config.max_concurrency);
  s.config = std::move(config);
  s.backend = std::move(backend);
  slots_[role] = std::move(s);
}

std::shared_ptr<Gateway> Gateway::from_mock(const std::filesystem::path& fixture_dir) {
  auto gateway = std::make_shared<Gateway>();
  auto backend = std::make_shared<MockBackend>(fixture_dir);
  for (Role r : {Role::kPolicy, Role::kTeacher, Role::kValidator, Role::kAnswerer}) {
    RoleConfig c;
    c.endpoint = "mock://" + fixture_dir.filename().string();
    c.model = "mock";
    c.vision = r != Role::kAnswerer;
    gateway->configure(r, c, backend);
  }
  return gateway;
}

std::shared_ptr<Gateway> Gateway::from_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read endpoint config " + path.string());
  json j = json::parse(in);
  auto gateway = std::make_shared<Gateway>();
  for (const auto& [name, value] : j.at("roles").items()) {
    auto role = parse_role(name);
    if (!role) throw std::runtime_error("unknown role in endpoint config: " + name);
    RoleConfig c = RoleConfig::from_json(value);
    gateway->configure(*role, c, std::make_shared<HttpBackend>(c));
  }
  return gateway;
}

Gateway::Slot& Gateway::slot(Role role) {
  std::lock_guard lock(mu_);
  auto it = slots_.find(role);
  if (it == slots_.end()) {
    throw GatewayError(GatewayError::Kind::kNotConfigured, role, "role not configured");
  }
  return it->second;
}

const Gateway::Slot& Gateway::slot(Role role) const {
  std::lock_guard lock(mu_);
  auto it = slots_.find(role);
  if (it == slots_.end()) {
    throw GatewayError(GatewayError::Kind::kNotConfigured, role, "role not configured");
  }
  return it->second;
}

bool Gateway::configured(Role role) const {
  std::lock_guard lock(mu_);
  return slots_.count(role) > 0;
}

const RoleConfig& Gateway::config(Role role) const { return slot(role).config; }

int Gateway::peak_in_flight(Role role) const { return slot(role).limiter->peak(); }

std::uint64_t Gateway::retries(Role role) const {
  const Slot& s = slot(role);
  std::lock_guard lock(mu_);
  return s.retries;
}

double Gateway::backoff_ms(const RetryPolicy& policy, int retry) {
  const double raw = policy.backoff_base_ms * std::pow(2.0, std::max(0, retry - 1));
  const double capped = std::min(raw, policy.backoff_max_ms);
  std::lock_guard lock(mu_);
  const double u = static_cast<double>(jitter_rng_() >> 11) * 0x1.0p-53;
  return capped * (0.5 + 0.5 * u);
}

void Gateway::log(const std::string& line) const {
  if (logger_) logger_(line);
}

ChatReply Gateway::chat(const ChatRequest& request) {
  Slot& s = slot(request.role);
  if (request.n_samples < 1) {
    throw GatewayError(GatewayError::Kind::kInvalidRequest, request.role, "n_samples must be >= 1");
  }
  if (request.has_image() && !s.config.vision) {
    throw GatewayError(GatewayError::Kind::kInvalidRequest, request.role,
                       "image parts sent to a role that is not vision-capable");
  }
  const int max_attempts = std::max(1, s.config.retry.max_attempts);
  std::string last_error;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    if (attempt > 1) {
      const double delay = backoff_ms(s.config.retry, attempt - 1);
      {
        std::lock_guard lock(mu_);
        ++s.retries;
      }
      log(std::string(to_string(request.role)) + " retry " + std::to_string(attempt - 1) +
          " after: " + last_error);
      sleeper_(delay);
    }
    ChatReply reply;
    const auto t0 = std::chrono::steady_clock::now();
    {
      SlotGuard guard(*s.limiter);
      try {
        reply = s.backend->complete(request);
      } catch (const TransientError& e) {
        last_error = e.what();
        continue;
      }
    }
    reply.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    reply.attempts = attempt;
    if (static_cast<int>(reply.choices.size()) != request.n_samples) {
      throw GatewayError(GatewayError::Kind::kMalformedReply, request.role,
                         "expected " + std::to_string(request.n_samples) + " choices, got " +
                             std::to_string(reply.choices.size()));
    }
    return reply;
  }
  throw GatewayError(GatewayError::Kind::kUnreachable, request.role,
                     "unreachable after " + std::to_string(max_attempts) + " attempts: " + last_error);
}

}  // namespace trivia
