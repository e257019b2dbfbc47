// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "httplib.h"
#include "trivia/gateway.hpp"

namespace trivia {

using nlohmann::json;

namespace {

std::string mime_for(const std::string& path) {
  auto dot = path.find_last_of('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == "jpg" || ext == "jpeg") return "image/jpeg";
  if (ext == "webp") return "image/webp";
  if (ext == "gif") return "image/gif";
  return "image/png";
}

std::string image_url(const std::string& ref) {
  if (ref.rfind("data:", 0) == 0 || ref.rfind("http://", 0) == 0 || ref.rfind("https://", 0) == 0) {
    return ref;
  }
  std::ifstream in(ref, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read image " + ref);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return "data:" + mime_for(ref) + ";base64," + httplib::detail::base64_encode(bytes);
}

std::string content_text(const json& content) {
  if (content.is_string()) return content.get<std::string>();
  if (content.is_array()) {
    std::string out;
    for (const auto& part : content) {
      if (part.is_object() && part.value("type", "") == "text") out += part.value("text", "");
    }
    return out;
  }
  if (content.is_null()) return "";
  throw std::runtime_error("unexpected content type");
}

}  // namespace

json chat_completion_body(const ChatRequest& request, const RoleConfig& config) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    json content = json::array();
    for (const auto& p : m.parts) {
      if (p.kind == ContentPart::Kind::kText) {
        content.push_back({{"type", "text"}, {"text", p.value}});
      } else {
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", image_url(p.value)}}}});
      }
    }
    messages.push_back({{"role", m.speaker}, {"content", std::move(content)}});
  }
  json body = {{"model", config.model},
               {"messages", std::move(messages)},
               {"temperature", request.temperature},
               {"n", request.n_samples},
               {"max_tokens", request.max_tokens},
               {"stream", false}};
  if (request.seed) body["seed"] = *request.seed;
  return body;
}

ChatReply parse_chat_completion(std::string_view body, Role role) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("choices") || !j["choices"].is_array()) {
    throw GatewayError(GatewayError::Kind::kMalformedReply, role, "reply is not a chat completion");
  }
  ChatReply reply;
  try {
    for (const auto& choice : j["choices"]) {
      reply.choices.push_back(content_text(choice.at("message").at("content")));
    }
    if (j.contains("usage") && j["usage"].is_object()) {
      reply.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
      reply.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
    }
  } catch (const std::exception& e) {
    throw GatewayError(GatewayError::Kind::kMalformedReply, role, e.what());
  }
  return reply;
}

HttpBackend::HttpBackend(RoleConfig config) : config_(std::move(config)) {
  const std::string& url = config_.endpoint;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("endpoint must be a URL: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  base_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/v1/chat/completions" : url.substr(path_start);
}

ChatReply HttpBackend::complete(const ChatRequest& request) {
  const Role role = request.role;
  httplib::Client client(base_);
  const auto timeout = std::chrono::duration<double>(config_.timeout_s);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));

  httplib::Headers headers;
  if (!config_.auth_env.empty()) {
    if (const char* token = std::getenv(config_.auth_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }
  std::string body;
  try {
    body = chat_completion_body(request, config_).dump(-1, ' ', false, json::error_handler_t::replace);
  } catch (const std::exception& e) {
    throw GatewayError(GatewayError::Kind::kInvalidRequest, role, e.what());
  }
  auto res = client.Post(path_, headers, body, "application/json");
  if (!res) {
    throw TransientError(0, "transport error: " + httplib::to_string(res.error()));
  }
  const int status = res->status;
  if (status == 429 || status >= 500) {
    throw TransientError(status, "HTTP " + std::to_string(status));
  }
  if (status == 401 || status == 403) {
    throw GatewayError(GatewayError::Kind::kAuthRejected, role, "HTTP " + std::to_string(status));
  }
  if (status != 200) {
    throw GatewayError(GatewayError::Kind::kMalformedReply, role,
                       "unexpected HTTP " + std::to_string(status));
  }
  ChatReply reply = parse_chat_completion(res->body, role);
  reply.endpoint_id = base_ + path_;
  return reply;
}

}  // namespace trivia
