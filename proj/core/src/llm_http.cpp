#include <httplib.h>

#include "opforge/error.hpp"
#include "opforge/llm.hpp"

namespace opforge::llm {

HttpChatBackend::HttpChatBackend(Endpoint endpoint) : endpoint_(std::move(endpoint)) {
  if (endpoint_.base_url.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "chat endpoint needs a base URL");
  }
}

ChatResponse HttpChatBackend::chat(const ChatRequest& request) {
  httplib::Client client(endpoint_.base_url);
  if (!client.is_valid()) {
    throw Error(ErrorCode::kInvalidArgument, "unsupported endpoint URL " + endpoint_.base_url);
  }
  const auto secs = endpoint_.timeout.count();
  client.set_connection_timeout(30, 0);
  client.set_read_timeout(secs, 0);
  client.set_write_timeout(secs, 0);
  httplib::Headers headers;
  if (!endpoint_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + endpoint_.api_key);
  }
  const std::string body = to_wire_json(request).dump();
  auto res = client.Post(endpoint_.path, headers, body, "application/json");
  if (!res) {
    throw Error(ErrorCode::kTransportError,
                "POST " + endpoint_.path + ": " + httplib::to_string(res.error()));
  }
  if (res->status == 429) {
    throw Error(ErrorCode::kRateLimited, "inference service returned 429");
  }
  if (res->status >= 500) {
    throw Error(ErrorCode::kTransportError,
                "inference service returned " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw Error(ErrorCode::kBadResponse,
                "inference service returned " + std::to_string(res->status));
  }
  try {
    const auto j = nlohmann::json::parse(res->body);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) {
      throw Error(ErrorCode::kBadResponse, "response content is not a string");
    }
    return {content.get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadResponse, std::string("unparseable completion: ") + e.what());
  }
}

}  // namespace opforge::llm
