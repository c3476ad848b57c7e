#include <cmath>
#include <cstdlib>
#include <regex>
#include <thread>

#include <httplib.h>

#include "claw/backend.hpp"

namespace claw {

namespace {

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

HttpBackend::HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
  static const std::regex kUrl(R"(^(https?)://([A-Za-z0-9.\-]+|\[[0-9A-Fa-f:.]+\])(:[0-9]{1,5})?(/[^?#\s]*)?$)");
  std::smatch m;
  if (!std::regex_match(options_.base_url, m, kUrl)) {
    throw std::invalid_argument("invalid base_url: '" + options_.base_url + "'");
  }
  if (options_.model.empty()) throw std::invalid_argument("http backend requires a model name");
  if (options_.max_retries < 0) throw std::invalid_argument("max_retries must be >= 0");
  origin_ = m[1].str() + "://" + m[2].str() + m[3].str();
  std::string prefix = m[4].str();
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  path_ = prefix + "/v1/chat/completions";
  if (!options_.sleep) {
    options_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }
}

std::chrono::milliseconds HttpBackend::backoff_delay(int retry_index) const {
  double ms = static_cast<double>(options_.initial_backoff.count()) * std::pow(options_.backoff_factor, retry_index);
  return std::chrono::milliseconds(static_cast<long long>(std::llround(ms)));
}

json HttpBackend::request_body(const CompletionRequest& request) const {
  json messages = json::array();
  bool image_attached = false;
  for (const auto& m : request.messages) {
    json msg{{"role", std::string(to_string(m.role))}};
    if (options_.image_as_content_part && request.image_ref && m.role == Role::User && !image_attached) {
      msg["content"] = json::array({json{{"type", "text"}, {"text", m.content}},
                                    json{{"type", "image_url"}, {"image_url", {{"url", *request.image_ref}}}}});
      image_attached = true;
    } else {
      msg["content"] = m.content;
    }
    messages.push_back(std::move(msg));
  }
  return json{{"model", options_.model},
              {"messages", messages},
              {"temperature", request.params.temperature},
              {"max_tokens", request.params.max_tokens},
              {"n", request.params.n_best}};
}

std::string HttpBackend::parse_response(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw MalformedResponse(std::string("response body is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
    throw MalformedResponse("response has no choices");
  }
  const auto& first = j["choices"][0];
  if (!first.contains("message") || !first["message"].contains("content") || !first["message"]["content"].is_string()) {
    throw MalformedResponse("first choice has no message content");
  }
  return first["message"]["content"].get<std::string>();
}

std::string HttpBackend::complete(const CompletionRequest& request) {
  validate_messages(request.messages);
  request.params.validate();
  const std::string body = request_body(request).dump();

  httplib::Headers headers;
  if (const char* key = std::getenv(options_.api_key_env.c_str()); key != nullptr && *key != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  std::string last_error;
  for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
    if (attempt > 0) options_.sleep(backoff_delay(attempt - 1));

    // One client per call: httplib clients are not safe to share across threads.
    httplib::Client client(origin_);
    client.set_connection_timeout(options_.timeout);
    client.set_read_timeout(options_.timeout);
    client.set_write_timeout(options_.timeout);
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 401 || res->status == 403) {
      throw AuthError("endpoint rejected credentials (HTTP " + std::to_string(res->status) + ") using env var " +
                      options_.api_key_env);
    }
    if (retryable_status(res->status)) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw TransportError("HTTP " + std::to_string(res->status) + " from " + origin_ + path_ + ": " + res->body);
    }
    return parse_response(res->body);
  }
  throw TransportError("giving up after " + std::to_string(options_.max_retries + 1) + " attempts to " + origin_ +
                       path_ + ": " + last_error);
}

std::unique_ptr<Backend> http_backend(const std::string& base_url, const std::string& api_key_env_name,
                                      const std::string& model_name) {
  HttpBackendOptions options;
  options.base_url = base_url;
  options.api_key_env = api_key_env_name;
  options.model = model_name;
  return std::make_unique<HttpBackend>(std::move(options));
}

}  // namespace claw
