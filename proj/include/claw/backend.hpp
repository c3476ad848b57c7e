#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "claw/domain.hpp"

namespace claw {

enum class Role : std::uint8_t { System, User, Assistant };
std::string_view to_string(Role role);

struct ChatMessage {
  Role role = Role::User;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

// Beam width 3 maps onto n = 3 with greedy decoding; the top choice is used.
struct GenerationParams {
  int max_tokens = 512;
  double temperature = 0.0;
  int n_best = 3;

  void validate() const;  // throws std::invalid_argument
  friend bool operator==(const GenerationParams&, const GenerationParams&) = default;
};

// Identifies a call for scripted lookup and for logs. attempt > 0 marks a
// re-prompt after a parse failure.
struct RequestTag {
  std::string case_id;
  Stage stage = Stage::Scan;
  std::string instance;
  int attempt = 0;
};

struct CompletionRequest {
  std::vector<ChatMessage> messages;
  GenerationParams params;
  RequestTag tag;
  std::optional<std::string> image_ref;
};

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

class MalformedResponse : public BackendError {
 public:
  using BackendError::BackendError;
};

class BudgetExceeded : public BackendError {
 public:
  using BackendError::BackendError;
};

class AuthError : public BackendError {
 public:
  using BackendError::BackendError;
};

// Text-completion service every agent runs on. Implementations must accept
// concurrent complete() calls.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(const CompletionRequest& request) = 0;
};

// Throws std::invalid_argument unless messages is nonempty and starts with a
// system message, and system/user messages carry content.
void validate_messages(const std::vector<ChatMessage>& messages);

// Counts calls for one case; thread-safe.
class CallBudget {
 public:
  static constexpr int kDefaultCallsPerCase = 64;

  explicit CallBudget(int limit = kDefaultCallsPerCase) : limit_(limit) {}

  void charge(const RequestTag& tag);  // throws BudgetExceeded once limit is hit
  [[nodiscard]] int used() const { return used_.load(); }
  [[nodiscard]] int limit() const { return limit_; }

 private:
  int limit_;
  std::atomic<int> used_{0};
};

// Pure lookup keyed on (case_id, stage, instance). A re-prompt (attempt > 0)
// looks up "<instance>/retry" first and falls back to the original entry.
class ScriptedBackend : public Backend {
 public:
  using Key = std::tuple<std::string, Stage, std::string>;

  ScriptedBackend() = default;
  explicit ScriptedBackend(std::map<Key, std::string> entries) : entries_(std::move(entries)) {}

  // JSONL of {case_id, stage, instance, completion}. Errors carry the line number.
  static ScriptedBackend from_file(const std::string& path);
  static ScriptedBackend from_jsonl(std::string_view text, const std::string& source_name = "<script>");

  std::string complete(const CompletionRequest& request) override;

  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] const std::map<Key, std::string>& entries() const { return entries_; }

 private:
  std::map<Key, std::string> entries_;
};

std::string retry_instance(const std::string& instance);
std::string script_key_string(const ScriptedBackend::Key& key);

struct HttpBackendOptions {
  std::string base_url;
  std::string model;
  std::string api_key_env = "CLAW_API_KEY";
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  double backoff_factor = 2.0;
  std::chrono::seconds timeout{120};
  // Send image_ref as an image_url content part instead of plain text.
  bool image_as_content_part = false;
  // Injected so tests can observe the backoff schedule without waiting.
  std::function<void(std::chrono::milliseconds)> sleep;
};

// OpenAI-compatible chat completions client: POST {base_url}/v1/chat/completions.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendOptions options);

  std::string complete(const CompletionRequest& request) override;

  [[nodiscard]] json request_body(const CompletionRequest& request) const;
  static std::string parse_response(const std::string& body);

  [[nodiscard]] std::chrono::milliseconds backoff_delay(int retry_index) const;
  [[nodiscard]] const HttpBackendOptions& options() const { return options_; }

 private:
  HttpBackendOptions options_;
  std::string origin_;  // scheme://host[:port]
  std::string path_;    // prefix + /v1/chat/completions
};

std::unique_ptr<Backend> http_backend(const std::string& base_url, const std::string& api_key_env_name,
                                      const std::string& model_name);

}  // namespace claw
