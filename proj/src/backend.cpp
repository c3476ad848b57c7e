#include "claw/backend.hpp"

#include <fstream>
#include <sstream>

namespace claw {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

void GenerationParams::validate() const {
  if (max_tokens < 1 || max_tokens > 8192) throw std::invalid_argument("max_tokens must be in [1, 8192]");
  if (!(temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
  if (n_best < 1 || n_best > 8) throw std::invalid_argument("n_best must be in [1, 8]");
}

void validate_messages(const std::vector<ChatMessage>& messages) {
  if (messages.empty()) throw std::invalid_argument("completion request without messages");
  if (messages.front().role != Role::System) throw std::invalid_argument("first message must have role system");
  for (const auto& m : messages) {
    if (m.role != Role::Assistant && m.content.empty()) {
      throw std::invalid_argument("empty " + std::string(to_string(m.role)) + " message");
    }
  }
}

void CallBudget::charge(const RequestTag& tag) {
  int n = ++used_;
  if (n > limit_) {
    throw BudgetExceeded("call budget of " + std::to_string(limit_) + " exhausted for case " + tag.case_id +
                         " at " + std::string(to_string(tag.stage)) + "/" + tag.instance);
  }
}

std::string retry_instance(const std::string& instance) { return instance + "/retry"; }

std::string script_key_string(const ScriptedBackend::Key& key) {
  return "(" + std::get<0>(key) + ", " + std::string(to_string(std::get<1>(key))) + ", " + std::get<2>(key) + ")";
}

ScriptedBackend ScriptedBackend::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open script file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_jsonl(ss.str(), path);
}

ScriptedBackend ScriptedBackend::from_jsonl(std::string_view text, const std::string& source_name) {
  std::map<Key, std::string> entries;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    auto where = source_name + ":" + std::to_string(line_no) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument(where + "invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument(where + "script entry must be an object");
    for (const char* field : {"case_id", "stage", "instance", "completion"}) {
      if (!j.contains(field) || !j[field].is_string()) {
        throw std::invalid_argument(where + "missing string field '" + field + "'");
      }
    }
    auto stage = parse_stage(j["stage"].get<std::string>());
    if (!stage) throw std::invalid_argument(where + "unknown stage '" + j["stage"].get<std::string>() + "'");
    Key key{j["case_id"].get<std::string>(), *stage, j["instance"].get<std::string>()};
    if (!entries.emplace(key, j["completion"].get<std::string>()).second) {
      throw std::invalid_argument(where + "duplicate script key " + script_key_string(key));
    }
  }
  return ScriptedBackend(std::move(entries));
}

std::string ScriptedBackend::complete(const CompletionRequest& request) {
  validate_messages(request.messages);
  const auto& tag = request.tag;
  if (tag.attempt > 0) {
    auto it = entries_.find(Key{tag.case_id, tag.stage, retry_instance(tag.instance)});
    if (it != entries_.end()) return it->second;
  }
  Key key{tag.case_id, tag.stage, tag.instance};
  auto it = entries_.find(key);
  if (it == entries_.end()) throw MalformedResponse("no script entry for key " + script_key_string(key));
  return it->second;
}

}  // namespace claw
