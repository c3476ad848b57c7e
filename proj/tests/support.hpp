#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "claw/backend.hpp"
#include "claw/domain.hpp"

namespace claw::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("claw-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline CaseRecord make_case(const std::string& id, LabelSet gt = {}) {
  return CaseRecord{id, "images/" + id + ".png", "Cough.", gt, std::nullopt};
}

// Builds scripted-backend entries case by case.
class ScriptBuilder {
 public:
  ScriptBuilder& add(const std::string& case_id, Stage stage, const std::string& instance, const std::string& text) {
    entries_[{case_id, stage, instance}] = text;
    return *this;
  }

  // A complete, well-formed script for one case with `leads` leads.
  ScriptBuilder& full_case(const std::string& case_id, int leads, const std::string& coop_impression,
                           const std::string& comp_impression) {
    json scan = json::array();
    for (int i = 0; i < leads; ++i) {
      scan.push_back({{"region", "zone " + std::to_string(i)}, {"description", "opacity"}, {"salience", 0.5}});
    }
    add(case_id, Stage::Scan, "scan", scan.dump());
    for (int i = 0; i < leads; ++i) {
      json f{{"lead_id", i}, {"morphology", "patchy"}, {"margins", "ill-defined"}, {"density", "airspace"},
             {"candidate_pathologies", json::array()}};
      add(case_id, Stage::Lesion, "lesion-" + std::to_string(i), f.dump());
    }
    add(case_id, Stage::Differential, "differential", R"({"ranked":[],"excluded":[]})");
    add(case_id, Stage::Report, "report", "FINDINGS: Reviewed.\nIMPRESSION: " + coop_impression);
    add(case_id, Stage::Omni, "omni", "FINDINGS: Single view.\nIMPRESSION: " + comp_impression);
    return *this;
  }

  [[nodiscard]] ScriptedBackend backend() const { return ScriptedBackend(entries_); }
  [[nodiscard]] std::string jsonl() const {
    std::string out;
    for (const auto& [k, v] : entries_) {
      out += json{{"case_id", std::get<0>(k)}, {"stage", std::string(to_string(std::get<1>(k)))},
                  {"instance", std::get<2>(k)}, {"completion", v}}
                 .dump() +
             "\n";
    }
    return out;
  }

 private:
  std::map<ScriptedBackend::Key, std::string> entries_;
};

#ifdef CLAW_TEST_DATA_DIR
inline std::string data_path(const std::string& name) { return std::string(CLAW_TEST_DATA_DIR) + "/" + name; }

// Values frozen from tests/oracles/metrics_oracle.py.
inline const json& golden() {
  static const json g = json::parse(read_text(data_path("metrics_golden.json")));
  return g;
}
#endif

}  // namespace claw::testing
