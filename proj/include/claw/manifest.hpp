#pragma once

#include <optional>
#include <string>
#include <vector>

#include "claw/orchestrator.hpp"

namespace claw {

struct CaseFailureRecord {
  Source failed_flow = Source::Cooperative;
  std::optional<Stage> stage;
  std::string cause;
  std::vector<AgentMessage> coop_partial;
  std::vector<AgentMessage> comp_partial;
};

struct CaseOutcome {
  std::string case_id;
  std::optional<CaseRun> run;
  std::optional<CaseFailureRecord> failure;
  double elapsed_ms = 0.0;

  [[nodiscard]] bool ok() const { return run.has_value(); }
};

// Everything one `run` invocation produced, ordered by case_id.
struct RunManifest {
  std::string run_id;
  std::string config_hash;
  std::vector<CaseOutcome> cases;

  [[nodiscard]] std::vector<ConflictSignal> conflicts() const;
  [[nodiscard]] int failure_count() const;
  [[nodiscard]] const CaseOutcome* find(const std::string& case_id) const;

  [[nodiscard]] json to_json() const;
  // Transcripts and conflicts only: no timings, so it is stable across runs.
  [[nodiscard]] json transcripts_json() const;
  static RunManifest from_json(const json& j);

  void save(const std::string& path) const;
  static RunManifest load(const std::string& path);
};

// Runs every case on up to `workers` threads. Case failures are recorded, not
// thrown. Output order is by case_id regardless of scheduling.
RunManifest run_dataset(const Orchestrator& orchestrator, const std::vector<CaseRecord>& cases, int workers,
                        const std::string& config_hash);

int default_worker_count();  // hardware concurrency, capped at 8

}  // namespace claw
