#pragma once

#include <exception>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "claw/backend.hpp"
#include "claw/domain.hpp"

namespace claw {

enum class ErrorKind : std::uint8_t {
  ParseFailure,
  DisjointnessViolation,
  EmptySection,
  CaseMismatch,
  BudgetExceeded,
  Transport,
  MalformedResponse,
  Auth,
  InvalidRequest,
};
std::string_view to_string(ErrorKind kind);

// Failure inside a pipeline stage; backend errors raised during a stage are
// rewrapped with the stage that issued the call.
class PipelineError : public std::runtime_error {
 public:
  PipelineError(ErrorKind kind, Stage stage, const std::string& what);
  [[nodiscard]] ErrorKind kind() const { return kind_; }
  [[nodiscard]] Stage stage() const { return stage_; }

 private:
  ErrorKind kind_;
  Stage stage_;
};

class ParseFailure : public PipelineError {
 public:
  ParseFailure(Stage stage, const std::string& what) : PipelineError(ErrorKind::ParseFailure, stage, what) {}
};

class DisjointnessViolation : public PipelineError {
 public:
  explicit DisjointnessViolation(const std::string& what)
      : PipelineError(ErrorKind::DisjointnessViolation, Stage::Differential, what) {}
};

class EmptySection : public PipelineError {
 public:
  EmptySection(Stage stage, const std::string& what) : PipelineError(ErrorKind::EmptySection, stage, what) {}
};

class CaseMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Append-only evidence chain of one flow. Within the cooperative flow stages
// never go backwards (Scan < Lesion* < Differential < Report); the competitive
// flow holds Omni messages only.
class ContextBuffer {
 public:
  explicit ContextBuffer(std::string case_id) : case_id_(std::move(case_id)) {}

  void append(AgentMessage message);  // throws std::logic_error on a stage regression

  [[nodiscard]] const std::string& case_id() const { return case_id_; }
  [[nodiscard]] const std::vector<AgentMessage>& entries() const { return entries_; }
  [[nodiscard]] bool contains_stage(Stage stage) const;
  // Leads from the last successfully parsed Scan message.
  [[nodiscard]] std::vector<ScanLead> leads() const;
  // Plain-text rendering handed to the next agent as context.
  [[nodiscard]] std::string render() const;

 private:
  std::string case_id_;
  std::vector<AgentMessage> entries_;
};

struct ConflictSignal {
  std::string case_id;
  LabelSet coop_labels;
  LabelSet comp_labels;
  int disagreement_count = 0;

  friend bool operator==(const ConflictSignal&, const ConflictSignal&) = default;
};

void to_json(json& j, const ConflictSignal& v);
void from_json(const json& j, ConflictSignal& v);

// Signal iff the extracted label sets disagree on at least `min_disagreement`
// labels. Throws CaseMismatch when the trajectories belong to different cases.
std::optional<ConflictSignal> detect_conflict(const DiagnosticTrajectory& coop, const DiagnosticTrajectory& comp,
                                              int min_disagreement = 1);

struct PromptTemplate {
  std::string system;
  std::string user;
};

class PromptLibrary {
 public:
  static const PromptLibrary& builtin();
  // Reads <stage>.system.txt and <stage>.user.txt for every stage.
  static PromptLibrary from_directory(const std::string& dir);

  [[nodiscard]] const PromptTemplate& get(Stage stage) const;
  [[nodiscard]] std::uint64_t fingerprint() const;

 private:
  std::array<PromptTemplate, 5> templates_;
};

struct OrchestratorOptions {
  GenerationParams generation;
  int max_leads = 8;
  int min_disagreement = 1;
  int call_budget = CallBudget::kDefaultCallsPerCase;
  bool parallel_flows = true;
  bool parallel_lesions = true;
};

struct CaseRun {
  DiagnosticTrajectory coop;
  DiagnosticTrajectory comp;
  std::optional<ConflictSignal> conflict;
};

// Raised by run_case when either flow fails. Both partial transcripts are kept.
class CaseFailure : public std::runtime_error {
 public:
  CaseFailure(std::string case_id, Source failed_flow, std::optional<Stage> stage, const std::string& cause,
              std::vector<AgentMessage> coop_partial, std::vector<AgentMessage> comp_partial);

  std::string case_id;
  Source failed_flow;
  std::optional<Stage> stage;
  std::string cause;
  std::vector<AgentMessage> coop_partial;
  std::vector<AgentMessage> comp_partial;
};

class Orchestrator {
 public:
  explicit Orchestrator(Backend& backend, OrchestratorOptions options = {},
                        const PromptLibrary& prompts = PromptLibrary::builtin());

  std::vector<ScanLead> run_scan(const CaseRecord& c, ContextBuffer& buffer, CallBudget& budget) const;
  LesionFinding run_lesion(const CaseRecord& c, const ScanLead& lead, ContextBuffer& buffer, CallBudget& budget) const;
  DifferentialAssessment run_differential(const std::vector<LesionFinding>& findings, const CaseRecord& c,
                                          ContextBuffer& buffer, CallBudget& budget) const;
  StructuredReport run_report(const DifferentialAssessment& assessment, const CaseRecord& c, ContextBuffer& buffer,
                              CallBudget& budget) const;

  // Runs into a caller-owned buffer so partial transcripts survive failures.
  DiagnosticTrajectory run_cooperative(const CaseRecord& c, ContextBuffer& buffer, CallBudget& budget) const;
  DiagnosticTrajectory run_competitive(const CaseRecord& c, ContextBuffer& buffer, CallBudget& budget) const;

  DiagnosticTrajectory run_cooperative(const CaseRecord& c) const;
  DiagnosticTrajectory run_competitive(const CaseRecord& c) const;

  // Both flows, concurrently unless options.parallel_flows is off. Throws CaseFailure.
  CaseRun run_case(const CaseRecord& c) const;

  [[nodiscard]] const OrchestratorOptions& options() const { return options_; }

 private:
  struct LesionAttempt {
    std::vector<AgentMessage> messages;
    std::optional<LesionFinding> finding;
    std::exception_ptr error;
  };

  LesionAttempt analyze_lead(const CaseRecord& c, const ScanLead& lead, const ContextBuffer& snapshot,
                             CallBudget& budget) const;
  std::string call(const CaseRecord& c, Stage stage, const std::string& instance, int attempt,
                   std::vector<ChatMessage> messages, CallBudget& budget) const;

  Backend& backend_;
  OrchestratorOptions options_;
  PromptLibrary prompts_;
};

// Evidence-chain audit of a cooperative transcript: every lesion lead_id
// resolves to an earlier scan lead, the report follows a differential, stage
// order holds, and successful lesion messages match the lead count. Returns a
// list of violations (empty when the transcript is sound).
std::vector<std::string> audit_evidence_chain(const std::vector<AgentMessage>& transcript);

// Completion parsers; exposed for tests.
std::vector<ScanLead> parse_scan_leads(const std::string& completion, int max_leads);
LesionFinding parse_lesion_finding(const std::string& completion, const ScanLead& lead,
                                   const std::vector<ScanLead>& known_leads);
DifferentialAssessment parse_differential(const std::string& completion);
StructuredReport parse_report(const std::string& completion, Stage stage);

}  // namespace claw
