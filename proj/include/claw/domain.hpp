#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace claw {

using json = nlohmann::json;

enum class Pathology : std::uint8_t { Consolidation, PleuralEffusion, Pneumonia, Pneumothorax, Edema };

inline constexpr std::size_t kNumPathologies = 5;
inline constexpr std::array<Pathology, kNumPathologies> kAllPathologies{
    Pathology::Consolidation, Pathology::PleuralEffusion, Pathology::Pneumonia, Pathology::Pneumothorax,
    Pathology::Edema};

std::string_view to_string(Pathology label);
// Accepts the canonical form only ("PleuralEffusion", not "pleural effusion").
std::optional<Pathology> parse_pathology(std::string_view text);

// Presence flag for every one of the five pathologies. Default-constructed
// sets are all-negative; there is no way to leave a label unspecified.
class LabelSet {
 public:
  LabelSet() = default;
  LabelSet(std::initializer_list<Pathology> positives);

  [[nodiscard]] bool operator[](Pathology label) const { return presence_[index(label)]; }
  LabelSet& set(Pathology label, bool present);
  [[nodiscard]] int count_positive() const;
  [[nodiscard]] LabelSet complement() const;

  friend bool operator==(const LabelSet&, const LabelSet&) = default;

 private:
  static std::size_t index(Pathology label) { return static_cast<std::size_t>(label); }
  std::array<bool, kNumPathologies> presence_{};
};

int hamming_distance(const LabelSet& a, const LabelSet& b);

// Fraction of the five labels on which `pred` agrees with `gt`.
double score_vs_gt(const LabelSet& pred, const LabelSet& gt);

struct CaseRecord {
  std::string case_id;
  std::string image_ref;
  std::string clinical_context;
  LabelSet ground_truth;
  std::optional<std::string> reference_report;

  friend bool operator==(const CaseRecord&, const CaseRecord&) = default;
};

struct ScanLead {
  int lead_id = 0;
  std::string anatomical_region;
  std::string description;
  double salience = 0.0;

  friend bool operator==(const ScanLead&, const ScanLead&) = default;
};

struct LesionFinding {
  int lead_id = 0;
  std::string morphology;
  std::string margins;
  std::string density;
  std::vector<Pathology> candidate_pathologies;

  friend bool operator==(const LesionFinding&, const LesionFinding&) = default;
};

struct DifferentialAssessment {
  struct Entry {
    Pathology label;
    std::string rationale;
    friend bool operator==(const Entry&, const Entry&) = default;
  };
  std::vector<Entry> ranked;
  std::vector<Entry> excluded;

  // Labels that appear in both lists; empty for a valid assessment.
  [[nodiscard]] std::vector<Pathology> overlap() const;

  friend bool operator==(const DifferentialAssessment&, const DifferentialAssessment&) = default;
};

struct StructuredReport {
  std::string findings;
  std::string impression;

  [[nodiscard]] bool complete() const;
  // Header-delimited rendering; this is the text the policy scores.
  [[nodiscard]] std::string text() const;

  friend bool operator==(const StructuredReport&, const StructuredReport&) = default;
};

enum class Stage : std::uint8_t { Scan, Lesion, Differential, Report, Omni };
std::string_view to_string(Stage stage);
std::optional<Stage> parse_stage(std::string_view text);

using Payload = std::variant<std::monostate, std::vector<ScanLead>, LesionFinding, DifferentialAssessment,
                             StructuredReport>;

struct AgentMessage {
  Stage stage = Stage::Scan;
  std::string agent_instance;
  std::string content;
  Payload payload;  // monostate records a failed parse attempt

  [[nodiscard]] bool payload_matches_stage() const;

  friend bool operator==(const AgentMessage&, const AgentMessage&) = default;
};

enum class Source : std::uint8_t { Cooperative, Competitive };
std::string_view to_string(Source source);
std::optional<Source> parse_source(std::string_view text);

// A completed pathway. Labels and tokens are derived from the report at
// construction and cannot drift from it afterwards.
class DiagnosticTrajectory {
 public:
  // Throws std::invalid_argument when the message shape does not fit `source`
  // or the report is incomplete.
  DiagnosticTrajectory(std::string case_id, Source source, std::vector<AgentMessage> messages,
                       StructuredReport report);

  [[nodiscard]] const std::string& case_id() const { return case_id_; }
  [[nodiscard]] Source source() const { return source_; }
  [[nodiscard]] const std::vector<AgentMessage>& messages() const { return messages_; }
  [[nodiscard]] const StructuredReport& report() const { return report_; }
  [[nodiscard]] const LabelSet& extracted_labels() const { return labels_; }
  // Token strings of report().text(); ids are assigned by a corpus vocabulary.
  [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const DiagnosticTrajectory& a, const DiagnosticTrajectory& b) {
    return a.case_id_ == b.case_id_ && a.source_ == b.source_ && a.messages_ == b.messages_ &&
           a.report_ == b.report_;
  }

 private:
  std::string case_id_;
  Source source_;
  std::vector<AgentMessage> messages_;
  StructuredReport report_;
  LabelSet labels_;
  std::vector<std::string> tokens_;
};

// Keyword + negation-cue labeler. A label is present iff some keyword of its
// family occurs in the impression with no negation cue earlier in the same
// sentence. Matching is over whole tokens of the shared tokenizer.
class Labeler {
 public:
  static const Labeler& builtin();
  static Labeler from_json(const json& spec);

  [[nodiscard]] LabelSet extract(std::string_view impression) const;
  [[nodiscard]] const std::string& version() const { return version_; }

 private:
  std::string version_;
  std::string boundaries_;
  std::vector<std::vector<std::string>> cues_;
  std::array<std::vector<std::vector<std::string>>, kNumPathologies> families_;
};

LabelSet extract_labels(const StructuredReport& report);

// Canonical JSON forms. from_json rejects partial label maps, unknown enum
// spellings and payloads whose kind does not match the message stage.
void to_json(json& j, const LabelSet& v);
void from_json(const json& j, LabelSet& v);
void to_json(json& j, const CaseRecord& v);
void from_json(const json& j, CaseRecord& v);
void to_json(json& j, const ScanLead& v);
void from_json(const json& j, ScanLead& v);
void to_json(json& j, const LesionFinding& v);
void from_json(const json& j, LesionFinding& v);
void to_json(json& j, const DifferentialAssessment& v);
void from_json(const json& j, DifferentialAssessment& v);
void to_json(json& j, const StructuredReport& v);
void from_json(const json& j, StructuredReport& v);
void to_json(json& j, const AgentMessage& v);
void from_json(const json& j, AgentMessage& v);
void to_json(json& j, const DiagnosticTrajectory& v);
DiagnosticTrajectory trajectory_from_json(const json& j);

// JSONL dataset of CaseRecords; throws std::runtime_error with the line number
// on malformed input or duplicate case ids.
std::vector<CaseRecord> load_cases(const std::string& path);
void save_cases(const std::vector<CaseRecord>& cases, const std::string& path);

}  // namespace claw
