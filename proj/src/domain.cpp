#include "claw/domain.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include "claw/embedded.hpp"
#include "claw/text.hpp"

namespace claw {

namespace {

constexpr std::array<std::string_view, kNumPathologies> kPathologyNames{
    "Consolidation", "PleuralEffusion", "Pneumonia", "Pneumothorax", "Edema"};
constexpr std::array<std::string_view, 5> kStageNames{"Scan", "Lesion", "Differential", "Report", "Omni"};

Pathology pathology_from_json(const json& j) {
  auto label = parse_pathology(j.get<std::string>());
  if (!label) throw std::invalid_argument("unknown pathology label: " + j.get<std::string>());
  return *label;
}

bool starts_with_at(const std::vector<std::string>& tokens, std::size_t pos, const std::vector<std::string>& phrase) {
  if (phrase.empty() || pos + phrase.size() > tokens.size()) return false;
  for (std::size_t k = 0; k < phrase.size(); ++k) {
    if (tokens[pos + k] != phrase[k]) return false;
  }
  return true;
}

}  // namespace

std::string_view to_string(Pathology label) { return kPathologyNames[static_cast<std::size_t>(label)]; }

std::optional<Pathology> parse_pathology(std::string_view text) {
  for (std::size_t i = 0; i < kNumPathologies; ++i) {
    if (kPathologyNames[i] == text) return kAllPathologies[i];
  }
  return std::nullopt;
}

LabelSet::LabelSet(std::initializer_list<Pathology> positives) {
  for (auto p : positives) presence_[index(p)] = true;
}

LabelSet& LabelSet::set(Pathology label, bool present) {
  presence_[index(label)] = present;
  return *this;
}

int LabelSet::count_positive() const {
  int n = 0;
  for (bool b : presence_) n += b ? 1 : 0;
  return n;
}

LabelSet LabelSet::complement() const {
  LabelSet out;
  for (auto p : kAllPathologies) out.set(p, !(*this)[p]);
  return out;
}

int hamming_distance(const LabelSet& a, const LabelSet& b) {
  int d = 0;
  for (auto p : kAllPathologies) d += a[p] != b[p] ? 1 : 0;
  return d;
}

double score_vs_gt(const LabelSet& pred, const LabelSet& gt) {
  return static_cast<double>(static_cast<int>(kNumPathologies) - hamming_distance(pred, gt)) /
         static_cast<double>(kNumPathologies);
}

std::vector<Pathology> DifferentialAssessment::overlap() const {
  std::set<Pathology> excluded_labels;
  for (const auto& e : excluded) excluded_labels.insert(e.label);
  std::vector<Pathology> out;
  for (const auto& r : ranked) {
    if (excluded_labels.count(r.label) && std::find(out.begin(), out.end(), r.label) == out.end()) {
      out.push_back(r.label);
    }
  }
  return out;
}

bool StructuredReport::complete() const {
  auto blank = [](const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; };
  return !blank(findings) && !blank(impression);
}

std::string StructuredReport::text() const { return "FINDINGS: " + findings + "\nIMPRESSION: " + impression; }

std::string_view to_string(Stage stage) { return kStageNames[static_cast<std::size_t>(stage)]; }

std::optional<Stage> parse_stage(std::string_view text) {
  for (std::size_t i = 0; i < kStageNames.size(); ++i) {
    if (kStageNames[i] == text) return static_cast<Stage>(i);
  }
  return std::nullopt;
}

bool AgentMessage::payload_matches_stage() const {
  switch (stage) {
    case Stage::Scan:
      return std::holds_alternative<std::monostate>(payload) ||
             std::holds_alternative<std::vector<ScanLead>>(payload);
    case Stage::Lesion:
      return std::holds_alternative<std::monostate>(payload) || std::holds_alternative<LesionFinding>(payload);
    case Stage::Differential:
      return std::holds_alternative<std::monostate>(payload) ||
             std::holds_alternative<DifferentialAssessment>(payload);
    case Stage::Report:
    case Stage::Omni:
      return std::holds_alternative<std::monostate>(payload) || std::holds_alternative<StructuredReport>(payload);
  }
  return false;
}

std::string_view to_string(Source source) {
  return source == Source::Cooperative ? "Cooperative" : "Competitive";
}

std::optional<Source> parse_source(std::string_view text) {
  if (text == "Cooperative") return Source::Cooperative;
  if (text == "Competitive") return Source::Competitive;
  return std::nullopt;
}

DiagnosticTrajectory::DiagnosticTrajectory(std::string case_id, Source source, std::vector<AgentMessage> messages,
                                           StructuredReport report)
    : case_id_(std::move(case_id)), source_(source), messages_(std::move(messages)), report_(std::move(report)) {
  if (case_id_.empty()) throw std::invalid_argument("trajectory without case id");
  if (!report_.complete()) throw std::invalid_argument("trajectory report must have findings and impression");
  for (const auto& m : messages_) {
    if (!m.payload_matches_stage()) throw std::invalid_argument("message payload does not match its stage");
  }
  if (source_ == Source::Competitive) {
    if (messages_.size() != 1 || messages_.front().stage != Stage::Omni) {
      throw std::invalid_argument("competitive trajectory must hold exactly one Omni message");
    }
  } else {
    // Scan first, Lesion*, Differential, Report last; failed attempts keep their stage.
    if (messages_.size() < 3 || messages_.front().stage != Stage::Scan || messages_.back().stage != Stage::Report) {
      throw std::invalid_argument("cooperative trajectory must run Scan ... Report");
    }
    bool seen_differential = false;
    Stage prev = Stage::Scan;
    for (const auto& m : messages_) {
      if (m.stage == Stage::Omni || static_cast<int>(m.stage) < static_cast<int>(prev)) {
        throw std::invalid_argument("cooperative trajectory stages out of order");
      }
      seen_differential = seen_differential || m.stage == Stage::Differential;
      prev = m.stage;
    }
    if (!seen_differential) throw std::invalid_argument("cooperative trajectory lacks a Differential stage");
  }
  labels_ = extract_labels(report_);
  tokens_ = tokenize(report_.text());
}

const Labeler& Labeler::builtin() {
  static const Labeler labeler = from_json(json::parse(embedded::kLabelerV1));
  return labeler;
}

Labeler Labeler::from_json(const json& spec) {
  Labeler out;
  out.version_ = spec.at("version").get<std::string>();
  out.boundaries_ = spec.at("sentence_boundaries").get<std::string>();
  for (const auto& cue : spec.at("negation_cues")) out.cues_.push_back(tokenize(cue.get<std::string>()));
  const auto& families = spec.at("families");
  for (auto p : kAllPathologies) {
    auto& family = out.families_[static_cast<std::size_t>(p)];
    for (const auto& kw : families.at(std::string(to_string(p)))) family.push_back(tokenize(kw.get<std::string>()));
    if (family.empty()) throw std::invalid_argument("empty keyword family for " + std::string(to_string(p)));
  }
  return out;
}

LabelSet Labeler::extract(std::string_view impression) const {
  LabelSet out;
  for (auto sentence : split_sentences(impression, boundaries_)) {
    auto tokens = tokenize(sentence);
    // First token index at which a negation cue has started; everything at or
    // after the cue's end is negated.
    std::size_t negated_from = tokens.size();
    for (std::size_t i = 0; i < tokens.size() && negated_from == tokens.size(); ++i) {
      for (const auto& cue : cues_) {
        if (starts_with_at(tokens, i, cue)) {
          negated_from = i + cue.size();
          break;
        }
      }
    }
    for (auto p : kAllPathologies) {
      if (out[p]) continue;
      for (const auto& phrase : families_[static_cast<std::size_t>(p)]) {
        bool hit = false;
        for (std::size_t i = 0; i < tokens.size() && i < negated_from; ++i) {
          if (starts_with_at(tokens, i, phrase)) {
            hit = true;
            break;
          }
        }
        if (hit) {
          out.set(p, true);
          break;
        }
      }
    }
  }
  return out;
}

LabelSet extract_labels(const StructuredReport& report) { return Labeler::builtin().extract(report.impression); }

void to_json(json& j, const LabelSet& v) {
  j = json::object();
  for (auto p : kAllPathologies) j[std::string(to_string(p))] = v[p];
}

void from_json(const json& j, LabelSet& v) {
  if (!j.is_object() || j.size() != kNumPathologies) {
    throw std::invalid_argument("label set must map all five pathologies to booleans");
  }
  LabelSet out;
  for (auto p : kAllPathologies) out.set(p, j.at(std::string(to_string(p))).get<bool>());
  v = out;
}

void to_json(json& j, const CaseRecord& v) {
  j = json{{"case_id", v.case_id},
           {"image_ref", v.image_ref},
           {"clinical_context", v.clinical_context},
           {"ground_truth", v.ground_truth}};
  if (v.reference_report) j["reference_report"] = *v.reference_report;
}

void from_json(const json& j, CaseRecord& v) {
  v.case_id = j.at("case_id").get<std::string>();
  if (v.case_id.empty()) throw std::invalid_argument("case_id must be nonempty");
  v.image_ref = j.at("image_ref").get<std::string>();
  v.clinical_context = j.value("clinical_context", std::string());
  v.ground_truth = j.at("ground_truth").get<LabelSet>();
  if (j.contains("reference_report") && !j["reference_report"].is_null()) {
    v.reference_report = j["reference_report"].get<std::string>();
  } else {
    v.reference_report.reset();
  }
}

void to_json(json& j, const ScanLead& v) {
  j = json{{"lead_id", v.lead_id},
           {"anatomical_region", v.anatomical_region},
           {"description", v.description},
           {"salience", v.salience}};
}

void from_json(const json& j, ScanLead& v) {
  v.lead_id = j.at("lead_id").get<int>();
  v.anatomical_region = j.at("anatomical_region").get<std::string>();
  v.description = j.at("description").get<std::string>();
  v.salience = j.at("salience").get<double>();
}

void to_json(json& j, const LesionFinding& v) {
  json labels = json::array();
  for (auto p : v.candidate_pathologies) labels.push_back(std::string(to_string(p)));
  j = json{{"lead_id", v.lead_id},
           {"morphology", v.morphology},
           {"margins", v.margins},
           {"density", v.density},
           {"candidate_pathologies", labels}};
}

void from_json(const json& j, LesionFinding& v) {
  v.lead_id = j.at("lead_id").get<int>();
  v.morphology = j.at("morphology").get<std::string>();
  v.margins = j.at("margins").get<std::string>();
  v.density = j.at("density").get<std::string>();
  v.candidate_pathologies.clear();
  for (const auto& l : j.at("candidate_pathologies")) v.candidate_pathologies.push_back(pathology_from_json(l));
}

namespace {

json entries_to_json(const std::vector<DifferentialAssessment::Entry>& entries) {
  json out = json::array();
  for (const auto& e : entries) out.push_back({{"label", std::string(to_string(e.label))}, {"rationale", e.rationale}});
  return out;
}

std::vector<DifferentialAssessment::Entry> entries_from_json(const json& j) {
  std::vector<DifferentialAssessment::Entry> out;
  for (const auto& e : j) out.push_back({pathology_from_json(e.at("label")), e.value("rationale", std::string())});
  return out;
}

}  // namespace

void to_json(json& j, const DifferentialAssessment& v) {
  j = json{{"ranked", entries_to_json(v.ranked)}, {"excluded", entries_to_json(v.excluded)}};
}

void from_json(const json& j, DifferentialAssessment& v) {
  v.ranked = entries_from_json(j.at("ranked"));
  v.excluded = entries_from_json(j.at("excluded"));
}

void to_json(json& j, const StructuredReport& v) { j = json{{"findings", v.findings}, {"impression", v.impression}}; }

void from_json(const json& j, StructuredReport& v) {
  v.findings = j.at("findings").get<std::string>();
  v.impression = j.at("impression").get<std::string>();
}

void to_json(json& j, const AgentMessage& v) {
  j = json{{"stage", std::string(to_string(v.stage))}, {"agent_instance", v.agent_instance}, {"content", v.content}};
  std::visit(
      [&](const auto& p) {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, std::monostate>) {
          j["payload"] = nullptr;
        } else {
          j["payload"] = p;
        }
      },
      v.payload);
}

void from_json(const json& j, AgentMessage& v) {
  auto stage = parse_stage(j.at("stage").get<std::string>());
  if (!stage) throw std::invalid_argument("unknown stage: " + j.at("stage").dump());
  v.stage = *stage;
  v.agent_instance = j.at("agent_instance").get<std::string>();
  v.content = j.at("content").get<std::string>();
  const auto& p = j.at("payload");
  if (p.is_null()) {
    v.payload = std::monostate{};
    return;
  }
  switch (v.stage) {
    case Stage::Scan: v.payload = p.get<std::vector<ScanLead>>(); break;
    case Stage::Lesion: v.payload = p.get<LesionFinding>(); break;
    case Stage::Differential: v.payload = p.get<DifferentialAssessment>(); break;
    case Stage::Report:
    case Stage::Omni: v.payload = p.get<StructuredReport>(); break;
  }
}

void to_json(json& j, const DiagnosticTrajectory& v) {
  j = json{{"case_id", v.case_id()},
           {"source", std::string(to_string(v.source()))},
           {"messages", v.messages()},
           {"report", v.report()},
           {"extracted_labels", v.extracted_labels()}};
}

DiagnosticTrajectory trajectory_from_json(const json& j) {
  auto source = parse_source(j.at("source").get<std::string>());
  if (!source) throw std::invalid_argument("unknown trajectory source: " + j.at("source").dump());
  DiagnosticTrajectory t(j.at("case_id").get<std::string>(), *source, j.at("messages").get<std::vector<AgentMessage>>(),
                         j.at("report").get<StructuredReport>());
  if (j.contains("extracted_labels") && j["extracted_labels"].get<LabelSet>() != t.extracted_labels()) {
    throw std::invalid_argument("stored labels disagree with the report for case " + t.case_id());
  }
  return t;
}

std::vector<CaseRecord> load_cases(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  std::vector<CaseRecord> cases;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto record = json::parse(line).get<CaseRecord>();
      if (!seen.insert(record.case_id).second) throw std::invalid_argument("duplicate case_id " + record.case_id);
      cases.push_back(std::move(record));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cases;
}

void save_cases(const std::vector<CaseRecord>& cases, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  for (const auto& c : cases) out << json(c).dump() << '\n';
}

}  // namespace claw
