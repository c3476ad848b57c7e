#include "claw/orchestrator.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <future>
#include <set>
#include <sstream>

#include "claw/embedded.hpp"
#include "claw/text.hpp"

namespace claw {

namespace {

std::string stage_file_stem(Stage stage) {
  switch (stage) {
    case Stage::Scan: return "scan";
    case Stage::Lesion: return "lesion";
    case Stage::Differential: return "differential";
    case Stage::Report: return "report";
    case Stage::Omni: return "omni";
  }
  return "scan";
}

// Parses the span from the first `open` to the last `close`, which skips any
// prose or markdown fence around the JSON value.
json parse_embedded_json(const std::string& completion, char open, char close, Stage stage) {
  auto first = completion.find(open);
  auto last = completion.rfind(close);
  if (first == std::string::npos || last == std::string::npos || last < first) {
    throw ParseFailure(stage, std::string("expected a JSON ") + (open == '[' ? "array" : "object") + " in completion");
  }
  try {
    return json::parse(completion.substr(first, last - first + 1));
  } catch (const json::parse_error& e) {
    throw ParseFailure(stage, std::string("invalid JSON in completion: ") + e.what());
  }
}

std::string squash(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

// Canonical names first; then a spelling-insensitive match ("pleural effusion").
std::optional<Pathology> lenient_pathology(std::string_view text) {
  if (auto p = parse_pathology(text)) return p;
  auto key = squash(text);
  for (auto p : kAllPathologies) {
    if (squash(to_string(p)) == key) return p;
  }
  return std::nullopt;
}

std::string string_field(const json& obj, std::initializer_list<const char*> names, Stage stage) {
  for (const char* name : names) {
    if (obj.contains(name)) {
      if (!obj[name].is_string()) throw ParseFailure(stage, std::string("field '") + name + "' must be a string");
      return obj[name].get<std::string>();
    }
  }
  throw ParseFailure(stage, std::string("missing field '") + *names.begin() + "'");
}

std::vector<DifferentialAssessment::Entry> parse_entries(const json& list, const char* which) {
  if (!list.is_array()) throw ParseFailure(Stage::Differential, std::string("'") + which + "' must be an array");
  std::vector<DifferentialAssessment::Entry> out;
  for (const auto& e : list) {
    std::string label_text;
    std::string rationale;
    if (e.is_string()) {
      label_text = e.get<std::string>();
    } else if (e.is_object() && e.contains("label") && e["label"].is_string()) {
      label_text = e["label"].get<std::string>();
      if (e.contains("rationale") && e["rationale"].is_string()) rationale = e["rationale"].get<std::string>();
    } else {
      throw ParseFailure(Stage::Differential, std::string("malformed entry in '") + which + "'");
    }
    auto label = lenient_pathology(label_text);
    if (!label) throw ParseFailure(Stage::Differential, "unknown pathology '" + label_text + "'");
    out.push_back({*label, std::move(rationale)});
  }
  return out;
}

PipelineError wrap_backend_error(const BackendError& e, Stage stage) {
  ErrorKind kind = ErrorKind::Transport;
  if (dynamic_cast<const BudgetExceeded*>(&e)) kind = ErrorKind::BudgetExceeded;
  else if (dynamic_cast<const MalformedResponse*>(&e)) kind = ErrorKind::MalformedResponse;
  else if (dynamic_cast<const AuthError*>(&e)) kind = ErrorKind::Auth;
  return PipelineError(kind, stage, e.what());
}

std::string reprompt_text(const std::string& error) {
  return "Your previous answer could not be parsed (" + error +
         "). Answer again, strictly in the required format and nothing else.";
}

std::string context_or_none(const std::string& context) { return context.empty() ? "(none)" : context; }

}  // namespace

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ParseFailure: return "ParseFailure";
    case ErrorKind::DisjointnessViolation: return "DisjointnessViolation";
    case ErrorKind::EmptySection: return "EmptySection";
    case ErrorKind::CaseMismatch: return "CaseMismatch";
    case ErrorKind::BudgetExceeded: return "BudgetExceeded";
    case ErrorKind::Transport: return "TransportError";
    case ErrorKind::MalformedResponse: return "MalformedResponse";
    case ErrorKind::Auth: return "AuthError";
    case ErrorKind::InvalidRequest: return "InvalidRequest";
  }
  return "Unknown";
}

PipelineError::PipelineError(ErrorKind kind, Stage stage, const std::string& what)
    : std::runtime_error(std::string(to_string(stage)) + ": " + std::string(to_string(kind)) + ": " + what),
      kind_(kind),
      stage_(stage) {}

CaseFailure::CaseFailure(std::string case_id_, Source failed_flow_, std::optional<Stage> stage_,
                         const std::string& cause_, std::vector<AgentMessage> coop, std::vector<AgentMessage> comp)
    : std::runtime_error("case " + case_id_ + " failed in " + std::string(to_string(failed_flow_)) + " flow: " + cause_),
      case_id(std::move(case_id_)),
      failed_flow(failed_flow_),
      stage(stage_),
      cause(cause_),
      coop_partial(std::move(coop)),
      comp_partial(std::move(comp)) {}

void ContextBuffer::append(AgentMessage message) {
  if (!message.payload_matches_stage()) throw std::logic_error("payload kind does not match stage");
  if (!entries_.empty()) {
    Stage prev = entries_.back().stage;
    bool prev_omni = prev == Stage::Omni;
    bool next_omni = message.stage == Stage::Omni;
    if (prev_omni != next_omni) throw std::logic_error("cooperative and competitive messages cannot share a buffer");
    if (static_cast<int>(message.stage) < static_cast<int>(prev)) {
      throw std::logic_error("stage regression in evidence chain: " + std::string(to_string(message.stage)) +
                             " after " + std::string(to_string(prev)));
    }
  }
  entries_.push_back(std::move(message));
}

bool ContextBuffer::contains_stage(Stage stage) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const AgentMessage& m) { return m.stage == stage; });
}

std::vector<ScanLead> ContextBuffer::leads() const {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->stage == Stage::Scan) {
      if (const auto* leads = std::get_if<std::vector<ScanLead>>(&it->payload)) return *leads;
    }
  }
  return {};
}

std::string ContextBuffer::render() const {
  if (entries_.empty()) return "(empty)";
  std::string out;
  for (const auto& m : entries_) {
    out += "[" + std::string(to_string(m.stage)) + "/" + m.agent_instance + "]";
    out += std::holds_alternative<std::monostate>(m.payload) ? " (unparsed) " : " ";
    out += m.content;
    out += '\n';
  }
  return out;
}

void to_json(json& j, const ConflictSignal& v) {
  j = json{{"case_id", v.case_id},
           {"coop_labels", v.coop_labels},
           {"comp_labels", v.comp_labels},
           {"disagreement_count", v.disagreement_count}};
}

void from_json(const json& j, ConflictSignal& v) {
  v.case_id = j.at("case_id").get<std::string>();
  v.coop_labels = j.at("coop_labels").get<LabelSet>();
  v.comp_labels = j.at("comp_labels").get<LabelSet>();
  v.disagreement_count = j.at("disagreement_count").get<int>();
  if (v.disagreement_count != hamming_distance(v.coop_labels, v.comp_labels)) {
    throw std::invalid_argument("conflict disagreement_count does not match its label sets");
  }
}

std::optional<ConflictSignal> detect_conflict(const DiagnosticTrajectory& coop, const DiagnosticTrajectory& comp,
                                              int min_disagreement) {
  if (coop.case_id() != comp.case_id()) {
    throw CaseMismatch("trajectories belong to different cases: " + coop.case_id() + " vs " + comp.case_id());
  }
  int count = hamming_distance(coop.extracted_labels(), comp.extracted_labels());
  if (count == 0 || count < min_disagreement) return std::nullopt;
  return ConflictSignal{coop.case_id(), coop.extracted_labels(), comp.extracted_labels(), count};
}

const PromptLibrary& PromptLibrary::builtin() {
  static const PromptLibrary library = [] {
    PromptLibrary lib;
    namespace e = embedded;
    lib.templates_[static_cast<std::size_t>(Stage::Scan)] = {std::string(e::kPrompt_scan_system),
                                                             std::string(e::kPrompt_scan_user)};
    lib.templates_[static_cast<std::size_t>(Stage::Lesion)] = {std::string(e::kPrompt_lesion_system),
                                                               std::string(e::kPrompt_lesion_user)};
    lib.templates_[static_cast<std::size_t>(Stage::Differential)] = {std::string(e::kPrompt_differential_system),
                                                                     std::string(e::kPrompt_differential_user)};
    lib.templates_[static_cast<std::size_t>(Stage::Report)] = {std::string(e::kPrompt_report_system),
                                                               std::string(e::kPrompt_report_user)};
    lib.templates_[static_cast<std::size_t>(Stage::Omni)] = {std::string(e::kPrompt_omni_system),
                                                             std::string(e::kPrompt_omni_user)};
    return lib;
  }();
  return library;
}

PromptLibrary PromptLibrary::from_directory(const std::string& dir) {
  auto read = [&](const std::string& name) {
    auto path = std::filesystem::path(dir) / name;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read prompt template: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  PromptLibrary lib;
  for (auto stage : {Stage::Scan, Stage::Lesion, Stage::Differential, Stage::Report, Stage::Omni}) {
    auto stem = stage_file_stem(stage);
    lib.templates_[static_cast<std::size_t>(stage)] = {read(stem + ".system.txt"), read(stem + ".user.txt")};
  }
  return lib;
}

const PromptTemplate& PromptLibrary::get(Stage stage) const { return templates_[static_cast<std::size_t>(stage)]; }

std::uint64_t PromptLibrary::fingerprint() const {
  std::string all;
  for (const auto& t : templates_) all += t.system + '\x1f' + t.user + '\x1e';
  return fnv1a64(all);
}

std::vector<ScanLead> parse_scan_leads(const std::string& completion, int max_leads) {
  auto j = parse_embedded_json(completion, '[', ']', Stage::Scan);
  if (!j.is_array()) throw ParseFailure(Stage::Scan, "scan completion must be a JSON array");
  std::vector<ScanLead> leads;
  for (const auto& item : j) {
    if (!item.is_object()) throw ParseFailure(Stage::Scan, "scan lead must be a JSON object");
    ScanLead lead;
    lead.lead_id = static_cast<int>(leads.size());
    lead.anatomical_region = string_field(item, {"region", "anatomical_region"}, Stage::Scan);
    lead.description = string_field(item, {"description"}, Stage::Scan);
    if (!item.contains("salience") || !item["salience"].is_number()) {
      throw ParseFailure(Stage::Scan, "scan lead needs a numeric salience");
    }
    lead.salience = item["salience"].get<double>();
    if (!(lead.salience >= 0.0 && lead.salience <= 1.0)) throw ParseFailure(Stage::Scan, "salience outside [0, 1]");
    if (static_cast<int>(leads.size()) < max_leads) leads.push_back(std::move(lead));
  }
  return leads;
}

LesionFinding parse_lesion_finding(const std::string& completion, const ScanLead& lead,
                                   const std::vector<ScanLead>& known_leads) {
  auto j = parse_embedded_json(completion, '{', '}', Stage::Lesion);
  if (!j.is_object()) throw ParseFailure(Stage::Lesion, "lesion completion must be a JSON object");
  LesionFinding f;
  f.lead_id = lead.lead_id;
  if (j.contains("lead_id")) {
    if (!j["lead_id"].is_number_integer()) throw ParseFailure(Stage::Lesion, "lead_id must be an integer");
    int id = j["lead_id"].get<int>();
    bool known = std::any_of(known_leads.begin(), known_leads.end(), [&](const ScanLead& l) { return l.lead_id == id; });
    if (!known) throw ParseFailure(Stage::Lesion, "finding references nonexistent lead " + std::to_string(id));
    if (id != lead.lead_id) {
      throw ParseFailure(Stage::Lesion, "finding for lead " + std::to_string(id) + " returned by the agent assigned to lead " +
                                            std::to_string(lead.lead_id));
    }
  }
  f.morphology = string_field(j, {"morphology"}, Stage::Lesion);
  f.margins = string_field(j, {"margins"}, Stage::Lesion);
  f.density = string_field(j, {"density"}, Stage::Lesion);
  if (j.contains("candidate_pathologies")) {
    if (!j["candidate_pathologies"].is_array()) throw ParseFailure(Stage::Lesion, "candidate_pathologies must be an array");
    for (const auto& c : j["candidate_pathologies"]) {
      if (!c.is_string()) throw ParseFailure(Stage::Lesion, "candidate pathology must be a string");
      auto p = lenient_pathology(c.get<std::string>());
      if (!p) throw ParseFailure(Stage::Lesion, "unknown pathology '" + c.get<std::string>() + "'");
      f.candidate_pathologies.push_back(*p);
    }
  }
  return f;
}

DifferentialAssessment parse_differential(const std::string& completion) {
  auto j = parse_embedded_json(completion, '{', '}', Stage::Differential);
  if (!j.is_object() || !j.contains("ranked")) throw ParseFailure(Stage::Differential, "missing 'ranked' list");
  DifferentialAssessment a;
  a.ranked = parse_entries(j["ranked"], "ranked");
  a.excluded = j.contains("excluded") ? parse_entries(j["excluded"], "excluded") : std::vector<DifferentialAssessment::Entry>{};
  if (auto both = a.overlap(); !both.empty()) {
    std::string names;
    for (auto p : both) names += (names.empty() ? "" : ", ") + std::string(to_string(p));
    throw DisjointnessViolation("labels both ranked and excluded: " + names);
  }
  return a;
}

StructuredReport parse_report(const std::string& completion, Stage stage) {
  // A header is "findings:" / "impression:" at the start of a line, optionally
  // decorated with markdown ('#', '*', spaces). Text on the header line counts.
  struct Header {
    std::size_t content_begin;
    std::size_t line_begin;
    bool findings;
  };
  std::vector<Header> headers;
  std::size_t pos = 0;
  while (pos <= completion.size()) {
    auto eol = completion.find('\n', pos);
    if (eol == std::string::npos) eol = completion.size();
    std::size_t k = pos;
    while (k < eol && (completion[k] == '#' || completion[k] == '*' || completion[k] == ' ' || completion[k] == '\t')) ++k;
    std::string lower;
    for (std::size_t i = k; i < eol && lower.size() < 12; ++i) {
      lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(completion[i]))));
    }
    auto header_end = [&](std::size_t len) {
      std::size_t e = k + len;
      while (e < eol && (completion[e] == '*' || completion[e] == ' ')) ++e;
      if (e < eol && completion[e] == ':') return e + 1;
      return std::string::npos;
    };
    if (lower.rfind("findings", 0) == 0) {
      if (auto e = header_end(8); e != std::string::npos) headers.push_back({e, pos, true});
    } else if (lower.rfind("impression", 0) == 0) {
      if (auto e = header_end(10); e != std::string::npos) headers.push_back({e, pos, false});
    }
    pos = eol + 1;
  }
  if (headers.empty()) throw ParseFailure(stage, "report has neither a FINDINGS nor an IMPRESSION header");

  auto trim = [](std::string s) {
    auto b = s.find_first_not_of(" \t\r\n*");
    if (b == std::string::npos) return std::string();
    auto e = s.find_last_not_of(" \t\r\n*");
    return s.substr(b, e - b + 1);
  };
  StructuredReport report;
  bool have_findings = false;
  bool have_impression = false;
  for (std::size_t h = 0; h < headers.size(); ++h) {
    auto end = h + 1 < headers.size() ? headers[h + 1].line_begin : completion.size();
    auto body = trim(completion.substr(headers[h].content_begin, end - headers[h].content_begin));
    auto& slot = headers[h].findings ? report.findings : report.impression;
    if (!slot.empty() && !body.empty()) slot += "\n";
    slot += body;
    (headers[h].findings ? have_findings : have_impression) = true;
  }
  if (!have_findings || report.findings.empty()) throw EmptySection(stage, "report has no findings section");
  if (!have_impression || report.impression.empty()) throw EmptySection(stage, "report has no impression section");
  return report;
}

Orchestrator::Orchestrator(Backend& backend, OrchestratorOptions options, const PromptLibrary& prompts)
    : backend_(backend), options_(std::move(options)), prompts_(prompts) {
  options_.generation.validate();
  if (options_.max_leads < 0) throw std::invalid_argument("max_leads must be >= 0");
  if (options_.min_disagreement < 1 || options_.min_disagreement > 5) {
    throw std::invalid_argument("min_disagreement must be in [1, 5]");
  }
}

std::string Orchestrator::call(const CaseRecord& c, Stage stage, const std::string& instance, int attempt,
                               std::vector<ChatMessage> messages, CallBudget& budget) const {
  CompletionRequest request;
  request.messages = std::move(messages);
  request.params = options_.generation;
  request.tag = RequestTag{c.case_id, stage, instance, attempt};
  if (stage == Stage::Scan || stage == Stage::Lesion || stage == Stage::Omni) request.image_ref = c.image_ref;
  try {
    budget.charge(request.tag);
    return backend_.complete(request);
  } catch (const BackendError& e) {
    throw wrap_backend_error(e, stage);
  } catch (const std::invalid_argument& e) {
    throw PipelineError(ErrorKind::InvalidRequest, stage, e.what());
  }
}

std::vector<ScanLead> Orchestrator::run_scan(const CaseRecord& c, ContextBuffer& buffer, CallBudget& budget) const {
  if (buffer.case_id() != c.case_id) throw CaseMismatch("buffer belongs to case " + buffer.case_id());
  const auto& t = prompts_.get(Stage::Scan);
  std::map<std::string, std::string> values{
      {"case_id", c.case_id}, {"image_ref", c.image_ref}, {"clinical_context", context_or_none(c.clinical_context)}};
  std::vector<ChatMessage> messages{{Role::System, t.system}, {Role::User, substitute(t.user, values)}};
  for (int attempt = 0;; ++attempt) {
    auto completion = call(c, Stage::Scan, "scan", attempt, messages, budget);
    try {
      auto leads = parse_scan_leads(completion, options_.max_leads);
      buffer.append({Stage::Scan, "scan", completion, leads});
      return leads;
    } catch (const ParseFailure& e) {
      buffer.append({Stage::Scan, "scan", completion, std::monostate{}});
      if (attempt >= 1) throw;
      messages.push_back({Role::Assistant, completion});
      messages.push_back({Role::User, reprompt_text(e.what())});
    }
  }
}

Orchestrator::LesionAttempt Orchestrator::analyze_lead(const CaseRecord& c, const ScanLead& lead,
                                                       const ContextBuffer& snapshot, CallBudget& budget) const {
  LesionAttempt out;
  const auto instance = "lesion-" + std::to_string(lead.lead_id);
  const auto known = snapshot.leads();
  const auto& t = prompts_.get(Stage::Lesion);
  std::map<std::string, std::string> values{{"case_id", c.case_id},
                                            {"image_ref", c.image_ref},
                                            {"evidence", snapshot.render()},
                                            {"lead_id", std::to_string(lead.lead_id)},
                                            {"lead_region", lead.anatomical_region},
                                            {"lead_description", lead.description}};
  std::vector<ChatMessage> messages{{Role::System, t.system}, {Role::User, substitute(t.user, values)}};
  try {
    for (int attempt = 0;; ++attempt) {
      auto completion = call(c, Stage::Lesion, instance, attempt, messages, budget);
      try {
        auto finding = parse_lesion_finding(completion, lead, known);
        out.messages.push_back({Stage::Lesion, instance, completion, finding});
        out.finding = std::move(finding);
        return out;
      } catch (const ParseFailure& e) {
        out.messages.push_back({Stage::Lesion, instance, completion, std::monostate{}});
        if (attempt >= 1) throw;
        messages.push_back({Role::Assistant, completion});
        messages.push_back({Role::User, reprompt_text(e.what())});
      }
    }
  } catch (const PipelineError&) {
    out.error = std::current_exception();
  }
  return out;
}

LesionFinding Orchestrator::run_lesion(const CaseRecord& c, const ScanLead& lead, ContextBuffer& buffer,
                                       CallBudget& budget) const {
  if (buffer.case_id() != c.case_id) throw CaseMismatch("buffer belongs to case " + buffer.case_id());
  auto known = buffer.leads();
  if (std::find(known.begin(), known.end(), lead) == known.end()) {
    throw CaseMismatch("lead " + std::to_string(lead.lead_id) + " is not part of case " + c.case_id);
  }
  auto result = analyze_lead(c, lead, buffer, budget);
  for (auto& m : result.messages) buffer.append(std::move(m));
  if (result.error) std::rethrow_exception(result.error);
  return *result.finding;
}

DifferentialAssessment Orchestrator::run_differential(const std::vector<LesionFinding>& findings, const CaseRecord& c,
                                                      ContextBuffer& buffer, CallBudget& budget) const {
  if (buffer.case_id() != c.case_id) throw CaseMismatch("buffer belongs to case " + buffer.case_id());
  const auto& t = prompts_.get(Stage::Differential);
  std::map<std::string, std::string> values{{"case_id", c.case_id},
                                            {"clinical_context", context_or_none(c.clinical_context)},
                                            {"findings", json(findings).dump(2)},
                                            {"evidence", buffer.render()}};
  std::vector<ChatMessage> messages{{Role::System, t.system}, {Role::User, substitute(t.user, values)}};
  for (int attempt = 0;; ++attempt) {
    auto completion = call(c, Stage::Differential, "differential", attempt, messages, budget);
    try {
      auto assessment = parse_differential(completion);
      buffer.append({Stage::Differential, "differential", completion, assessment});
      return assessment;
    } catch (const DisjointnessViolation&) {
      buffer.append({Stage::Differential, "differential", completion, std::monostate{}});
      throw;
    } catch (const ParseFailure& e) {
      buffer.append({Stage::Differential, "differential", completion, std::monostate{}});
      if (attempt >= 1) throw;
      messages.push_back({Role::Assistant, completion});
      messages.push_back({Role::User, reprompt_text(e.what())});
    }
  }
}

StructuredReport Orchestrator::run_report(const DifferentialAssessment& assessment, const CaseRecord& c,
                                          ContextBuffer& buffer, CallBudget& budget) const {
  if (buffer.case_id() != c.case_id) throw CaseMismatch("buffer belongs to case " + buffer.case_id());
  if (!buffer.contains_stage(Stage::Differential)) {
    throw std::logic_error("report stage requires a differential assessment in the evidence chain");
  }
  const auto& t = prompts_.get(Stage::Report);
  std::map<std::string, std::string> values{
      {"case_id", c.case_id}, {"assessment", json(assessment).dump(2)}, {"evidence", buffer.render()}};
  std::vector<ChatMessage> messages{{Role::System, t.system}, {Role::User, substitute(t.user, values)}};
  for (int attempt = 0;; ++attempt) {
    auto completion = call(c, Stage::Report, "report", attempt, messages, budget);
    try {
      auto report = parse_report(completion, Stage::Report);
      buffer.append({Stage::Report, "report", completion, report});
      return report;
    } catch (const EmptySection&) {
      buffer.append({Stage::Report, "report", completion, std::monostate{}});
      throw;
    } catch (const ParseFailure& e) {
      buffer.append({Stage::Report, "report", completion, std::monostate{}});
      if (attempt >= 1) throw;
      messages.push_back({Role::Assistant, completion});
      messages.push_back({Role::User, reprompt_text(e.what())});
    }
  }
}

DiagnosticTrajectory Orchestrator::run_cooperative(const CaseRecord& c, ContextBuffer& buffer,
                                                   CallBudget& budget) const {
  auto leads = run_scan(c, buffer, budget);

  // Every lesion agent sees the same post-scan snapshot, so fan-out order
  // cannot leak into prompts; results are appended in lead_id order.
  const ContextBuffer snapshot = buffer;
  std::vector<LesionAttempt> attempts(leads.size());
  if (options_.parallel_lesions && leads.size() > 1) {
    std::vector<std::future<LesionAttempt>> futures;
    futures.reserve(leads.size());
    for (const auto& lead : leads) {
      futures.push_back(std::async(std::launch::async,
                                   [&, lead] { return analyze_lead(c, lead, snapshot, budget); }));
    }
    for (std::size_t i = 0; i < futures.size(); ++i) attempts[i] = futures[i].get();
  } else {
    for (std::size_t i = 0; i < leads.size(); ++i) attempts[i] = analyze_lead(c, leads[i], snapshot, budget);
  }

  std::vector<LesionFinding> findings;
  for (auto& a : attempts) {
    for (auto& m : a.messages) buffer.append(std::move(m));
    if (a.error) std::rethrow_exception(a.error);
    findings.push_back(*a.finding);
  }
  std::sort(findings.begin(), findings.end(),
            [](const LesionFinding& a, const LesionFinding& b) { return a.lead_id < b.lead_id; });

  auto assessment = run_differential(findings, c, buffer, budget);
  auto report = run_report(assessment, c, buffer, budget);
  return DiagnosticTrajectory(c.case_id, Source::Cooperative, buffer.entries(), std::move(report));
}

DiagnosticTrajectory Orchestrator::run_competitive(const CaseRecord& c, ContextBuffer& buffer,
                                                   CallBudget& budget) const {
  if (buffer.case_id() != c.case_id) throw CaseMismatch("buffer belongs to case " + c.case_id);
  const auto& t = prompts_.get(Stage::Omni);
  std::map<std::string, std::string> values{
      {"case_id", c.case_id}, {"image_ref", c.image_ref}, {"clinical_context", context_or_none(c.clinical_context)}};
  std::vector<ChatMessage> messages{{Role::System, t.system}, {Role::User, substitute(t.user, values)}};
  auto completion = call(c, Stage::Omni, "omni", 0, std::move(messages), budget);
  try {
    auto report = parse_report(completion, Stage::Omni);
    buffer.append({Stage::Omni, "omni", completion, report});
    return DiagnosticTrajectory(c.case_id, Source::Competitive, buffer.entries(), std::move(report));
  } catch (const PipelineError&) {
    buffer.append({Stage::Omni, "omni", completion, std::monostate{}});
    throw;
  }
}

DiagnosticTrajectory Orchestrator::run_cooperative(const CaseRecord& c) const {
  ContextBuffer buffer(c.case_id);
  CallBudget budget(options_.call_budget);
  return run_cooperative(c, buffer, budget);
}

DiagnosticTrajectory Orchestrator::run_competitive(const CaseRecord& c) const {
  ContextBuffer buffer(c.case_id);
  CallBudget budget(options_.call_budget);
  return run_competitive(c, buffer, budget);
}

CaseRun Orchestrator::run_case(const CaseRecord& c) const {
  CallBudget budget(options_.call_budget);
  ContextBuffer coop_buffer(c.case_id);
  ContextBuffer comp_buffer(c.case_id);

  struct FlowResult {
    std::optional<DiagnosticTrajectory> trajectory;
    std::optional<Stage> stage;
    std::string error;
  };
  auto guarded = [](auto&& body) {
    FlowResult r;
    try {
      r.trajectory = body();
    } catch (const PipelineError& e) {
      r.stage = e.stage();
      r.error = e.what();
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    return r;
  };
  auto coop_flow = [&] { return guarded([&] { return run_cooperative(c, coop_buffer, budget); }); };
  auto comp_flow = [&] { return guarded([&] { return run_competitive(c, comp_buffer, budget); }); };

  FlowResult coop;
  FlowResult comp;
  if (options_.parallel_flows) {
    auto comp_future = std::async(std::launch::async, comp_flow);
    coop = coop_flow();
    comp = comp_future.get();
  } else {
    coop = coop_flow();
    comp = comp_flow();
  }

  if (!coop.trajectory || !comp.trajectory) {
    const bool coop_failed = !coop.trajectory;
    const auto& failed = coop_failed ? coop : comp;
    throw CaseFailure(c.case_id, coop_failed ? Source::Cooperative : Source::Competitive, failed.stage, failed.error,
                      coop_buffer.entries(), comp_buffer.entries());
  }
  auto conflict = detect_conflict(*coop.trajectory, *comp.trajectory, options_.min_disagreement);
  return CaseRun{std::move(*coop.trajectory), std::move(*comp.trajectory), std::move(conflict)};
}

std::vector<std::string> audit_evidence_chain(const std::vector<AgentMessage>& transcript) {
  std::vector<std::string> problems;
  std::optional<std::vector<ScanLead>> leads;
  std::set<int> analyzed;
  bool differential_seen = false;
  bool report_seen = false;
  Stage prev = Stage::Scan;
  for (std::size_t i = 0; i < transcript.size(); ++i) {
    const auto& m = transcript[i];
    auto where = "message " + std::to_string(i) + ": ";
    if (!m.payload_matches_stage()) problems.push_back(where + "payload kind does not match stage");
    if (i > 0 && static_cast<int>(m.stage) < static_cast<int>(prev)) problems.push_back(where + "stage regression");
    prev = m.stage;
    switch (m.stage) {
      case Stage::Scan:
        if (auto* l = std::get_if<std::vector<ScanLead>>(&m.payload)) {
          leads = *l;
          for (std::size_t k = 0; k < l->size(); ++k) {
            if ((*l)[k].lead_id != static_cast<int>(k)) problems.push_back(where + "lead ids not 0..n-1");
          }
        }
        break;
      case Stage::Lesion:
        if (auto* f = std::get_if<LesionFinding>(&m.payload)) {
          bool known = leads && std::any_of(leads->begin(), leads->end(),
                                            [&](const ScanLead& l) { return l.lead_id == f->lead_id; });
          if (!known) problems.push_back(where + "lesion finding references unknown lead " + std::to_string(f->lead_id));
          if (m.agent_instance != "lesion-" + std::to_string(f->lead_id)) {
            problems.push_back(where + "instance tag " + m.agent_instance + " does not match lead");
          }
          if (!analyzed.insert(f->lead_id).second) problems.push_back(where + "lead analyzed twice");
        }
        break;
      case Stage::Differential:
        if (std::holds_alternative<DifferentialAssessment>(m.payload)) differential_seen = true;
        break;
      case Stage::Report:
        if (std::holds_alternative<StructuredReport>(m.payload)) {
          if (!differential_seen) problems.push_back(where + "report without a preceding differential");
          report_seen = true;
        }
        break;
      case Stage::Omni:
        problems.push_back(where + "Omni message in a cooperative transcript");
        break;
    }
  }
  if (!leads) problems.push_back("no parsed scan message");
  if (leads && analyzed.size() != leads->size()) {
    problems.push_back("fan-out mismatch: " + std::to_string(leads->size()) + " leads, " +
                       std::to_string(analyzed.size()) + " lesion findings");
  }
  if (!report_seen) problems.push_back("no parsed report message");
  return problems;
}

}  // namespace claw
