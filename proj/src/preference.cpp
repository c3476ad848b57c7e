#include "claw/preference.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "claw/orchestrator.hpp"

namespace claw {

namespace {

json side_to_json(const DiagnosticTrajectory& t, const std::vector<int>& tokens) {
  json j = t;
  j["token_seq"] = tokens;
  return j;
}

}  // namespace

std::string canonical_prompt(const CaseRecord& c) {
  return json{{"clinical_context", c.clinical_context}, {"image_ref", c.image_ref}}.dump();
}

std::optional<PreferencePair> adjudicate(const DiagnosticTrajectory& coop, const DiagnosticTrajectory& comp,
                                         const LabelSet& gt, int min_disagreement) {
  if (coop.source() != Source::Cooperative || comp.source() != Source::Competitive) {
    throw std::invalid_argument("adjudicate expects a cooperative and a competitive trajectory");
  }
  if (!detect_conflict(coop, comp, min_disagreement)) return std::nullopt;
  const double coop_score = score_vs_gt(coop.extracted_labels(), gt);
  const double comp_score = score_vs_gt(comp.extracted_labels(), gt);
  if (coop_score == comp_score) return std::nullopt;
  const bool coop_wins = coop_score > comp_score;
  return PreferencePair{coop.case_id(),
                        {},
                        coop_wins ? coop : comp,
                        coop_wins ? comp : coop,
                        {},
                        {},
                        Adjudication{std::max(coop_score, comp_score), std::min(coop_score, comp_score),
                                     std::string(kHammingOracle),
                                     coop_wins ? Source::Cooperative : Source::Competitive}};
}

std::vector<std::string> orphan_case_ids(const std::vector<CaseRecord>& cases, const RunManifest& run) {
  std::set<std::string> dataset_ids;
  std::set<std::string> run_ids;
  for (const auto& c : cases) dataset_ids.insert(c.case_id);
  for (const auto& c : run.cases) run_ids.insert(c.case_id);
  std::vector<std::string> out;
  for (const auto& id : dataset_ids) {
    if (!run_ids.count(id)) out.push_back("dataset-only:" + id);
  }
  for (const auto& id : run_ids) {
    if (!dataset_ids.count(id)) out.push_back("manifest-only:" + id);
  }
  return out;
}

PreferenceDataset build_dataset(const std::vector<CaseRecord>& cases, const RunManifest& run, int min_disagreement) {
  if (auto orphans = orphan_case_ids(cases, run); !orphans.empty()) {
    std::string list;
    for (const auto& o : orphans) list += (list.empty() ? "" : ", ") + o;
    throw std::invalid_argument("dataset and manifest case ids differ: " + list);
  }
  std::map<std::string, const CaseRecord*> by_id;
  for (const auto& c : cases) by_id[c.case_id] = &c;

  PreferenceDataset out;
  out.provenance = run.run_id;
  out.counts.cases = static_cast<int>(cases.size());
  std::vector<const CaseOutcome*> ordered;
  for (const auto& o : run.cases) ordered.push_back(&o);
  std::sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) { return a->case_id < b->case_id; });

  for (const auto* outcome : ordered) {
    if (!outcome->run) {
      ++out.counts.failed_cases;
      continue;
    }
    const auto& record = *by_id.at(outcome->case_id);
    const auto& r = *outcome->run;
    if (!detect_conflict(r.coop, r.comp, min_disagreement)) continue;
    ++out.counts.conflicts;
    auto pair = adjudicate(r.coop, r.comp, record.ground_truth, min_disagreement);
    if (!pair) {
      ++out.counts.ties_discarded;
      continue;
    }
    pair->prompt_x = canonical_prompt(record);
    (pair->adjudication.winner == Source::Cooperative ? out.counts.coop_wins : out.counts.comp_wins)++;
    out.pairs.push_back(std::move(*pair));
  }
  out.counts.pairs = static_cast<int>(out.pairs.size());

  std::vector<std::vector<std::string>> token_lists;
  for (const auto& p : out.pairs) {
    token_lists.push_back(p.y_w.tokens());
    token_lists.push_back(p.y_l.tokens());
  }
  out.vocab = Vocabulary::build(token_lists);
  for (auto& p : out.pairs) {
    p.tokens_w = out.vocab.encode(p.y_w.tokens());
    p.tokens_l = out.vocab.encode(p.y_l.tokens());
  }
  return out;
}

void to_json(json& j, const DatasetCounts& v) {
  j = json{{"cases", v.cases},         {"failed_cases", v.failed_cases}, {"conflicts", v.conflicts},
           {"ties_discarded", v.ties_discarded}, {"pairs", v.pairs},     {"coop_wins", v.coop_wins},
           {"comp_wins", v.comp_wins}};
}

void from_json(const json& j, DatasetCounts& v) {
  v.cases = j.at("cases").get<int>();
  v.failed_cases = j.at("failed_cases").get<int>();
  v.conflicts = j.at("conflicts").get<int>();
  v.ties_discarded = j.at("ties_discarded").get<int>();
  v.pairs = j.at("pairs").get<int>();
  v.coop_wins = j.at("coop_wins").get<int>();
  v.comp_wins = j.at("comp_wins").get<int>();
}

void persist(const PreferenceDataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write preference file: " + path);
  out << json{{"schema", kPreferenceSchema},
              {"provenance", dataset.provenance},
              {"vocab", dataset.vocab.tokens()},
              {"counts", dataset.counts}}
             .dump()
      << '\n';
  for (const auto& p : dataset.pairs) {
    const auto& a = p.adjudication;
    out << json{{"case_id", p.case_id},
                {"prompt_x", p.prompt_x},
                {"y_w", side_to_json(p.y_w, p.tokens_w)},
                {"y_l", side_to_json(p.y_l, p.tokens_l)},
                {"adjudication",
                 {{"score_w", a.score_w},
                  {"score_l", a.score_l},
                  {"oracle", a.oracle},
                  {"winner", std::string(to_string(a.winner))}}}}
               .dump()
        << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

PreferenceDataset load_preferences(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open preference file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaVersionError(path + ": missing schema header line");
  PreferenceDataset out;
  std::set<std::string> seen;
  int line_no = 1;
  try {
    auto header = json::parse(line);
    auto schema = header.value("schema", std::string());
    if (schema != kPreferenceSchema) {
      throw SchemaVersionError(path + ": schema '" + schema + "' is not " + std::string(kPreferenceSchema));
    }
    out.provenance = header.at("provenance").get<std::string>();
    out.vocab = Vocabulary(header.at("vocab").get<std::vector<std::string>>());
    out.counts = header.at("counts").get<DatasetCounts>();
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      auto j = json::parse(line);
      const auto& a = j.at("adjudication");
      auto winner = parse_source(a.at("winner").get<std::string>());
      if (!winner) throw std::invalid_argument("unknown winner source");
      PreferencePair p{j.at("case_id").get<std::string>(),
                       j.at("prompt_x").get<std::string>(),
                       trajectory_from_json(j.at("y_w")),
                       trajectory_from_json(j.at("y_l")),
                       j.at("y_w").at("token_seq").get<std::vector<int>>(),
                       j.at("y_l").at("token_seq").get<std::vector<int>>(),
                       Adjudication{a.at("score_w").get<double>(), a.at("score_l").get<double>(),
                                    a.at("oracle").get<std::string>(), *winner}};
      if (!(p.adjudication.score_w > p.adjudication.score_l)) throw std::invalid_argument("score_w must exceed score_l");
      if (p.y_w.source() == p.y_l.source()) throw std::invalid_argument("pair trajectories share a source");
      if (p.y_w.source() != p.adjudication.winner) throw std::invalid_argument("winner does not match y_w source");
      for (const auto* seq : {&p.tokens_w, &p.tokens_l}) {
        for (int id : *seq) {
          if (id < 0 || id >= static_cast<int>(out.vocab.size())) throw std::invalid_argument("token id out of range");
        }
      }
      if (!seen.insert(p.case_id).second) throw std::invalid_argument("duplicate case_id " + p.case_id);
      out.pairs.push_back(std::move(p));
    }
  } catch (const SchemaVersionError&) {
    throw;
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
  }
  return out;
}

}  // namespace claw
