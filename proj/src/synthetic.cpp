#include "claw/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <random>

namespace claw {

namespace {

constexpr std::array<std::string_view, kNumPathologies> kPhrases{"consolidation", "pleural effusion", "pneumonia",
                                                                  "pneumothorax", "pulmonary edema"};
constexpr std::array<std::string_view, 6> kRegions{"right upper lobe",         "left lower lobe",
                                                   "right costophrenic angle", "left apex",
                                                   "perihilar region",         "retrocardiac region"};
constexpr std::array<std::string_view, 5> kDescriptions{"patchy airspace opacity", "blunted angle with meniscus",
                                                        "thin visceral pleural line", "hazy interstitial markings",
                                                        "rounded density"};
constexpr std::array<std::string_view, 4> kContexts{"Cough and fever for three days.", "Shortness of breath.",
                                                    "Chest pain after a fall.", "Follow-up after admission."};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
  bool chance(int percent) { return below(100) < static_cast<std::size_t>(percent); }
  template <typename C>
  const auto& pick(const C& c) { return c[below(c.size())]; }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

std::string capitalized(std::string_view s) {
  std::string out(s);
  if (!out.empty() && out[0] >= 'a' && out[0] <= 'z') out[0] = static_cast<char>(out[0] - 'a' + 'A');
  return out;
}

std::string join_or(const std::vector<std::string_view>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += i + 1 == items.size() ? " or " : ", ";
    out += items[i];
  }
  return out;
}

std::string impression(const LabelSet& labels, Rng& rng) {
  std::string out;
  std::vector<std::string_view> negatives;
  for (std::size_t k = 0; k < kNumPathologies; ++k) {
    auto phrase = kPhrases[k];
    if (!labels[kAllPathologies[k]]) {
      negatives.push_back(phrase);
      continue;
    }
    switch (rng.below(3)) {
      case 0: out += "There is " + std::string(phrase) + ". "; break;
      case 1: out += "Appearance is consistent with " + std::string(phrase) + ". "; break;
      default: out += capitalized(phrase) + " is seen. "; break;
    }
  }
  if (labels.count_positive() == 0) out += "No acute cardiopulmonary process. ";
  if (!negatives.empty()) out += "No " + join_or(negatives) + ".";
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

LabelSet flipped(LabelSet labels, std::initializer_list<std::size_t> indices) {
  for (auto k : indices) labels.set(kAllPathologies[k], !labels[kAllPathologies[k]]);
  return labels;
}

// Distinct label indices, drawn without replacement.
std::vector<std::size_t> distinct_indices(Rng& rng, std::size_t count) {
  std::vector<std::size_t> idx{0, 1, 2, 3, 4};
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  idx.resize(count);
  return idx;
}

LabelSet flip_some(const LabelSet& gt, Rng& rng) {
  auto idx = distinct_indices(rng, 1 + rng.below(2));
  LabelSet out = gt;
  for (auto k : idx) out = flipped(out, {k});
  return out;
}

void add_entry(std::string& script, const std::string& case_id, Stage stage, const std::string& instance,
               const std::string& completion) {
  json j{{"case_id", case_id}, {"stage", std::string(to_string(stage))}, {"instance", instance},
         {"completion", completion}};
  script += j.dump() + "\n";
}

void script_case(std::string& script, const SyntheticCase& sc, Rng& rng) {
  const auto& id = sc.record.case_id;
  const auto n_leads = static_cast<int>(rng.below(4));

  json leads = json::array();
  std::string findings;
  for (int i = 0; i < n_leads; ++i) {
    auto region = std::string(rng.pick(kRegions));
    auto desc = std::string(rng.pick(kDescriptions));
    char salience[16];
    std::snprintf(salience, sizeof salience, "%.2f", 0.3 + 0.05 * static_cast<double>(rng.below(14)));
    leads.push_back({{"region", region}, {"description", desc}, {"salience", std::stod(salience)}});
    findings += capitalized(desc) + " in the " + region + ". ";
  }
  if (findings.empty()) findings = "The lungs are clear. Heart size is normal.";
  while (!findings.empty() && findings.back() == ' ') findings.pop_back();
  add_entry(script, id, Stage::Scan, "scan", leads.dump());

  json candidates = json::array();
  json ranked = json::array();
  json excluded = json::array();
  for (std::size_t k = 0; k < kNumPathologies; ++k) {
    auto name = std::string(to_string(kAllPathologies[k]));
    if (sc.coop_labels[kAllPathologies[k]]) {
      candidates.push_back(name);
      ranked.push_back({{"label", name}, {"rationale", "supported by lesion findings"}});
    } else {
      excluded.push_back({{"label", name}, {"rationale", "no supporting finding"}});
    }
  }
  for (int i = 0; i < n_leads; ++i) {
    json finding{{"lead_id", i},
                 {"morphology", rng.chance(50) ? "patchy" : "homogeneous"},
                 {"margins", rng.chance(50) ? "ill-defined" : "well-defined"},
                 {"density", rng.chance(50) ? "airspace" : "fluid"},
                 {"candidate_pathologies", candidates}};
    add_entry(script, id, Stage::Lesion, "lesion-" + std::to_string(i), finding.dump());
  }
  add_entry(script, id, Stage::Differential, "differential",
            json{{"ranked", ranked}, {"excluded", excluded}}.dump());
  add_entry(script, id, Stage::Report, "report",
            "FINDINGS: " + findings + "\nIMPRESSION: " + impression(sc.coop_labels, rng));
  add_entry(script, id, Stage::Omni, "omni",
            "FINDINGS: Frontal view reviewed in full. Mediastinal contours are stable.\nIMPRESSION: " +
                impression(sc.comp_labels, rng));
}

}  // namespace

std::vector<CaseRecord> SyntheticCorpus::records() const {
  std::vector<CaseRecord> out;
  out.reserve(cases.size());
  for (const auto& c : cases) out.push_back(c.record);
  return out;
}

DatasetCounts expected_counts(const std::vector<SyntheticCase>& cases, int min_disagreement) {
  DatasetCounts counts;
  counts.cases = static_cast<int>(cases.size());
  for (const auto& c : cases) {
    int d = 0;
    for (auto p : kAllPathologies) d += c.coop_labels[p] != c.comp_labels[p] ? 1 : 0;
    if (d == 0 || d < min_disagreement) continue;
    ++counts.conflicts;
    int coop_hits = 0;
    int comp_hits = 0;
    for (auto p : kAllPathologies) {
      coop_hits += c.coop_labels[p] == c.record.ground_truth[p] ? 1 : 0;
      comp_hits += c.comp_labels[p] == c.record.ground_truth[p] ? 1 : 0;
    }
    if (coop_hits == comp_hits) {
      ++counts.ties_discarded;
    } else {
      ++counts.pairs;
      ++(coop_hits > comp_hits ? counts.coop_wins : counts.comp_wins);
    }
  }
  return counts;
}

SyntheticCorpus make_synthetic_corpus(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CaseKind> kinds;
  kinds.insert(kinds.end(), 12, CaseKind::Agree);
  kinds.insert(kinds.end(), 6, CaseKind::CoopWins);
  kinds.insert(kinds.end(), 4, CaseKind::CompWins);
  kinds.insert(kinds.end(), 2, CaseKind::Tie);
  for (std::size_t i = kinds.size(); i > 1; --i) std::swap(kinds[i - 1], kinds[rng.below(i)]);

  SyntheticCorpus corpus;
  for (int i = 0; i < kSyntheticCaseCount; ++i) {
    SyntheticCase sc;
    sc.kind = kinds[static_cast<std::size_t>(i)];
    char id[16];
    std::snprintf(id, sizeof id, "case-%03d", i + 1);
    sc.record.case_id = id;
    sc.record.image_ref = "images/" + sc.record.case_id + ".png";
    sc.record.clinical_context = std::string(rng.pick(kContexts));
    for (auto p : kAllPathologies) sc.record.ground_truth.set(p, rng.chance(35));

    const auto& gt = sc.record.ground_truth;
    switch (sc.kind) {
      case CaseKind::Agree:
        sc.coop_labels = sc.comp_labels = gt;
        break;
      case CaseKind::CoopWins:
        sc.coop_labels = gt;
        sc.comp_labels = flip_some(gt, rng);
        break;
      case CaseKind::CompWins:
        sc.coop_labels = flip_some(gt, rng);
        sc.comp_labels = gt;
        break;
      case CaseKind::Tie: {
        auto idx = distinct_indices(rng, 2);
        sc.coop_labels = flipped(gt, {idx[0]});
        sc.comp_labels = flipped(gt, {idx[1]});
        break;
      }
    }
    sc.record.reference_report = "FINDINGS: Single frontal radiograph of the chest.\nIMPRESSION: " + impression(gt, rng);
    script_case(corpus.script_jsonl, sc, rng);
    corpus.cases.push_back(std::move(sc));
  }
  corpus.expected = expected_counts(corpus.cases);
  return corpus;
}

}  // namespace claw
