#include <doctest.h>

#include <algorithm>
#include <random>
#include <regex>
#include <set>

#include "claw/domain.hpp"
#include "claw/text.hpp"
#include "support.hpp"

using namespace claw;
using claw::testing::TempDir;

namespace {

using P = Pathology;

StructuredReport impression(const std::string& text) { return {"Reviewed.", text}; }

// Independent label rule: regex sentence split, word lists, explicit scan for
// a cue that ends before the mention starts.
LabelSet oracle_labels(const std::string& text) {
  static const std::vector<std::pair<P, std::vector<std::string>>> families{
      {P::Consolidation, {"consolidation", "consolidations", "consolidative", "consolidated"}},
      {P::PleuralEffusion, {"pleural effusion", "pleural effusions", "effusion", "effusions", "hydrothorax"}},
      {P::Pneumonia, {"pneumonia", "pneumonias", "bronchopneumonia", "pneumonitis"}},
      {P::Pneumothorax, {"pneumothorax", "pneumothoraces", "hydropneumothorax"}},
      {P::Edema, {"edema", "oedema", "pulmonary edema"}},
  };
  static const std::vector<std::string> cues{"no", "without", "negative for", "resolved"};
  auto words = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s + " ") {
      auto c = static_cast<unsigned char>(ch);
      if (std::isalnum(c) || c >= 0x80) {
        cur.push_back(static_cast<char>(std::tolower(c)));
      } else if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    }
    return out;
  };
  auto occurrences = [&](const std::vector<std::string>& sent, const std::string& phrase) {
    auto p = words(phrase);
    std::vector<std::pair<std::size_t, std::size_t>> out;  // [begin, end)
    for (std::size_t i = 0; i + p.size() <= sent.size(); ++i) {
      if (std::equal(p.begin(), p.end(), sent.begin() + static_cast<long>(i))) out.emplace_back(i, i + p.size());
    }
    return out;
  };
  LabelSet out;
  std::regex boundary("[.!?;\n]");
  for (std::sregex_token_iterator it(text.begin(), text.end(), boundary, -1), end; it != end; ++it) {
    auto sent = words(it->str());
    for (const auto& [label, phrases] : families) {
      for (const auto& ph : phrases) {
        for (auto [b, e] : occurrences(sent, ph)) {
          bool negated = false;
          for (const auto& cue : cues) {
            for (auto [cb, ce] : occurrences(sent, cue)) negated = negated || ce <= b;
          }
          if (!negated) out.set(label, true);
        }
      }
    }
  }
  return out;
}

LabelSet random_labels(std::mt19937_64& rng) {
  LabelSet s;
  for (auto p : kAllPathologies) s.set(p, rng() % 2 == 0);
  return s;
}

}  // namespace

TEST_CASE("tokenize lowercases and drops punctuation") {
  CHECK(tokenize("Large RIGHT pneumothorax, no edema.") ==
        std::vector<std::string>{"large", "right", "pneumothorax", "no", "edema"});
  CHECK(tokenize("  ").empty());
  CHECK(tokenize("x-ray 2x") == std::vector<std::string>{"x", "ray", "2x"});
  CHECK(tokenize("\xc3\xa9panchement") == std::vector<std::string>{"\xc3\xa9panchement"});
}

TEST_CASE("substitute fills identifiers and leaves other braces alone") {
  CHECK(substitute("case {case_id}: {\"a\": 1}", {{"case_id", "c1"}}) == "case c1: {\"a\": 1}");
  CHECK_THROWS_AS(substitute("{missing}", {}), std::out_of_range);
}

TEST_CASE("vocabulary ids are lexicographic ranks") {
  std::vector<std::vector<std::string>> lists{{"b", "a"}, {"c", "a"}};
  auto v = Vocabulary::build(lists);
  CHECK(v.size() == 3);
  CHECK(v.id("a") == 0);
  CHECK(v.id("c") == 2);
  CHECK_THROWS_AS((void)v.id("zzz"), std::out_of_range);
}

TEST_CASE("pathology names round-trip and are distinct") {
  std::set<std::string> names;
  for (auto p : kAllPathologies) {
    names.insert(std::string(to_string(p)));
    CHECK(parse_pathology(to_string(p)) == p);
  }
  CHECK(names.size() == 5);
  CHECK_FALSE(parse_pathology("pleural effusion").has_value());
}

TEST_CASE("score_vs_gt is Hamming similarity") {
  LabelSet gt{P::Pneumonia, P::Edema};
  CHECK(score_vs_gt(gt, gt) == 1.0);
  CHECK(score_vs_gt(gt.complement(), gt) == 0.0);
  LabelSet three = gt;
  three.set(P::Consolidation, true).set(P::Edema, false);  // 2 disagreements
  CHECK(score_vs_gt(three, gt) == doctest::Approx(0.6).epsilon(1e-15));

  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    auto a = random_labels(rng);
    auto b = random_labels(rng);
    CHECK(score_vs_gt(a, b) == score_vs_gt(b, a));
    CHECK(score_vs_gt(a, b) == doctest::Approx(1.0 - hamming_distance(a, b) / 5.0));
  }
}

TEST_CASE("extract_labels on the documented impressions") {
  CHECK(extract_labels(impression("Large right pneumothorax. No edema.")) == LabelSet{P::Pneumothorax});
  CHECK(extract_labels(impression("No acute findings.")) == LabelSet{});
  CHECK(extract_labels(impression(
            "Consolidation with parapneumonic pleural effusion; findings consistent with pneumonia.")) ==
        LabelSet{P::Consolidation, P::PleuralEffusion, P::Pneumonia});
}

TEST_CASE("negation only reaches forward within its sentence") {
  CHECK(extract_labels(impression("No effusion. Effusion is present.")) == LabelSet{P::PleuralEffusion});
  CHECK(extract_labels(impression("Edema without effusion.")) == LabelSet{P::Edema});
  CHECK(extract_labels(impression("Negative for pneumonia; pneumothorax present")) == LabelSet{P::Pneumothorax});
  CHECK(extract_labels(impression("Pulmonary edema has resolved.")) == LabelSet{P::Edema});
  CHECK(extract_labels(impression("Resolved pulmonary edema.")) == LabelSet{});
  CHECK(extract_labels(impression("Knot in the rope.")) == LabelSet{});
}

TEST_CASE("extract_labels agrees with a brute-force sentence oracle") {
  const std::vector<std::string> bag{"no",          "without",   "negative",      "for",       "resolved",
                                     "pleural",     "effusion",  "effusions",     "pneumonia", "edema",
                                     "pulmonary",   "oedema",    "consolidation", "pneumothorax",
                                     "hydrothorax", "the",       "right",         "small",     "is",
                                     "seen",        "and",       "pneumonitis",   "Edema"};
  const std::vector<std::string> seps{" ", " ", " ", ", ", ". ", "; ", "\n", "! "};
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 2000; ++trial) {
    std::string text;
    auto n = 1 + rng() % 14;
    for (std::size_t i = 0; i < n; ++i) {
      text += bag[rng() % bag.size()];
      text += seps[rng() % seps.size()];
    }
    INFO(text);
    CHECK(extract_labels(impression(text)) == oracle_labels(text));
  }
}

TEST_CASE("trajectory shape is enforced") {
  StructuredReport r{"Clear.", "No acute process."};
  AgentMessage omni{Stage::Omni, "omni", "text", r};
  CHECK_NOTHROW(DiagnosticTrajectory("c1", Source::Competitive, {omni}, r));
  CHECK_THROWS_AS(DiagnosticTrajectory("c1", Source::Competitive, {omni, omni}, r), std::invalid_argument);

  AgentMessage scan{Stage::Scan, "scan", "[]", std::vector<ScanLead>{}};
  AgentMessage diff{Stage::Differential, "differential", "{}", DifferentialAssessment{}};
  AgentMessage report{Stage::Report, "report", "text", r};
  DiagnosticTrajectory coop("c1", Source::Cooperative, {scan, diff, report}, r);
  CHECK(coop.messages().size() == 3);
  CHECK(coop.extracted_labels() == extract_labels(r));
  CHECK_THROWS_AS(DiagnosticTrajectory("c1", Source::Cooperative, {scan, report}, r), std::invalid_argument);
  CHECK_THROWS_AS(DiagnosticTrajectory("c1", Source::Cooperative, {diff, scan, report}, r), std::invalid_argument);
  CHECK_THROWS_AS(DiagnosticTrajectory("c1", Source::Cooperative, {scan, diff, report}, StructuredReport{"x", " "}),
                  std::invalid_argument);
  AgentMessage bad{Stage::Scan, "scan", "x", r};
  CHECK_FALSE(bad.payload_matches_stage());
}

TEST_CASE("JSON round-trip is the identity") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    auto s = random_labels(rng);
    CHECK(json(s).get<LabelSet>() == s);
  }
  CaseRecord c{"c9", "img.png", "", LabelSet{P::Edema}, std::string("FINDINGS: x\nIMPRESSION: y")};
  CHECK(json(c).get<CaseRecord>() == c);
  CaseRecord c2{"c10", "img.png", "ctx", LabelSet{}, std::nullopt};
  CHECK(json(c2).get<CaseRecord>() == c2);

  std::vector<AgentMessage> msgs{
      {Stage::Scan, "scan", "[...]", std::vector<ScanLead>{{0, "rul", "opacity", 0.25}, {1, "lll", "nodule", 1.0}}},
      {Stage::Lesion, "lesion-0", "{}", LesionFinding{0, "round", "smooth", "solid", {P::Pneumonia, P::Edema}}},
      {Stage::Lesion, "lesion-1", "garbled", std::monostate{}},
      {Stage::Differential, "differential", "{}",
       DifferentialAssessment{{{P::Pneumonia, "fever"}}, {{P::Pneumothorax, "no line"}}}},
      {Stage::Report, "report", "text", StructuredReport{"Opacity.", "Pneumonia."}},
  };
  for (const auto& m : msgs) CHECK(json(m).get<AgentMessage>() == m);

  DiagnosticTrajectory t("c9", Source::Cooperative, msgs, StructuredReport{"Opacity.", "Pneumonia."});
  auto back = trajectory_from_json(json(t));
  CHECK(back == t);
  CHECK(back.extracted_labels() == t.extracted_labels());
  CHECK(back.tokens() == t.tokens());
}

TEST_CASE("JSON decoding rejects partial or inconsistent records") {
  json partial{{"Consolidation", true}, {"PleuralEffusion", false}};
  CHECK_THROWS(partial.get<LabelSet>());
  json msg = json(AgentMessage{Stage::Scan, "scan", "[]", std::vector<ScanLead>{}});
  msg["stage"] = "Report";
  CHECK_THROWS(msg.get<AgentMessage>());

  StructuredReport r{"Clear.", "Pneumonia."};
  DiagnosticTrajectory t("c1", Source::Competitive, {{Stage::Omni, "omni", "x", r}}, r);
  json j = t;
  j["extracted_labels"]["Pneumonia"] = false;
  CHECK_THROWS(trajectory_from_json(j));
}

TEST_CASE("case datasets load, save and reject duplicates") {
  TempDir dir;
  std::vector<CaseRecord> cases{claw::testing::make_case("a", LabelSet{P::Edema}), claw::testing::make_case("b")};
  save_cases(cases, dir.file("cases.jsonl"));
  CHECK(load_cases(dir.file("cases.jsonl")) == cases);

  auto line = json(cases[0]).dump();
  claw::testing::write_text(dir.file("dup.jsonl"), line + "\n" + line + "\n");
  try {
    load_cases(dir.file("dup.jsonl"));
    FAIL("expected a duplicate-id error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
    CHECK(std::string(e.what()).find("a") != std::string::npos);
  }
}
