#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "claw/domain.hpp"
#include "claw/preference.hpp"

namespace claw {

// How the two pathways of a synthetic case are meant to relate to ground truth.
enum class CaseKind : std::uint8_t { Agree, CoopWins, CompWins, Tie };

struct SyntheticCase {
  CaseRecord record;
  CaseKind kind = CaseKind::Agree;
  LabelSet coop_labels;  // labels the scripted cooperative report states
  LabelSet comp_labels;  // labels the scripted omni report states
};

struct SyntheticCorpus {
  std::vector<SyntheticCase> cases;
  std::string script_jsonl;  // ScriptedBackend entries covering every stage of every case
  // Counts derived from the intended labels alone, without running the pipeline.
  DatasetCounts expected;

  [[nodiscard]] std::vector<CaseRecord> records() const;
};

// Fixed mix per 24 cases: 12 agreements, 6 cooperative wins, 4 competitive
// wins, 2 ties. The seed drives labels, lead counts, wording and case order.
inline constexpr int kSyntheticCaseCount = 24;

SyntheticCorpus make_synthetic_corpus(std::uint64_t seed);

// Independent count of what build_dataset must produce for the intended labels.
DatasetCounts expected_counts(const std::vector<SyntheticCase>& cases, int min_disagreement = 1);

}  // namespace claw
