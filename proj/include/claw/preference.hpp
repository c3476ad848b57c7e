#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "claw/domain.hpp"
#include "claw/manifest.hpp"
#include "claw/text.hpp"

namespace claw {

inline constexpr std::string_view kPreferenceSchema = "claw-pref-v1";
inline constexpr std::string_view kHammingOracle = "hamming-labels-v1";

struct Adjudication {
  double score_w = 0.0;
  double score_l = 0.0;
  std::string oracle;
  Source winner = Source::Cooperative;

  friend bool operator==(const Adjudication&, const Adjudication&) = default;
};

// (x, y_w, y_l). Token sequences are ids under the owning dataset's vocabulary
// and stay empty until the pair is placed in a dataset.
struct PreferencePair {
  std::string case_id;
  std::string prompt_x;
  DiagnosticTrajectory y_w;
  DiagnosticTrajectory y_l;
  std::vector<int> tokens_w;
  std::vector<int> tokens_l;
  Adjudication adjudication;

  friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

struct DatasetCounts {
  int cases = 0;
  int failed_cases = 0;
  int conflicts = 0;
  int ties_discarded = 0;
  int pairs = 0;
  int coop_wins = 0;
  int comp_wins = 0;

  friend bool operator==(const DatasetCounts&, const DatasetCounts&) = default;
};

struct PreferenceDataset {
  std::vector<PreferencePair> pairs;  // sorted by case_id, at most one per case
  std::string provenance;             // run manifest id
  Vocabulary vocab;
  DatasetCounts counts;

  friend bool operator==(const PreferenceDataset&, const PreferenceDataset&) = default;
};

class SchemaVersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Canonical serialization of the conditioning input x: image reference and
// clinical context, keys sorted.
std::string canonical_prompt(const CaseRecord& c);

// Ground truth decides a conflict: the trajectory whose labels score higher
// against `gt` wins. No conflict, or equal scores, yields no pair.
// Throws CaseMismatch when the trajectories belong to different cases.
std::optional<PreferencePair> adjudicate(const DiagnosticTrajectory& coop, const DiagnosticTrajectory& comp,
                                         const LabelSet& gt, int min_disagreement = 1);

// Case ids present in only one of the two inputs, each prefixed with its side.
std::vector<std::string> orphan_case_ids(const std::vector<CaseRecord>& cases, const RunManifest& run);

// Throws std::invalid_argument listing orphan ids when the inputs disagree.
PreferenceDataset build_dataset(const std::vector<CaseRecord>& cases, const RunManifest& run,
                                int min_disagreement = 1);

// Header line carries the schema version, provenance, vocabulary and counts;
// then one pair per line.
void persist(const PreferenceDataset& dataset, const std::string& path);
PreferenceDataset load_preferences(const std::string& path);

void to_json(json& j, const DatasetCounts& v);
void from_json(const json& j, DatasetCounts& v);

}  // namespace claw
