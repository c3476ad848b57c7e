#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "claw/domain.hpp"

namespace claw::metrics {

class LengthMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class EmptyInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CorpusTooSmall : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Tokens = std::vector<std::string>;

struct BleuOptions {
  bool smooth = false;  // add-one on n >= 2 precisions
};

// Corpus BLEU-4 with a single reference per candidate.
double bleu4(std::span<const std::string> candidates, std::span<const std::string> references, BleuOptions opts = {});
// Multi-reference corpus BLEU-4: counts clipped by the per-reference maximum,
// effective reference length is the closest (shorter on ties).
double bleu4(std::span<const std::string> candidates, std::span<const std::vector<std::string>> reference_sets,
             BleuOptions opts = {});
// Mean of per-sentence BLEU-4 scores.
double sentence_bleu4_mean(std::span<const std::string> candidates,
                           std::span<const std::vector<std::string>> reference_sets, BleuOptions opts = {});

inline constexpr double kRougeBeta = 1.2;

std::size_t lcs_length(const Tokens& a, const Tokens& b);
double rouge_l(const std::string& candidate, const std::string& reference);
double rouge_l(const std::string& candidate, const std::vector<std::string>& references);  // best reference

struct MeteorAlignment {
  int matches = 0;
  int chunks = 0;
  std::vector<std::pair<int, int>> pairs;  // (candidate index, reference index), by candidate index
};

// Exact-match alignment built greedily from the longest common contiguous
// runs, which keeps the chunk count low.
MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference);
double meteor(const std::string& candidate, const std::string& reference);
double meteor(const std::string& candidate, const std::vector<std::string>& references);  // best reference

// Plain CIDEr (no length penalty, no clipping), scaled by 10. IDF is taken
// over reference sets; n-grams seen in no reference set get document
// frequency 1.
std::vector<double> cider_per_case(std::span<const std::string> candidates,
                                   std::span<const std::vector<std::string>> reference_sets, int n_max = 4);
double cider(std::span<const std::string> candidates, std::span<const std::vector<std::string>> reference_sets,
             int n_max = 4);

struct LabelAccuracy {
  std::array<double, kNumPathologies> per_label{};
  double avg = 0.0;
};

LabelAccuracy multilabel_accuracy(std::span<const LabelSet> preds, std::span<const LabelSet> gts);

struct MetricReport {
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double meteor = 0.0;
  double cider = 0.0;
  std::array<double, kNumPathologies> per_label_acc{};
  double avg_acc = 0.0;
  int cases = 0;
};

struct EvalRecord {
  std::string case_id;
  std::string candidate;
  std::vector<std::string> references;
  LabelSet pred_labels;
  LabelSet gt_labels;
};

enum class BleuMode : std::uint8_t { Corpus, SentenceMean };

struct EvalOptions {
  BleuMode bleu_mode = BleuMode::Corpus;
  BleuOptions bleu;
};

MetricReport evaluate(std::span<const EvalRecord> records, EvalOptions opts = {});

json to_json(const MetricReport& report);
// Aligned plain-text table on the x100 display scale.
std::string format_table(const MetricReport& report);

}  // namespace claw::metrics
