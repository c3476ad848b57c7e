#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "claw/compo.hpp"
#include "claw/domain.hpp"
#include "claw/preference.hpp"

namespace claw {

// Autoregressive token table: one softmax row per (prompt, previous token)
// context, one column per vocabulary token plus end-of-sequence. Rows are
// allocated on first use, so the table only covers contexts seen in the data.
class SequenceTable {
 public:
  explicit SequenceTable(std::size_t vocab_size = 0) : vocab_size_(vocab_size) {}

  [[nodiscard]] compo::Index bos() const { return static_cast<compo::Index>(vocab_size_); }
  [[nodiscard]] compo::Index eos() const { return static_cast<compo::Index>(vocab_size_); }
  [[nodiscard]] compo::Index rows() const { return static_cast<compo::Index>(contexts_.size()); }
  [[nodiscard]] compo::Index cols() const { return static_cast<compo::Index>(vocab_size_) + 1; }
  [[nodiscard]] std::size_t vocab_size() const { return vocab_size_; }

  // Steps for tokens followed by end-of-sequence; allocates unseen contexts.
  compo::Trace encode(int prompt, const std::vector<int>& tokens);

  // (prompt, previous token) per row, in row order.
  [[nodiscard]] const std::vector<std::pair<int, int>>& contexts() const { return contexts_; }

  [[nodiscard]] json to_json() const;
  static SequenceTable from_json(const json& j);

  friend bool operator==(const SequenceTable& a, const SequenceTable& b) {
    return a.vocab_size_ == b.vocab_size_ && a.contexts_ == b.contexts_;
  }

 private:
  compo::Index row_for(int prompt, int prev);

  std::size_t vocab_size_;
  std::map<std::pair<int, int>, compo::Index> rows_;
  std::vector<std::pair<int, int>> contexts_;
};

struct EncodedPreferences {
  SequenceTable table;
  std::vector<compo::PreferenceExample> examples;  // same order as dataset.pairs
};

// Prompt ids follow pair order, which is case_id order.
EncodedPreferences encode_preferences(const PreferenceDataset& dataset);

std::string config_hash(const compo::ComPOConfig& config);
json to_json(const compo::ComPOConfig& config);
compo::ComPOConfig compo_config_from_json(const json& j, compo::ComPOConfig defaults = {});

// Trained-policy file: logits matrix, row contexts and the config hash.
json policy_to_json(const compo::TabularPolicy<double>& policy, const SequenceTable& table,
                    const compo::ComPOConfig& config);
std::pair<compo::TabularPolicy<double>, SequenceTable> policy_from_json(const json& j);

// Fraction of pairs whose implied reward ranks y_w strictly above y_l.
double preference_accuracy(const compo::TabularPolicy<double>& policy, const compo::TabularPolicy<double>& ref,
                           std::span<const compo::PreferenceExample> examples, double beta);

}  // namespace claw
