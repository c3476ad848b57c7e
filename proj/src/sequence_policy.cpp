#include "claw/sequence_policy.hpp"

#include <random>

#include "claw/text.hpp"

namespace claw {

namespace compo {

void shuffle_indices(std::vector<std::size_t>& idx, std::uint64_t& state) {
  std::mt19937_64 rng(state);
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  state = rng();
}

}  // namespace compo

compo::Index SequenceTable::row_for(int prompt, int prev) {
  auto [it, inserted] = rows_.try_emplace({prompt, prev}, static_cast<compo::Index>(contexts_.size()));
  if (inserted) contexts_.emplace_back(prompt, prev);
  return it->second;
}

compo::Trace SequenceTable::encode(int prompt, const std::vector<int>& tokens) {
  compo::Trace trace;
  trace.reserve(tokens.size() + 1);
  int prev = static_cast<int>(bos());
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_size_) throw std::out_of_range("token id outside vocabulary");
    trace.push_back({row_for(prompt, prev), t});
    prev = t;
  }
  trace.push_back({row_for(prompt, prev), eos()});
  return trace;
}

json SequenceTable::to_json() const {
  json ctx = json::array();
  for (const auto& [p, prev] : contexts_) ctx.push_back({p, prev});
  return json{{"vocab_size", vocab_size_}, {"contexts", ctx}};
}

SequenceTable SequenceTable::from_json(const json& j) {
  SequenceTable t(j.at("vocab_size").get<std::size_t>());
  for (const auto& c : j.at("contexts")) t.row_for(c.at(0).get<int>(), c.at(1).get<int>());
  return t;
}

EncodedPreferences encode_preferences(const PreferenceDataset& dataset) {
  EncodedPreferences out{SequenceTable(dataset.vocab.size()), {}};
  out.examples.reserve(dataset.pairs.size());
  for (std::size_t i = 0; i < dataset.pairs.size(); ++i) {
    const auto& p = dataset.pairs[i];
    auto prompt = static_cast<int>(i);
    auto chosen = out.table.encode(prompt, p.tokens_w);
    auto rejected = out.table.encode(prompt, p.tokens_l);
    out.examples.push_back({std::move(chosen), std::move(rejected)});
  }
  return out;
}

json to_json(const compo::ComPOConfig& c) {
  return json{{"beta", c.beta},
              {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"steps", c.steps},
              {"seed", c.seed}};
}

compo::ComPOConfig compo_config_from_json(const json& j, compo::ComPOConfig c) {
  c.beta = j.value("beta", c.beta);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::string config_hash(const compo::ComPOConfig& config) { return hex64(fnv1a64(to_json(config).dump())); }

json policy_to_json(const compo::TabularPolicy<double>& policy, const SequenceTable& table,
                    const compo::ComPOConfig& config) {
  json rows = json::array();
  for (compo::Index r = 0; r < policy.rows(); ++r) {
    json row = json::array();
    for (compo::Index c = 0; c < policy.cols(); ++c) row.push_back(policy.logits()(r, c));
    rows.push_back(std::move(row));
  }
  return json{{"config_hash", config_hash(config)},
              {"config", to_json(config)},
              {"scoring", policy.scoring() == compo::SequenceScoring::Sum ? "sum" : "length_normalized"},
              {"rows", policy.rows()},
              {"cols", policy.cols()},
              {"table", table.to_json()},
              {"logits", rows}};
}

std::pair<compo::TabularPolicy<double>, SequenceTable> policy_from_json(const json& j) {
  auto rows = j.at("rows").get<compo::Index>();
  auto cols = j.at("cols").get<compo::Index>();
  compo::Matrix<double> logits(rows, cols);
  const auto& data = j.at("logits");
  if (static_cast<compo::Index>(data.size()) != rows) throw std::invalid_argument("logits row count mismatch");
  for (compo::Index r = 0; r < rows; ++r) {
    const auto& row = data.at(static_cast<std::size_t>(r));
    if (static_cast<compo::Index>(row.size()) != cols) throw std::invalid_argument("logits column count mismatch");
    for (compo::Index c = 0; c < cols; ++c) logits(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  auto scoring = j.value("scoring", std::string("sum")) == "sum" ? compo::SequenceScoring::Sum
                                                                  : compo::SequenceScoring::LengthNormalized;
  auto table = SequenceTable::from_json(j.at("table"));
  if (table.rows() != rows || table.cols() != cols) throw std::invalid_argument("policy table shape mismatch");
  return {compo::TabularPolicy<double>(std::move(logits), scoring), std::move(table)};
}

double preference_accuracy(const compo::TabularPolicy<double>& policy, const compo::TabularPolicy<double>& ref,
                           std::span<const compo::PreferenceExample> examples, double beta) {
  if (examples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : examples) {
    if (compo::preference_margin(policy, ref, ex, beta) > 0.0) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

}  // namespace claw
