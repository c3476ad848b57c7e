#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "claw/backend.hpp"
#include "claw/compo.hpp"
#include "claw/metrics.hpp"
#include "claw/preference.hpp"

namespace claw::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitPartial = 2;

// Raised for bad configuration or usage; the message names the offending field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BackendSpec {
  std::optional<std::string> script;  // scripted backend JSONL
  std::optional<std::string> endpoint;
  std::string model;
  std::string api_key_env = "CLAW_API_KEY";
};

// Config file schema (JSON, every key optional):
//   {"backend": {"script": path} | {"endpoint": url, "model": name, "api_key_env": name},
//    "dataset": path, "out": path, "workers": n, "min_disagreement": n, "seed": n,
//    "generation": {"max_tokens", "temperature", "n_best"},
//    "compo": {"beta", "learning_rate", "batch_size", "steps", "seed"}}
// Command-line flags override file values.
struct RunConfig {
  BackendSpec backend;
  std::string dataset;
  std::string out;
  GenerationParams generation;
  int min_disagreement = 1;
  int workers = 0;  // 0 selects default_worker_count()
  compo::ComPOConfig compo;
  std::uint64_t seed = 0;
  bool force = false;

  // Throws ConfigError naming the field.
  void validate_backend() const;
};

RunConfig load_config(const std::string& path);

struct TrainSummary {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double final_mean_margin = 0.0;
  double preference_accuracy = 0.0;
  int pairs = 0;
};

struct DemoSummary {
  DatasetCounts counts;
  DatasetCounts expected;
  TrainSummary train;
  metrics::MetricReport eval;
  int failed_cases = 0;

  [[nodiscard]] std::string text() const;
};

// Each returns an exit code and writes human-readable output to `out`,
// diagnostics to `err`.
int cmd_run(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_build_prefs(const std::string& manifest, const std::string& dataset, const std::string& out_path,
                    int min_disagreement, bool force, std::ostream& out, std::ostream& err);
int cmd_train(const std::string& prefs, const compo::ComPOConfig& config, const std::string& out_dir, bool force,
              std::ostream& out, std::ostream& err, TrainSummary* summary = nullptr);
int cmd_eval(const std::string& predictions, const std::string& references, const std::optional<std::string>& out_path,
             metrics::BleuMode bleu_mode, bool force, std::ostream& out, std::ostream& err,
             metrics::MetricReport* report = nullptr);
int cmd_demo(std::uint64_t seed, const std::optional<std::string>& out_dir, int workers, bool force,
             std::ostream& out, std::ostream& err, DemoSummary* summary = nullptr);

// Parses argv and dispatches to a subcommand.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Predictions: {case_id, candidate | report, pred_labels | labels}; labels are
// extracted from the text when absent. References: {case_id, references |
// reference, gt_labels | labels}. One combined file may serve as both.
// Records come back ordered by case_id. Throws ConfigError on misalignment.
std::vector<metrics::EvalRecord> load_eval_records(const std::string& predictions, const std::string& references);

}  // namespace claw::cli
