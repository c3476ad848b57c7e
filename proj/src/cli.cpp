#include "claw/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <ostream>
#include <set>
#include <sstream>

#include "claw/manifest.hpp"
#include "claw/orchestrator.hpp"
#include "claw/sequence_policy.hpp"
#include "claw/synthetic.hpp"
#include "claw/text.hpp"

namespace claw::cli {

namespace fs = std::filesystem;

namespace {

void require_readable(const std::string& path, const std::string& field) {
  if (path.empty()) throw ConfigError(field + ": path is required");
  std::ifstream in(path);
  if (!in) throw ConfigError(field + ": cannot read '" + path + "'");
}

void require_fresh(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) {
    throw ConfigError("refusing to overwrite '" + path.string() + "' (pass --force)");
  }
}

void write_file(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << contents;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<json> read_jsonl(const std::string& path, const std::string& field) {
  require_readable(path, field);
  std::ifstream in(path);
  std::vector<json> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ConfigError(field + ": " + path + ":" + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
  }
  return out;
}

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string counts_line(const DatasetCounts& c) {
  std::ostringstream s;
  s << "cases=" << c.cases << " failed=" << c.failed_cases << " conflicts=" << c.conflicts
    << " ties_discarded=" << c.ties_discarded << " pairs=" << c.pairs << " coop_wins=" << c.coop_wins
    << " comp_wins=" << c.comp_wins;
  return s.str();
}

std::string run_config_hash(const RunConfig& c) {
  json j{{"backend", c.backend.script ? json{{"script", fs::path(*c.backend.script).filename().string()}}
                                      : json{{"endpoint", c.backend.endpoint.value_or("")}, {"model", c.backend.model}}},
         {"generation", {{"max_tokens", c.generation.max_tokens},
                         {"temperature", c.generation.temperature},
                         {"n_best", c.generation.n_best}}},
         {"min_disagreement", c.min_disagreement},
         {"prompts", hex64(PromptLibrary::builtin().fingerprint())}};
  return hex64(fnv1a64(j.dump()));
}

template <typename Fn>
int guarded(std::ostream& err, const std::string& command, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << command << ": " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << command << ": " << e.what() << "\n";
    return kExitConfig;
  }
}

std::optional<LabelSet> labels_field(const json& j, const char* key) {
  for (const char* k : {key, "labels"}) {
    if (j.contains(k)) return j.at(k).get<LabelSet>();
  }
  return std::nullopt;
}

LabelSet labels_from_text(const std::string& text) {
  try {
    return extract_labels(parse_report(text, Stage::Report));
  } catch (const PipelineError&) {
    return Labeler::builtin().extract(text);
  }
}

}  // namespace

void RunConfig::validate_backend() const {
  if (backend.script.has_value() == backend.endpoint.has_value()) {
    throw ConfigError("backend: exactly one of backend.script or backend.endpoint must be set");
  }
  if (backend.endpoint && backend.model.empty()) throw ConfigError("backend.model: required with backend.endpoint");
}

RunConfig load_config(const std::string& path) {
  require_readable(path, "config");
  std::ifstream in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path + ": invalid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  if (j.contains("api_key")) {
    throw ConfigError("api_key: api keys do not belong in config files; name an environment variable in backend.api_key_env");
  }
  RunConfig c;
  auto field = [&](const char* name, auto fn) {
    if (!j.contains(name)) return;
    try {
      fn(j.at(name));
    } catch (const json::exception& e) {
      throw ConfigError(std::string(name) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string(name) + ": " + e.what());
    }
  };
  field("backend", [&](const json& b) {
    if (b.contains("api_key")) {
      throw std::invalid_argument("api keys do not belong in config files; name an environment variable in api_key_env");
    }
    if (b.contains("script")) c.backend.script = b.at("script").get<std::string>();
    if (b.contains("endpoint")) c.backend.endpoint = b.at("endpoint").get<std::string>();
    c.backend.model = b.value("model", c.backend.model);
    c.backend.api_key_env = b.value("api_key_env", c.backend.api_key_env);
  });
  field("dataset", [&](const json& v) { c.dataset = v.get<std::string>(); });
  field("out", [&](const json& v) { c.out = v.get<std::string>(); });
  field("workers", [&](const json& v) { c.workers = v.get<int>(); });
  field("min_disagreement", [&](const json& v) { c.min_disagreement = v.get<int>(); });
  field("seed", [&](const json& v) {
    c.seed = v.get<std::uint64_t>();
    c.compo.seed = c.seed;
  });
  field("generation", [&](const json& g) {
    c.generation.max_tokens = g.value("max_tokens", c.generation.max_tokens);
    c.generation.temperature = g.value("temperature", c.generation.temperature);
    c.generation.n_best = g.value("n_best", c.generation.n_best);
    c.generation.validate();
  });
  field("compo", [&](const json& v) { c.compo = compo_config_from_json(v, c.compo); });
  return c;
}

int cmd_run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, "run", [&] {
    config.validate_backend();
    require_readable(config.dataset, "dataset");
    if (config.backend.script) require_readable(*config.backend.script, "backend.script");
    if (config.out.empty()) throw ConfigError("out: output directory is required");
    if (config.min_disagreement < 1) throw ConfigError("min_disagreement: must be >= 1");
    if (config.workers < 0) throw ConfigError("workers: must be >= 0");
    try {
      config.generation.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("generation: ") + e.what());
    }
    const fs::path manifest_path = fs::path(config.out) / "manifest.json";
    require_fresh(manifest_path, config.force);

    std::vector<CaseRecord> cases;
    try {
      cases = load_cases(config.dataset);
    } catch (const std::exception& e) {
      throw ConfigError("dataset: " + config.dataset + ": " + e.what());
    }

    std::unique_ptr<Backend> backend;
    if (config.backend.script) {
      try {
        backend = std::make_unique<ScriptedBackend>(ScriptedBackend::from_file(*config.backend.script));
      } catch (const std::exception& e) {
        throw ConfigError(std::string("backend.script: ") + e.what());
      }
    } else {
      try {
        backend = http_backend(*config.backend.endpoint, config.backend.api_key_env, config.backend.model);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("backend.endpoint: ") + e.what());
      }
    }

    OrchestratorOptions opts;
    opts.generation = config.generation;
    opts.min_disagreement = config.min_disagreement;
    Orchestrator orchestrator(*backend, opts);
    const int workers = config.workers > 0 ? config.workers : default_worker_count();
    auto manifest = run_dataset(orchestrator, cases, workers, run_config_hash(config));
    fs::create_directories(config.out);
    manifest.save(manifest_path.string());

    for (const auto& c : manifest.cases) {
      if (!c.failure) continue;
      const auto& f = *c.failure;
      err << "case " << c.case_id << " failed: " << to_string(f.failed_flow) << " flow"
          << (f.stage ? " at " + std::string(to_string(*f.stage)) : std::string()) << ": " << f.cause << "\n";
    }
    out << "manifest: " << manifest_path.string() << "\n";
    out << "run_id=" << manifest.run_id << " cases=" << manifest.cases.size()
        << " failed=" << manifest.failure_count() << " conflicts=" << manifest.conflicts().size() << "\n";
    return manifest.failure_count() > 0 ? kExitPartial : kExitOk;
  });
}

int cmd_build_prefs(const std::string& manifest_path, const std::string& dataset, const std::string& out_path,
                    int min_disagreement, bool force, std::ostream& out, std::ostream& err) {
  return guarded(err, "build-prefs", [&] {
    require_readable(manifest_path, "manifest");
    require_readable(dataset, "dataset");
    if (out_path.empty()) throw ConfigError("out: output path is required");
    if (min_disagreement < 1) throw ConfigError("min_disagreement: must be >= 1");
    require_fresh(out_path, force);
    RunManifest manifest;
    try {
      manifest = RunManifest::load(manifest_path);
    } catch (const std::exception& e) {
      throw ConfigError("manifest: " + manifest_path + ": " + e.what());
    }
    std::vector<CaseRecord> cases;
    try {
      cases = load_cases(dataset);
    } catch (const std::exception& e) {
      throw ConfigError("dataset: " + dataset + ": " + e.what());
    }
    auto prefs = build_dataset(cases, manifest, min_disagreement);
    if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
    persist(prefs, out_path);
    out << "preferences: " << out_path << "\n" << counts_line(prefs.counts) << "\n";
    return kExitOk;
  });
}

int cmd_train(const std::string& prefs_path, const compo::ComPOConfig& config, const std::string& out_dir, bool force,
              std::ostream& out, std::ostream& err, TrainSummary* summary) {
  return guarded(err, "train", [&] {
    require_readable(prefs_path, "prefs");
    if (out_dir.empty()) throw ConfigError("out: output directory is required");
    try {
      config.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("compo: ") + e.what());
    }
    const fs::path policy_path = fs::path(out_dir) / "policy.json";
    const fs::path loss_path = fs::path(out_dir) / "loss.csv";
    require_fresh(policy_path, force);
    require_fresh(loss_path, force);
    PreferenceDataset prefs;
    try {
      prefs = load_preferences(prefs_path);
    } catch (const std::exception& e) {
      throw ConfigError("prefs: " + prefs_path + ": " + e.what());
    }
    if (prefs.pairs.empty()) throw ConfigError("prefs: " + prefs_path + " holds no preference pairs");

    auto encoded = encode_preferences(prefs);
    compo::TabularPolicy<double> initial(encoded.table.rows(), encoded.table.cols());
    std::span<const compo::PreferenceExample> examples(encoded.examples);
    auto result = compo::train(initial, examples, config);

    std::string csv = "step,loss,mean_margin\n";
    for (const auto& r : result.trace) {
      csv += std::to_string(r.step) + "," + fmt(r.loss, "%.17g") + "," + fmt(r.mean_margin, "%.17g") + "\n";
    }
    write_file(loss_path, csv);
    write_file(policy_path, policy_to_json(result.policy, encoded.table, config).dump(1) + "\n");

    TrainSummary s;
    s.pairs = static_cast<int>(prefs.pairs.size());
    s.initial_loss = result.trace.front().loss;
    s.final_loss = result.trace.back().loss;
    s.final_mean_margin = result.trace.back().mean_margin;
    s.preference_accuracy = preference_accuracy(result.policy, result.reference, examples, config.beta);
    out << "policy: " << policy_path.string() << "\nloss: " << loss_path.string() << "\n";
    out << "pairs=" << s.pairs << " steps=" << config.steps << " initial_loss=" << fmt(s.initial_loss)
        << " final_loss=" << fmt(s.final_loss) << " final_mean_margin=" << fmt(s.final_mean_margin)
        << " preference_accuracy=" << fmt(s.preference_accuracy, "%.4f") << "\n";
    if (summary) *summary = s;
    return kExitOk;
  });
}

std::vector<metrics::EvalRecord> load_eval_records(const std::string& predictions, const std::string& references) {
  std::map<std::string, json> preds;
  std::map<std::string, json> refs;
  auto index = [](const std::vector<json>& rows, std::map<std::string, json>& into, const std::string& field) {
    for (const auto& j : rows) {
      if (!j.is_object() || !j.contains("case_id") || !j["case_id"].is_string()) {
        throw ConfigError(field + ": every line needs a string case_id");
      }
      auto id = j["case_id"].get<std::string>();
      if (!into.emplace(id, j).second) throw ConfigError(field + ": duplicate case_id " + id);
    }
  };
  index(read_jsonl(predictions, "predictions"), preds, "predictions");
  index(read_jsonl(references, "references"), refs, "references");

  std::vector<std::string> orphans;
  for (const auto& [id, _] : preds) {
    if (!refs.count(id)) orphans.push_back("predictions-only:" + id);
  }
  for (const auto& [id, _] : refs) {
    if (!preds.count(id)) orphans.push_back("references-only:" + id);
  }
  if (!orphans.empty()) {
    std::string list;
    for (const auto& o : orphans) list += (list.empty() ? "" : ", ") + o;
    throw ConfigError("alignment: case ids differ between predictions and references: " + list);
  }
  if (preds.empty()) throw ConfigError("predictions: no records");

  std::vector<metrics::EvalRecord> out;
  for (const auto& [id, p] : preds) {
    const auto& r = refs.at(id);
    metrics::EvalRecord rec;
    rec.case_id = id;
    try {
      rec.candidate = p.contains("candidate") ? p.at("candidate").get<std::string>() : p.at("report").get<std::string>();
      if (r.contains("references")) {
        rec.references = r.at("references").get<std::vector<std::string>>();
      } else {
        rec.references.push_back(r.at("reference").get<std::string>());
      }
      rec.pred_labels = labels_field(p, "pred_labels").value_or(labels_from_text(rec.candidate));
      auto gt = labels_field(r, "gt_labels");
      if (!gt) throw ConfigError("references: case " + id + " has no labels");
      rec.gt_labels = *gt;
    } catch (const json::exception& e) {
      throw ConfigError("case " + id + ": " + e.what());
    }
    if (rec.references.empty()) throw ConfigError("references: case " + id + " has no reference text");
    out.push_back(std::move(rec));
  }
  return out;
}

int cmd_eval(const std::string& predictions, const std::string& references, const std::optional<std::string>& out_path,
             metrics::BleuMode bleu_mode, bool force, std::ostream& out, std::ostream& err,
             metrics::MetricReport* report_out) {
  return guarded(err, "eval", [&] {
    if (out_path) require_fresh(*out_path, force);
    auto records = load_eval_records(predictions, references);
    metrics::EvalOptions opts;
    opts.bleu_mode = bleu_mode;
    auto report = metrics::evaluate(records, opts);
    auto j = metrics::to_json(report).dump(2);
    if (out_path) {
      write_file(*out_path, j + "\n");
      out << "report: " << *out_path << "\n";
    } else {
      out << j << "\n";
    }
    out << metrics::format_table(report);
    if (report_out) *report_out = report;
    return kExitOk;
  });
}

std::string DemoSummary::text() const {
  std::ostringstream s;
  s << "demo summary\n";
  s << "  counts:   " << counts_line(counts) << "\n";
  s << "  expected: " << counts_line(expected) << "\n";
  s << "  train: pairs=" << train.pairs << " initial_loss=" << fmt(train.initial_loss)
    << " final_loss=" << fmt(train.final_loss) << " final_mean_margin=" << fmt(train.final_mean_margin)
    << " preference_accuracy=" << fmt(train.preference_accuracy, "%.4f") << "\n";
  s << "  eval (x100): bleu4=" << fmt(100 * eval.bleu4, "%.1f") << " rouge_l=" << fmt(100 * eval.rouge_l, "%.1f")
    << " meteor=" << fmt(100 * eval.meteor, "%.1f") << " cider=" << fmt(100 * eval.cider, "%.1f")
    << " avg_acc=" << fmt(100 * eval.avg_acc, "%.1f") << "\n";
  return s.str();
}

int cmd_demo(std::uint64_t seed, const std::optional<std::string>& out_dir, int workers, bool force,
             std::ostream& out, std::ostream& err, DemoSummary* summary_out) {
  fs::path dir;
  bool temporary = false;
  if (out_dir) {
    dir = *out_dir;
    if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
      err << "demo: refusing to overwrite '" << dir.string() << "' (pass --force)\n";
      return kExitConfig;
    }
  } else {
    dir = fs::temp_directory_path() / ("claw-demo-" + std::to_string(seed) + "-" + std::to_string(std::random_device{}()));
    temporary = true;
  }
  struct Cleanup {
    fs::path dir;
    bool active;
    ~Cleanup() {
      std::error_code ec;
      if (active) fs::remove_all(dir, ec);
    }
  } cleanup{dir, temporary};

  std::ostringstream sink;
  auto fail = [&](const std::string& stage, const std::string& why) {
    err << "demo: stage " << stage << " failed" << (why.empty() ? "" : ": " + why) << "\n";
    return kExitConfig;
  };
  DemoSummary summary;
  try {
    fs::create_directories(dir);
    auto corpus = make_synthetic_corpus(seed);
    summary.expected = corpus.expected;
    const auto cases_path = (dir / "cases.jsonl").string();
    const auto script_path = (dir / "script.jsonl").string();
    save_cases(corpus.records(), cases_path);
    write_file(script_path, corpus.script_jsonl);

    RunConfig rc;
    rc.backend.script = script_path;
    rc.dataset = cases_path;
    rc.out = (dir / "run").string();
    rc.workers = workers;
    rc.seed = seed;
    rc.force = true;
    if (int code = cmd_run(rc, sink, err); code != kExitOk) return fail("run", "exit code " + std::to_string(code));

    const auto prefs_path = (dir / "prefs.jsonl").string();
    if (int code = cmd_build_prefs((dir / "run" / "manifest.json").string(), cases_path, prefs_path, 1, true, sink, err);
        code != kExitOk) {
      return fail("build-prefs", "exit code " + std::to_string(code));
    }
    auto prefs = load_preferences(prefs_path);
    summary.counts = prefs.counts;
    summary.failed_cases = prefs.counts.failed_cases;
    if (!(prefs.counts == corpus.expected)) {
      return fail("build-prefs", "counts differ from the corpus plan: " + counts_line(prefs.counts) + " vs " +
                                     counts_line(corpus.expected));
    }

    compo::ComPOConfig cc;
    cc.seed = seed;
    if (int code = cmd_train(prefs_path, cc, (dir / "train").string(), true, sink, err, &summary.train);
        code != kExitOk) {
      return fail("train", "exit code " + std::to_string(code));
    }

    auto manifest = RunManifest::load((dir / "run" / "manifest.json").string());
    std::string predictions;
    std::string references;
    for (const auto& sc : corpus.cases) {
      const auto* outcome = manifest.find(sc.record.case_id);
      if (!outcome || !outcome->run) return fail("eval", "no cooperative report for " + sc.record.case_id);
      const auto& coop = outcome->run->coop;
      predictions += json{{"case_id", sc.record.case_id}, {"report", coop.report().text()},
                          {"labels", coop.extracted_labels()}}
                         .dump() +
                     "\n";
      references += json{{"case_id", sc.record.case_id},
                         {"references", {sc.record.reference_report.value_or("")}},
                         {"labels", sc.record.ground_truth}}
                        .dump() +
                    "\n";
    }
    write_file(dir / "predictions.jsonl", predictions);
    write_file(dir / "references.jsonl", references);
    if (int code = cmd_eval((dir / "predictions.jsonl").string(), (dir / "references.jsonl").string(),
                            (dir / "metrics.json").string(), metrics::BleuMode::Corpus, true, sink, err,
                            &summary.eval);
        code != kExitOk) {
      return fail("eval", "exit code " + std::to_string(code));
    }
  } catch (const std::exception& e) {
    return fail("setup", e.what());
  }

  out << summary.text();
  if (summary_out) *summary_out = summary;
  if (summary.train.preference_accuracy < 0.95) return fail("train", "preference accuracy below 0.95");
  if (!(summary.train.final_mean_margin > 0.0)) return fail("train", "final mean margin is not positive");
  return kExitOk;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("claw");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cooperative/competitive report agents, preference mining and ComPO training"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  bool force = false;
  std::optional<int> workers;

  // run
  auto* run = app.add_subcommand("run", "Run both flows over a case dataset and write a manifest");
  std::optional<std::string> script, endpoint, model, api_key_env, dataset, out_dir;
  std::optional<int> max_tokens, n_best, min_dis;
  std::optional<double> temperature;
  run->add_option("--config", config_path, "JSON config file");
  run->add_option("--script", script, "Scripted backend JSONL");
  run->add_option("--endpoint", endpoint, "OpenAI-compatible base URL");
  run->add_option("--model", model, "Model name for --endpoint");
  run->add_option("--api-key-env", api_key_env, "Environment variable holding the API key");
  run->add_option("--dataset", dataset, "Case dataset JSONL");
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--workers", workers, "Parallel cases (default: cores, capped at 8)");
  run->add_option("--max-tokens", max_tokens);
  run->add_option("--temperature", temperature);
  run->add_option("--n-best", n_best);
  run->add_option("--min-disagreement", min_dis, "Labels that must differ to flag a conflict");
  run->add_flag("--force", force, "Overwrite existing outputs");

  // build-prefs
  auto* prefs = app.add_subcommand("build-prefs", "Mine adjudicated preference pairs from a run manifest");
  std::string manifest_path, prefs_out;
  std::string prefs_dataset;
  prefs->add_option("--manifest", manifest_path)->required();
  prefs->add_option("--dataset", prefs_dataset)->required();
  prefs->add_option("--out", prefs_out)->required();
  prefs->add_option("--min-disagreement", min_dis);
  prefs->add_option("--config", config_path);
  prefs->add_flag("--force", force);

  // train
  auto* train = app.add_subcommand("train", "Train the tabular policy on preference pairs");
  std::string prefs_in;
  std::optional<double> beta, lr;
  std::optional<int> batch, steps;
  std::optional<std::uint64_t> seed;
  train->add_option("--prefs", prefs_in)->required();
  train->add_option("--out", out_dir, "Output directory for policy.json and loss.csv");
  train->add_option("--config", config_path);
  train->add_option("--beta", beta);
  train->add_option("--lr", lr);
  train->add_option("--batch-size", batch);
  train->add_option("--steps", steps);
  train->add_option("--seed", seed);
  train->add_flag("--force", force);

  // eval
  auto* eval = app.add_subcommand("eval", "Score predicted reports against references");
  std::string predictions, references;
  std::optional<std::string> eval_out;
  std::string bleu_mode = "corpus";
  eval->add_option("--predictions", predictions)->required();
  eval->add_option("--references", references)->required();
  eval->add_option("--out", eval_out, "Write the report JSON here instead of stdout");
  eval->add_option("--bleu", bleu_mode, "corpus | sentence")->check(CLI::IsMember({"corpus", "sentence"}));
  eval->add_flag("--force", force);

  // demo
  auto* demo = app.add_subcommand("demo", "Synthetic end-to-end run: run, build-prefs, train, eval");
  demo->add_option("--seed", seed);
  demo->add_option("--out", out_dir, "Keep artifacts in this directory");
  demo->add_option("--workers", workers);
  demo->add_flag("--force", force);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig cfg;
    if (config_path) cfg = load_config(*config_path);
    if (workers) cfg.workers = *workers;
    if (min_dis) cfg.min_disagreement = *min_dis;
    cfg.force = force;

    if (*run) {
      if (script) {
        cfg.backend.script = *script;
        cfg.backend.endpoint.reset();
      }
      if (endpoint) {
        cfg.backend.endpoint = *endpoint;
        if (!script) cfg.backend.script.reset();
      }
      if (model) cfg.backend.model = *model;
      if (api_key_env) cfg.backend.api_key_env = *api_key_env;
      if (dataset) cfg.dataset = *dataset;
      if (out_dir) cfg.out = *out_dir;
      if (max_tokens) cfg.generation.max_tokens = *max_tokens;
      if (temperature) cfg.generation.temperature = *temperature;
      if (n_best) cfg.generation.n_best = *n_best;
      return cmd_run(cfg, out, err);
    }
    if (*prefs) {
      return cmd_build_prefs(manifest_path, prefs_dataset, prefs_out, cfg.min_disagreement, force, out, err);
    }
    if (*train) {
      if (beta) cfg.compo.beta = *beta;
      if (lr) cfg.compo.learning_rate = *lr;
      if (batch) cfg.compo.batch_size = *batch;
      if (steps) cfg.compo.steps = *steps;
      if (seed) cfg.compo.seed = *seed;
      std::string dir = out_dir.value_or(cfg.out);
      return cmd_train(prefs_in, cfg.compo, dir, force, out, err);
    }
    if (*eval) {
      return cmd_eval(predictions, references, eval_out,
                      bleu_mode == "sentence" ? metrics::BleuMode::SentenceMean : metrics::BleuMode::Corpus, force,
                      out, err);
    }
    if (*demo) {
      return cmd_demo(seed.value_or(cfg.seed), out_dir, cfg.workers, force, out, err);
    }
  } catch (const ConfigError& e) {
    err << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace claw::cli
