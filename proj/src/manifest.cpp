#include "claw/manifest.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include "claw/text.hpp"

namespace claw {

namespace {

json case_transcript(const CaseOutcome& c) {
  json j{{"case_id", c.case_id}, {"status", c.ok() ? "ok" : "failed"}};
  if (c.run) {
    j["coop"] = c.run->coop;
    j["comp"] = c.run->comp;
    j["conflict"] = c.run->conflict ? json(*c.run->conflict) : json(nullptr);
  }
  if (c.failure) {
    const auto& f = *c.failure;
    j["error"] = json{{"failed_flow", std::string(to_string(f.failed_flow))},
                      {"stage", f.stage ? json(std::string(to_string(*f.stage))) : json(nullptr)},
                      {"cause", f.cause},
                      {"coop_partial", f.coop_partial},
                      {"comp_partial", f.comp_partial}};
  }
  return j;
}

}  // namespace

std::vector<ConflictSignal> RunManifest::conflicts() const {
  std::vector<ConflictSignal> out;
  for (const auto& c : cases) {
    if (c.run && c.run->conflict) out.push_back(*c.run->conflict);
  }
  return out;
}

int RunManifest::failure_count() const {
  return static_cast<int>(std::count_if(cases.begin(), cases.end(), [](const CaseOutcome& c) { return !c.ok(); }));
}

const CaseOutcome* RunManifest::find(const std::string& case_id) const {
  for (const auto& c : cases) {
    if (c.case_id == case_id) return &c;
  }
  return nullptr;
}

json RunManifest::transcripts_json() const {
  json list = json::array();
  for (const auto& c : cases) list.push_back(case_transcript(c));
  return list;
}

json RunManifest::to_json() const {
  json list = json::array();
  json timings = json::object();
  for (const auto& c : cases) {
    list.push_back(case_transcript(c));
    timings[c.case_id] = c.elapsed_ms;
  }
  return json{{"run_id", run_id},
              {"config_hash", config_hash},
              {"cases", list},
              {"conflicts", conflicts()},
              {"failed_cases", failure_count()},
              {"timings_ms", timings}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.run_id = j.at("run_id").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  const auto timings = j.value("timings_ms", json::object());
  for (const auto& c : j.at("cases")) {
    CaseOutcome out;
    out.case_id = c.at("case_id").get<std::string>();
    if (timings.contains(out.case_id)) out.elapsed_ms = timings[out.case_id].get<double>();
    if (c.at("status").get<std::string>() == "ok") {
      auto coop = trajectory_from_json(c.at("coop"));
      auto comp = trajectory_from_json(c.at("comp"));
      std::optional<ConflictSignal> conflict;
      if (!c.at("conflict").is_null()) conflict = c["conflict"].get<ConflictSignal>();
      out.run = CaseRun{std::move(coop), std::move(comp), std::move(conflict)};
    } else {
      const auto& e = c.at("error");
      CaseFailureRecord f;
      f.failed_flow = parse_source(e.at("failed_flow").get<std::string>()).value_or(Source::Cooperative);
      if (!e.at("stage").is_null()) f.stage = parse_stage(e["stage"].get<std::string>());
      f.cause = e.at("cause").get<std::string>();
      f.coop_partial = e.at("coop_partial").get<std::vector<AgentMessage>>();
      f.comp_partial = e.at("comp_partial").get<std::vector<AgentMessage>>();
      out.failure = std::move(f);
    }
    m.cases.push_back(std::move(out));
  }
  return m;
}

void RunManifest::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << to_json().dump(2) << '\n';
}

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  try {
    return from_json(json::parse(in));
  } catch (const std::exception& e) {
    throw std::runtime_error("malformed manifest " + path + ": " + e.what());
  }
}

int default_worker_count() {
  unsigned n = std::thread::hardware_concurrency();
  return static_cast<int>(std::clamp(n == 0 ? 1U : n, 1U, 8U));
}

RunManifest run_dataset(const Orchestrator& orchestrator, const std::vector<CaseRecord>& cases, int workers,
                        const std::string& config_hash) {
  std::vector<CaseOutcome> outcomes(cases.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < cases.size(); i = next++) {
      const auto& c = cases[i];
      auto& out = outcomes[i];
      out.case_id = c.case_id;
      auto t0 = std::chrono::steady_clock::now();
      try {
        out.run = orchestrator.run_case(c);
      } catch (const CaseFailure& e) {
        out.failure = CaseFailureRecord{e.failed_flow, e.stage, e.cause, e.coop_partial, e.comp_partial};
      }
      out.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
  };
  const int n_threads = std::clamp(workers, 1, std::max(1, static_cast<int>(cases.size())));
  if (n_threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(work);
  }
  std::sort(outcomes.begin(), outcomes.end(),
            [](const CaseOutcome& a, const CaseOutcome& b) { return a.case_id < b.case_id; });

  RunManifest m;
  m.config_hash = config_hash;
  std::string ids = config_hash;
  for (const auto& o : outcomes) ids += "\n" + o.case_id;
  m.run_id = "run-" + hex64(fnv1a64(ids));
  m.cases = std::move(outcomes);
  return m;
}

}  // namespace claw
