// Copyright 2026 The servefuzz Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// servefuzz: run campaigns, replay, confirm and minimize traces, serve the
// simulator, and summarize campaign directories.
//
// Exit codes: 0 success, 1 findings produced (run, confirm), 2 usage or
// configuration error, 3 endpoint failure or unreproducible input.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "servefuzz/campaign/campaign.h"
#include "servefuzz/confirm/confirm.h"
#include "servefuzz/exec/report.h"
#include "servefuzz/exec/target.h"
#include "servefuzz/oracle/oracle.h"
#include "servefuzz/sim/config.h"
#include "servefuzz/sim/server.h"
#include "servefuzz/trace/trace_io.h"
#include "servefuzz/trace/validate.h"
#include "servefuzz/util/hash.h"

namespace {

using namespace servefuzz;
using nlohmann::json;

constexpr int kOk = 0;
constexpr int kFindings = 1;
constexpr int kUsage = 2;
constexpr int kEndpoint = 3;

// Raised for bad flags, configs or input files.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EndpointFlags {
  bool sim = false;
  std::string endpoint;
  std::vector<std::string> faults;
  bool near_tie = false;
  std::vector<std::string> engine_flags;

  void Register(CLI::App* app) {
    app->add_flag("--sim", sim, "Use the in-process simulator");
    app->add_option("--endpoint", endpoint,
                    "Engine base URL (default: $SERVEFUZZ_ENDPOINT)");
    app->add_option("--fault", faults, "Arm a simulator fault (F1, F2, F3)");
    app->add_flag("--near-tie", near_tie, "Simulator near-tie decode mode");
    app->add_option("--flag", engine_flags, "Engine flag key=value");
  }

  std::map<std::string, std::string> Flags() const {
    std::map<std::string, std::string> flags;
    for (const std::string& kv : engine_flags) {
      size_t eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--flag expects key=value: " + kv);
      flags[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    std::string list;
    for (const std::string& f : faults) list += (list.empty() ? "" : ",") + f;
    if (!list.empty()) flags["faults"] = list;
    if (near_tie) flags["near_tie_mode"] = "true";
    return flags;
  }

  // Validates simulator flags eagerly so bad values are usage errors.
  exec::EngineEndpoint Resolve(const exec::EngineEndpoint* from_config = nullptr) const {
    exec::EngineEndpoint e = from_config ? *from_config : exec::EngineEndpoint{};
    std::map<std::string, std::string> flags = Flags();
    for (const auto& [k, v] : flags) e.config_flags[k] = v;
    if (sim) {
      e.base_url = "sim://virtual";
      e.engine_kind = exec::EngineKind::kSimulator;
    } else if (!endpoint.empty()) {
      e.base_url = endpoint;
    } else if (from_config == nullptr) {
      const char* env = std::getenv("SERVEFUZZ_ENDPOINT");
      if (env == nullptr || *env == '\0') {
        throw UsageError("no endpoint: pass --sim, --endpoint or set SERVEFUZZ_ENDPOINT");
      }
      e.base_url = env;
    }
    if (e.base_url.rfind("sim://", 0) == 0) {
      try {
        exec::SimConfigFromFlags(e.config_flags);
      } catch (const std::exception& ex) {
        throw UsageError(std::string("bad simulator flags: ") + ex.what());
      }
    }
    return e;
  }
};

trace::TimedTrace LoadValidTrace(const std::string& path) {
  trace::TimedTrace t;
  try {
    t = trace::LoadTrace(path);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  trace::ValidationReport v = trace::Validate(t);
  if (!v.ok()) {
    throw UsageError("invalid trace: event " + std::to_string(v.violations[0].event_index) +
                     ": " + v.violations[0].message);
  }
  return t;
}

json ReadJsonFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(path + ": " + e.what());
  }
}

void WriteText(const std::filesystem::path& path, const std::string& body) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path.string());
  out << body;
}

// ---- run ----

struct RunArgs {
  std::string config;
  EndpointFlags endpoint;
  int64_t budget = -1;
  double time_budget = -1;
  int64_t seed = -1;
  std::string profile;
  std::string out = "servefuzz-out";
  bool minimize = false;
  bool stop_on_first = false;
};

int CmdRun(const RunArgs& a) {
  campaign::CampaignConfig c;
  if (!a.config.empty()) {
    try {
      c = campaign::CampaignConfigFromJson(ReadJsonFile(a.config));
    } catch (const std::invalid_argument& e) {
      throw UsageError(a.config + ": " + e.what());
    } catch (const json::exception& e) {
      throw UsageError(a.config + ": " + e.what());
    }
  }
  const bool config_has_endpoint = !a.config.empty();
  c.endpoint = a.endpoint.Resolve(config_has_endpoint ? &c.endpoint : nullptr);
  for (const auto& [k, v] : c.engine_flags) c.endpoint.config_flags.try_emplace(k, v);
  if (a.budget >= 0) c.max_iterations = a.budget;
  if (a.time_budget >= 0) c.time_budget_s = a.time_budget;
  if (a.seed >= 0) c.rng_seed = static_cast<uint64_t>(a.seed);
  if (!a.profile.empty()) {
    try {
      c.profile = campaign::NamedProfile(a.profile);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    c.profile_name = a.profile;
  }
  if (a.minimize) c.minimize_crashes = true;
  if (a.stop_on_first) c.stop_on_first_finding = true;
  if (!a.out.empty()) c.output_dir = a.out;
  if (std::string bad = c.Validate(); !bad.empty()) throw UsageError(bad);

  exec::ExecOptions opts;
  opts.kv_grace_ms = c.thresholds.kv_grace_ms;
  std::unique_ptr<exec::Target> target = exec::MakeTarget(c.endpoint, opts);
  std::unique_ptr<exec::Target> lane = exec::MakeTarget(c.endpoint, opts);
  campaign::Campaign run(c, *target, *lane);
  campaign::CampaignSummary s = run.Run();

  std::cout << "iterations " << s.iterations << ", corpus " << s.corpus_size << ", findings "
            << s.findings.size() << ", elapsed " << s.elapsed_s << " s\n";
  for (const confirm::Finding& f : s.findings) {
    std::cout << "  " << HexDigest(f.fingerprint) << " " << oracle::SuspicionKindName(f.kind)
              << (f.subtype.empty() ? "" : "/" + f.subtype) << " reproduced "
              << f.reproduction_count << "/" << f.replay_count << " duplicates "
              << f.duplicate_count << "\n";
  }
  std::cout << "output: " << c.output_dir << "\n";
  if (s.aborted) {
    std::cerr << "endpoint failure: " << s.abort_reason << "\n";
    return kEndpoint;
  }
  return s.findings.empty() ? kOk : kFindings;
}

// ---- replay ----

struct ReplayArgs {
  std::string trace;
  EndpointFlags endpoint;
  int k = 3;
  std::string original;
  std::string out;
};

int CmdReplay(const ReplayArgs& a) {
  if (a.k < 1) throw UsageError("--k must be at least 1");
  trace::TimedTrace t = LoadValidTrace(a.trace);
  std::optional<exec::ExecutionReport> original;
  if (!a.original.empty()) {
    try {
      original = exec::ReportFromJson(ReadJsonFile(a.original));
    } catch (const json::exception& e) {
      throw UsageError(a.original + ": " + e.what());
    }
  }
  exec::EngineEndpoint e = a.endpoint.Resolve();
  std::unique_ptr<exec::Target> target = exec::MakeTarget(e, {});
  std::vector<exec::ExecutionReport> reports = confirm::Replay(t, *target, a.k);

  const exec::ExecutionReport& ref = original ? *original : reports.front();
  const uint64_t ref_digest = exec::OutputDigest(ref);
  int identical = 0;
  std::map<std::string, int> suspicion_counts;
  std::map<std::string, json> suspicion_evidence;
  for (size_t i = 0; i < reports.size(); ++i) {
    const exec::ExecutionReport& r = reports[i];
    const uint64_t d = exec::OutputDigest(r);
    if (d == ref_digest) ++identical;
    std::cout << "replay " << i + 1 << ": digest " << HexDigest(d)
              << (r.server_crashed ? " crashed: " + r.crash_evidence : "") << "\n";
    for (const exec::RequestOutcome& o : r.outcomes) {
      const exec::RequestOutcome* base = ref.Find(o.request_id);
      if (base == nullptr || base->completions.empty() || o.completions.empty()) continue;
      auto p = confirm::FirstDifference(base->completions[0].tokens, o.completions[0].tokens);
      if (p) std::cout << "  " << o.request_id << " first difference at " << *p << "\n";
    }
    oracle::BaselineStats none;
    for (const oracle::Suspicion& s : oracle::Evaluate(t, r, none, {}).suspicions) {
      std::string key = std::string(oracle::SuspicionKindName(s.kind)) +
                        (s.subtype.empty() ? "" : "/" + s.subtype);
      ++suspicion_counts[key];
      suspicion_evidence[key] = s.evidence;
    }
    if (!a.out.empty()) {
      WriteText(std::filesystem::path(a.out) / ("replay-" + std::to_string(i + 1) + ".json"),
                exec::ToJson(r).dump(2));
    }
  }
  std::cout << identical << "/" << reports.size() << " identical"
            << (original ? " to the original report" : "") << "\n";
  for (const auto& [key, n] : suspicion_counts) {
    std::cout << "divergence " << key << " reproduced " << n << "/" << reports.size();
    const json& ev = suspicion_evidence[key];
    if (ev.contains("first_difference")) std::cout << " position " << ev["first_difference"];
    std::cout << "\n";
  }
  return kOk;
}

// ---- confirm ----

struct ConfirmArgs {
  std::string trace;
  EndpointFlags endpoint;
  int k = 3;
  int top_n = 5;
  double epsilon = 0.1;
  std::string out;
};

int CmdConfirm(const ConfirmArgs& a) {
  if (a.k < 1 || a.top_n < 1 || a.epsilon < 0) throw UsageError("bad --k, --N or --epsilon");
  trace::TimedTrace t = LoadValidTrace(a.trace);
  exec::EngineEndpoint e = a.endpoint.Resolve();
  std::unique_ptr<exec::Target> target = exec::MakeTarget(e, {});
  std::unique_ptr<exec::Target> lane = exec::MakeTarget(e, {});
  confirm::ConfirmConfig cc;
  cc.k = a.k;
  cc.top_n = a.top_n;
  cc.epsilon = a.epsilon;

  if (target->SupportsReset()) target->Reset();
  exec::ExecutionReport r = target->Execute(t);
  oracle::BaselineStats none;
  oracle::CheckResult checks = oracle::Evaluate(t, r, none, cc.thresholds);
  std::cout << checks.suspicions.size() << " suspicions\n";
  json records = json::array();
  int findings = 0;
  for (const oracle::Suspicion& s : checks.suspicions) {
    confirm::ConfirmationOutcome out;
    for (int retries = cc.retry_budget;; --retries) {
      out = confirm::ConfirmSuspicion(s, t, r, *lane, cc, retries);
      if (out.disposition != confirm::Disposition::kRequeue) break;
    }
    if (out.disposition == confirm::Disposition::kFinding) ++findings;
    std::cout << "  " << oracle::SuspicionKindName(s.kind)
              << (s.subtype.empty() ? "" : "/" + s.subtype) << " "
              << HexDigest(s.fingerprint) << ": " << confirm::DispositionName(out.disposition)
              << (out.relational ? std::string(" (") + std::string(confirm::VerdictName(*out.relational)) + ")" : "")
              << "\n";
    json rec = {{"suspicion", oracle::ToJson(s)},
                {"disposition", confirm::DispositionName(out.disposition)},
                {"evidence", out.evidence}};
    if (out.finding) rec["finding"] = confirm::ToJson(*out.finding);
    records.push_back(std::move(rec));
  }
  if (!a.out.empty()) WriteText(a.out, records.dump(2));
  return findings > 0 ? kFindings : kOk;
}

// ---- minimize ----

struct MinimizeArgs {
  std::string trace;
  EndpointFlags endpoint;
  std::string predicate = "crash";
  int k = 3;
  std::string out;
};

int CmdMinimize(const MinimizeArgs& a) {
  if (a.k < 1) throw UsageError("--k must be at least 1");
  trace::TimedTrace t = LoadValidTrace(a.trace);
  oracle::Suspicion target_suspicion;
  if (a.predicate == "crash") {
    target_suspicion.kind = oracle::SuspicionKind::kCrash;
  } else {
    try {
      size_t used = 0;
      target_suspicion.fingerprint = std::stoull(a.predicate, &used, 16);
      if (used != a.predicate.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw UsageError("--predicate must be 'crash' or a hex finding fingerprint");
    }
    target_suspicion.kind = oracle::SuspicionKind::kCorruptedOutput;
  }
  exec::EngineEndpoint e = a.endpoint.Resolve();
  std::unique_ptr<exec::Target> target = exec::MakeTarget(e, {});
  campaign::MinimizeResult m = campaign::Minimize(
      t, campaign::ReproducePredicate(*target, target_suspicion, {}), a.k);
  const std::string out = a.out.empty() ? a.trace + ".min.json" : a.out;
  WriteText(out + ".log.json", json(m.log).dump(2));
  if (m.refused) {
    std::cerr << "input does not reproduce under majority at k=" << a.k
              << "; see " << out << ".log.json\n";
    return kEndpoint;
  }
  trace::SaveTrace(m.trace, out);
  std::cout << "events " << t.events.size() << " -> " << m.trace.events.size() << ", "
            << m.predicate_calls << " predicate runs\nwrote " << out << "\n";
  return kOk;
}

// ---- sim ----

struct SimArgs {
  EndpointFlags engine;
  std::string host = "127.0.0.1";
  int port = 8000;
  double time_scale = 1.0;
};

int CmdSim(const SimArgs& a) {
  sim::SimConfig config;
  try {
    config = exec::SimConfigFromFlags(a.engine.Flags());
  } catch (const std::exception& e) {
    throw UsageError(std::string("bad simulator flags: ") + e.what());
  }
  sim::ServerOptions opts;
  opts.host = a.host;
  opts.port = a.port;
  opts.time_scale = a.time_scale;
  sim::SimServer server(config, opts);
  int port = 0;
  try {
    port = server.Start();
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kEndpoint;
  }
  std::cout << "listening on http://" << a.host << ":" << port << std::endl;
  server.Wait();
  if (server.crashed()) {
    std::cout << "engine crashed\n";
    return kEndpoint;
  }
  return kOk;
}

// ---- report ----

struct SeriesRow {
  std::map<std::string, std::string> cells;
  double Get(const std::string& key) const { return std::stod(cells.at(key)); }
};

std::vector<SeriesRow> ReadSeries(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("missing " + path.string());
  std::string line;
  std::vector<std::string> header;
  std::vector<SeriesRow> rows;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  if (!std::getline(in, line)) throw UsageError("empty " + path.string());
  header = split(line);
  while (std::getline(in, line)) {
    std::vector<std::string> cells = split(line);
    if (cells.size() != header.size()) throw UsageError("malformed row in " + path.string());
    SeriesRow row;
    for (size_t i = 0; i < cells.size(); ++i) row.cells[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

int CmdReport(const std::string& dir, bool as_json) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (!fs::exists(root / "summary.json") || !fs::exists(root / "pressure_series.csv")) {
    throw UsageError(dir + " is not a complete campaign directory");
  }
  json summary = ReadJsonFile((root / "summary.json").string());
  std::vector<SeriesRow> rows;
  try {
    rows = ReadSeries(root / "pressure_series.csv");
  } catch (const std::invalid_argument&) {
    throw UsageError("malformed pressure series");
  }
  std::string csv =
      "iteration,burst,multi_adapter,kv_pressure,shape_diversity,s_total,running_max,crash\n";
  double running = 0.0;
  for (const SeriesRow& r : rows) {
    running = std::max(running, r.Get("s_total"));
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s\n",
                  r.cells.at("iteration").c_str(), r.Get("burst"), r.Get("multi_adapter"),
                  r.Get("kv_pressure"), r.Get("shape_diversity"), r.Get("s_total"), running,
                  r.cells.at("crashed").c_str());
    csv += buf;
  }
  WriteText(root / "report" / "pressure_components.csv", csv);

  json table = json::array();
  for (const json& f : summary.value("findings", json::array())) {
    table.push_back({{"kind", f.value("kind", "")},
                     {"subtype", f.value("subtype", "")},
                     {"fingerprint", f.value("fingerprint", "")},
                     {"reproductions", f.value("reproduction_count", 0)},
                     {"replays", f.value("replay_count", 0)},
                     {"duplicates", f.value("duplicate_count", 0)}});
  }
  if (as_json) {
    std::cout << json{{"findings", table},
                      {"iterations", summary.value("iterations", 0)},
                      {"series", (root / "report" / "pressure_components.csv").string()}}
                     .dump(2)
              << "\n";
    return kOk;
  }
  std::cout << "iterations: " << summary.value("iterations", 0) << "\n";
  std::cout << "findings: " << table.size() << "\n";
  std::printf("  %-20s %-18s %-16s %s\n", "kind", "subtype", "fingerprint", "reproduced");
  for (const json& f : table) {
    std::printf("  %-20s %-18s %-16s %d/%d (+%d duplicates)\n",
                f["kind"].get<std::string>().c_str(), f["subtype"].get<std::string>().c_str(),
                f["fingerprint"].get<std::string>().c_str(), f["reproductions"].get<int>(),
                f["replays"].get<int>(), f["duplicates"].get<int>());
  }
  std::cout << "pressure series: " << (root / "report" / "pressure_components.csv").string()
            << " (" << rows.size() << " iterations, peak s_total " << running << ")\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"greybox fuzzer for LLM inference-serving systems"};
  app.require_subcommand(1);

  RunArgs run;
  CLI::App* run_cmd = app.add_subcommand("run", "Run a fuzzing campaign");
  run_cmd->add_option("--config", run.config, "Campaign config JSON")->check(CLI::ExistingFile);
  run.endpoint.Register(run_cmd);
  run_cmd->add_option("--budget", run.budget, "Iteration budget");
  run_cmd->add_option("--time-budget", run.time_budget, "Wall-clock budget in seconds");
  run_cmd->add_option("--seed", run.seed, "RNG seed");
  run_cmd->add_option("--profile", run.profile, "Seed profile: default, lora, prefix-sharing");
  run_cmd->add_option("--out", run.out, "Campaign output directory");
  run_cmd->add_flag("--minimize", run.minimize, "Minimize confirmed crash findings");
  run_cmd->add_flag("--stop-on-finding", run.stop_on_first, "Stop at the first finding");

  ReplayArgs replay;
  CLI::App* replay_cmd = app.add_subcommand("replay", "Replay a trace k times");
  replay_cmd->add_option("trace", replay.trace, "Trace file")->required();
  replay.endpoint.Register(replay_cmd);
  replay_cmd->add_option("--k", replay.k, "Replay count");
  replay_cmd->add_option("--original", replay.original, "Original execution report JSON");
  replay_cmd->add_option("--out", replay.out, "Directory for replay reports");

  ConfirmArgs conf;
  CLI::App* confirm_cmd = app.add_subcommand("confirm", "Execute a trace and confirm suspicions");
  confirm_cmd->add_option("trace", conf.trace, "Trace file")->required();
  conf.endpoint.Register(confirm_cmd);
  confirm_cmd->add_option("--k", conf.k, "Replays for majority confirmation");
  confirm_cmd->add_option("--N", conf.top_n, "Top-N candidates");
  confirm_cmd->add_option("--epsilon", conf.epsilon, "Near-tie tolerance in nats");
  confirm_cmd->add_option("--out", conf.out, "Write confirmation records JSON");

  MinimizeArgs mini;
  CLI::App* minimize_cmd = app.add_subcommand("minimize", "Minimize a reproducing trace");
  minimize_cmd->add_option("trace", mini.trace, "Trace file")->required();
  mini.endpoint.Register(minimize_cmd);
  minimize_cmd->add_option("--predicate", mini.predicate, "crash or a finding fingerprint");
  minimize_cmd->add_option("--k", mini.k, "Replays per majority check");
  minimize_cmd->add_option("--out", mini.out, "Minimized trace path");

  SimArgs simargs;
  CLI::App* sim_cmd = app.add_subcommand("sim", "Serve the simulator over HTTP");
  sim_cmd->add_option("--fault", simargs.engine.faults, "Arm a fault (F1, F2, F3)");
  sim_cmd->add_flag("--near-tie", simargs.engine.near_tie, "Near-tie decode mode");
  sim_cmd->add_option("--flag", simargs.engine.engine_flags, "Engine flag key=value");
  sim_cmd->add_option("--host", simargs.host, "Bind address");
  sim_cmd->add_option("--port", simargs.port, "Port (0 picks a free one)");
  sim_cmd->add_option("--time-scale", simargs.time_scale, "Wall-clock ms per simulated ms");

  std::string report_dir;
  bool report_json = false;
  CLI::App* report_cmd = app.add_subcommand("report", "Summarize a campaign directory");
  report_cmd->add_option("dir", report_dir, "Campaign directory")->required();
  report_cmd->add_flag("--json", report_json, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run_cmd) return CmdRun(run);
    if (*replay_cmd) return CmdReplay(replay);
    if (*confirm_cmd) return CmdConfirm(conf);
    if (*minimize_cmd) return CmdMinimize(mini);
    if (*sim_cmd) return CmdSim(simargs);
    if (*report_cmd) return CmdReport(report_dir, report_json);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const exec::EndpointUnavailable& e) {
    std::cerr << "endpoint failure: " << e.what() << "\n";
    return kEndpoint;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
