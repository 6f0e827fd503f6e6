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
#include "servefuzz/campaign/campaign.h"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>

#include "servefuzz/trace/trace_io.h"
#include "servefuzz/util/hash.h"

namespace servefuzz::campaign {
namespace {

using nlohmann::json;
using trace::TimedTrace;

constexpr const char* kMutationNames[] = {"timing_jitter", "timing_collapse", "event",
                                          "splice", "directed_splice"};

// Round-trips through strtod.
std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool IsSuspect(const oracle::CheckResult& checks) { return !checks.suspicions.empty(); }

void WriteFile(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << body;
}

}  // namespace

size_t CampaignSummary::CountDisposition(confirm::Disposition d) const {
  return static_cast<size_t>(
      std::count_if(confirmations.begin(), confirmations.end(),
                    [&](const ConfirmationRecord& c) { return c.disposition == d; }));
}

json ToJson(const CampaignSummary& s) {
  json findings = json::array();
  for (const confirm::Finding& f : s.findings) findings.push_back(confirm::ToJson(f));
  json confirmations = json::array();
  for (const ConfirmationRecord& c : s.confirmations) {
    json rec = {{"iteration", c.iteration},
                {"suspicion", oracle::ToJson(c.suspicion)},
                {"disposition", confirm::DispositionName(c.disposition)},
                {"evidence", c.evidence}};
    rec["relational"] = c.relational ? json(confirm::VerdictName(*c.relational)) : json();
    confirmations.push_back(std::move(rec));
  }
  json minimized = json::object();
  for (const auto& [fp, m] : s.minimized) {
    minimized[HexDigest(fp)] = {{"refused", m.refused},
                                {"events", m.trace.events.size()},
                                {"predicate_calls", m.predicate_calls},
                                {"rounds", m.log}};
  }
  return {{"iterations", s.iterations},
          {"findings", findings},
          {"confirmations", confirmations},
          {"minimized", minimized},
          {"suspicion_counts", s.suspicion_counts},
          {"first_finding_iteration", s.first_finding_iteration},
          {"corpus_size", s.corpus_size},
          {"baseline_p50_ms", s.baseline_p50_ms},
          {"baseline_samples", s.baseline_samples},
          {"elapsed_s", s.elapsed_s},
          {"aborted", s.aborted},
          {"abort_reason", s.abort_reason},
          {"executed_trace_ids", s.executed_trace_ids}};
}

Campaign::Campaign(CampaignConfig config, exec::Target& target, exec::Target& confirm_target)
    : config_(std::move(config)),
      target_(target),
      confirm_target_(confirm_target),
      corpus_(config_.selection, config_.retention),
      palette_(mutation::PaletteFromProfile(config_.profile)),
      rng_(HashCombine(config_.rng_seed, HashString("campaign"))) {
  config_.confirmation.thresholds = config_.thresholds;
}

void Campaign::RecoverTarget() {
  if (target_.SupportsReset()) target_.Reset();
  if (!target_.Healthy()) throw exec::EndpointUnavailable("endpoint did not recover");
}

Campaign::Executed Campaign::ExecuteAndCheck(const TimedTrace& t) {
  if (target_.SupportsReset()) target_.Reset();
  Executed run;
  run.report = target_.Execute(t);
  run.checks = oracle::Evaluate(t, run.report, baseline_, config_.thresholds);
  run.telemetry = exec::Summarize(t, run.report, config_.telemetry_window_ms);
  return run;
}

TimedTrace Campaign::Mutate(int64_t iteration, std::string& kind_name) {
  const uint64_t seed = HashCombine(config_.rng_seed, static_cast<uint64_t>(iteration));
  const size_t kind = rng_.WeightedIndex(config_.mutation.AsVector());
  kind_name = kMutationNames[kind];
  const size_t a = corpus_.Select(rng_);
  const TimedTrace& parent = corpus_.at(a).trace;
  switch (kind) {
    case 0:
      return mutation::MutateTiming(parent, seed, rng_.Pick(config_.jitter_intensities));
    case 1:
      return mutation::CollapseTiming(parent, seed);
    case 2:
      return mutation::MutateEvents(parent, seed, palette_);
    default:
      break;
  }
  const size_t b = corpus_.Select(rng_);
  const CorpusEntry& first = corpus_.at(a);
  const CorpusEntry& second = corpus_.at(b);
  if (kind == 3) {
    return mutation::Splice(first.trace, second.trace, {mutation::CutMode::kRandom}, seed);
  }
  return mutation::DirectedSplice(first.trace, second.trace, &first.telemetry,
                                  &second.telemetry, {}, seed);
}

void Campaign::Confirm(const TimedTrace& t, const Executed& run, int64_t iteration,
                       CampaignSummary& summary) {
  struct Pending {
    oracle::Suspicion suspicion;
    int retries_left;
  };
  std::deque<Pending> queue;
  for (const oracle::Suspicion& s : run.checks.suspicions) {
    if (findings_.Contains(s.fingerprint)) {
      confirm::Finding dup;
      dup.fingerprint = s.fingerprint;
      findings_.Add(std::move(dup));
      continue;
    }
    // Past the per-fingerprint allowance, only power-of-two occurrences are
    // confirmed again.
    const int seen = ++confirm_attempts_[s.fingerprint];
    if (seen > config_.max_confirmations_per_fingerprint && (seen & (seen - 1)) != 0) continue;
    queue.push_back({s, config_.confirmation.retry_budget});
  }
  confirm::ConfirmConfig cc = config_.confirmation;
  if (baseline_.Ready(config_.thresholds.min_baseline_samples)) {
    cc.campaign_baseline_p50_ms = baseline_.p50();
  }
  while (!queue.empty()) {
    Pending p = std::move(queue.front());
    queue.pop_front();
    confirm::ConfirmationOutcome out = confirm::ConfirmSuspicion(
        p.suspicion, t, run.report, confirm_target_, cc, p.retries_left);
    if (out.disposition == confirm::Disposition::kRequeue) {
      if (confirm_target_.SupportsReset()) confirm_target_.Reset();
      queue.push_back({p.suspicion, p.retries_left - 1});
      continue;
    }
    summary.confirmations.push_back(
        {iteration, p.suspicion, out.disposition, out.relational, out.evidence});
    if (out.disposition != confirm::Disposition::kFinding || !out.finding) continue;
    DedupOutcome d = findings_.Add(*out.finding);
    if (d.duplicate) continue;
    const std::string kind(oracle::SuspicionKindName(p.suspicion.kind));
    summary.first_finding_iteration.try_emplace(kind, iteration);
    summary.finding_traces[out.finding->fingerprint] = t;
    if (config_.minimize_crashes && p.suspicion.kind == oracle::SuspicionKind::kCrash) {
      summary.minimized[out.finding->fingerprint] = Minimize(
          t, ReproducePredicate(confirm_target_, p.suspicion, config_.thresholds),
          config_.confirmation.k);
    }
  }
}

void Campaign::Consider(TimedTrace t, std::vector<std::string> parents, std::string mutation,
                        int64_t iteration, CampaignSummary& summary) {
  Executed run = ExecuteAndCheck(t);
  summary.executed_trace_ids.push_back(t.trace_id);
  for (const oracle::Suspicion& s : run.checks.suspicions) {
    ++summary.suspicion_counts[std::string(oracle::SuspicionKindName(s.kind))];
  }
  PressureScore pressure = ScorePressure(run.telemetry);
  best_pressure_ = std::max(best_pressure_, pressure.s_total);
  std::set<std::string> fresh = novelty_.Observe(run.report);

  IterationRecord rec;
  rec.iteration = iteration;
  rec.trace_id = t.trace_id;
  rec.mutation = mutation;
  rec.pressure = pressure;
  rec.best_pressure = best_pressure_;
  rec.suspicions = run.checks.suspicions.size();
  rec.novelty = fresh.size();
  rec.crashed = run.report.server_crashed;
  summary.series.push_back(rec);

  Confirm(t, run, iteration, summary);
  // A TTFT regression that confirmation did not sustain is ordinary queueing
  // and still describes the baseline.
  const bool baseline_run = std::all_of(
      run.checks.suspicions.begin(), run.checks.suspicions.end(), [&](const oracle::Suspicion& s) {
        return s.kind == oracle::SuspicionKind::kTtftRegression &&
               !findings_.Contains(s.fingerprint);
      });
  if (baseline_run) {
    for (const exec::RequestOutcome& o : run.report.outcomes) {
      if (o.ttft_ms) baseline_.Add(static_cast<double>(*o.ttft_ms));
    }
  }

  if (!fresh.empty() || IsSuspect(run.checks)) {
    CorpusEntry e;
    e.trace = std::move(t);
    e.parents = std::move(parents);
    e.mutation = std::move(mutation);
    e.telemetry = run.telemetry;
    e.pressure = pressure;
    e.novelty = std::move(fresh);
    for (const oracle::Suspicion& s : run.checks.suspicions) {
      e.suspicion_history.push_back(HexDigest(s.fingerprint));
    }
    e.report = std::move(run.report);
    e.added_iteration = iteration;
    corpus_.Add(std::move(e));
  }
  if (rec.crashed) RecoverTarget();
}

CampaignSummary Campaign::Run() {
  CampaignSummary summary;
  const std::string invalid = config_.Validate();
  if (!invalid.empty()) throw std::invalid_argument(invalid);
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  auto done = [&] {
    if (config_.stop_on_first_finding && !findings_.findings().empty()) return true;
    return config_.time_budget_s > 0 && elapsed() >= config_.time_budget_s;
  };

  try {
    for (int i = 0; i < config_.bootstrap_seeds; ++i) {
      // The first execution is always novel, so the corpus is never empty.
      TimedTrace seed = mutation::GenerateSeed(
          config_.profile,
          HashCombine(config_.rng_seed, HashString("bootstrap" + std::to_string(i))));
      Consider(std::move(seed), {}, "seed", -1, summary);
    }
    for (int64_t it = 0; it < config_.max_iterations && !done(); ++it) {
      std::string kind;
      TimedTrace child = Mutate(it, kind);
      std::vector<std::string> parents;
      if (auto p = child.metadata.find("parents"); p != child.metadata.end()) {
        parents.push_back(p->second);
      }
      Consider(std::move(child), std::move(parents), kind, it, summary);
      summary.iterations = it + 1;
    }
  } catch (const exec::EndpointUnavailable& e) {
    summary.aborted = true;
    summary.abort_reason = e.what();
  }
  summary.findings = findings_.findings();
  summary.corpus_size = corpus_.size();
  summary.baseline_p50_ms = baseline_.p50();
  summary.baseline_samples = baseline_.count();
  summary.elapsed_s = elapsed();
  if (!config_.output_dir.empty()) Persist(summary, config_.output_dir);
  return summary;
}

void Campaign::Persist(const CampaignSummary& summary, const std::string& dir) const {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  fs::create_directories(root / "findings");
  fs::create_directories(root / "corpus");
  json s = ToJson(summary);
  s["config"] = ToJson(config_);
  WriteFile(root / "summary.json", s.dump(2));

  std::string csv =
      "iteration,trace_id,mutation,burst,multi_adapter,kv_pressure,shape_diversity,s_total,"
      "best_so_far,n_send,n_adapter,n_kv,n_shape,suspicions,novelty,crashed\n";
  for (const IterationRecord& r : summary.series) {
    const PressureScore& p = r.pressure;
    std::vector<std::string> cells = {
        std::to_string(r.iteration),   r.trace_id,
        r.mutation,                    Num(p.burst),
        Num(p.multi_adapter), Num(p.kv_pressure),
        Num(p.shape_diversity), Num(p.s_total),
        Num(r.best_pressure), std::to_string(p.n_send),
        std::to_string(p.n_adapter),   std::to_string(p.n_kv),
        std::to_string(p.n_shape),     std::to_string(r.suspicions),
        std::to_string(r.novelty),     r.crashed ? "1" : "0"};
    for (size_t i = 0; i < cells.size(); ++i) csv += (i ? "," : "") + cells[i];
    csv += "\n";
  }
  WriteFile(root / "pressure_series.csv", csv);

  for (const confirm::Finding& f : summary.findings) {
    const std::string id = HexDigest(f.fingerprint);
    WriteFile(root / "findings" / (id + ".json"), confirm::ToJson(f).dump(2));
    if (auto t = summary.finding_traces.find(f.fingerprint); t != summary.finding_traces.end()) {
      trace::SaveTrace(t->second, (root / "findings" / (id + ".trace.json")).string());
    }
    if (auto m = summary.minimized.find(f.fingerprint);
        m != summary.minimized.end() && !m->second.refused) {
      trace::SaveTrace(m->second.trace, (root / "findings" / (id + ".min.trace.json")).string());
    }
  }
  for (const CorpusEntry& e : corpus_.entries()) {
    trace::SaveTrace(e.trace, (root / "corpus" / (e.trace.trace_id + ".json")).string());
  }
}

}  // namespace servefuzz::campaign
