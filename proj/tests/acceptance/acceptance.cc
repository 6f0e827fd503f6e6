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

// Acceptance driver: one PASS/FAIL line per criterion. Tolerances and
// budgets are pinned below; the exit status is nonzero if any line fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "f3_templates.h"
#include "random_trace.h"
#include "servefuzz/campaign/campaign.h"
#include "servefuzz/confirm/confirm.h"
#include "servefuzz/exec/target.h"
#include "servefuzz/mutation/mutation.h"
#include "servefuzz/sim/config.h"
#include "servefuzz/sim/engine.h"
#include "servefuzz/trace/trace_io.h"
#include "servefuzz/trace/validate.h"

namespace servefuzz {
namespace {

constexpr double kOracleSweepMaxSeconds = 10.0;
constexpr double kPressureTolerance = 1e-9;
constexpr int64_t kF1MaxIterations = 5000;
constexpr double kF1MaxSeconds = 600.0;
constexpr int64_t kF2Iterations = 400;
constexpr double kF2MinAmplification = 100.0;
constexpr int64_t kF3MaxIterations = 2000;
constexpr double kF3MaxSeconds = 300.0;
constexpr int kF3MajorityK = 3;
constexpr int kSubsetRuns = 10;
constexpr int64_t kCleanIterations = 500;
constexpr int64_t kNearTieIterations = 500;
constexpr int kNearTieMinSuspicions = 20;
constexpr int kRoundTripTraces = 1000;
constexpr int kMutationChecks = 10000;

struct Result {
  bool pass = false;
  std::string detail;
};

double Seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

std::string Fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), format, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Relational oracle against a literal transcription.

struct Expected {
  bool gap = false;
  confirm::Verdict verdict = confirm::Verdict::kPass;
};

// Written from the algorithm statement only: first divergent index, top-N by
// logprob with ties to the lower token id, near-tie iff the original token
// is in the top-N and the replay token's advantage is below epsilon.
Expected BruteForce(const std::vector<int32_t>& y, const std::vector<int32_t>& y2,
                    const std::vector<exec::PositionLogprobs>& L, int n, double eps) {
  size_t p = 0;
  while (p < y.size() && p < y2.size() && y[p] == y2[p]) ++p;
  if (p == y.size() && p == y2.size()) return {false, confirm::Verdict::kPass};
  if (p >= L.size()) return {true, confirm::Verdict::kPass};
  std::vector<exec::TokenLogprob> ranked = L[p];
  for (size_t i = 0; i < ranked.size(); ++i) {
    for (size_t j = i + 1; j < ranked.size(); ++j) {
      const bool before = ranked[j].logprob > ranked[i].logprob ||
                          (ranked[j].logprob == ranked[i].logprob && ranked[j].token < ranked[i].token);
      if (before) std::swap(ranked[i], ranked[j]);
    }
  }
  auto lookup = [&](int32_t tok, size_t limit) -> std::optional<double> {
    for (size_t i = 0; i < std::min(limit, ranked.size()); ++i) {
      if (ranked[i].token == tok) return ranked[i].logprob;
    }
    return std::nullopt;
  };
  if (p < y.size() && p < y2.size()) {
    const std::optional<double> in_top = lookup(y[p], static_cast<size_t>(n));
    const std::optional<double> other = lookup(y2[p], ranked.size());
    if (in_top && other && *other - *in_top < eps) {
      return {false, confirm::Verdict::kFalsePositive};
    }
  }
  return {false, confirm::Verdict::kTruePositive};
}

Result OracleEquivalence() {
  const auto start = std::chrono::steady_clock::now();
  constexpr int kAlphabet = 4;
  const std::vector<double> grid = {-0.1, -0.15, -1.2};
  std::vector<std::vector<int32_t>> words;
  for (int len = 0; len <= 3; ++len) {
    int count = 1;
    for (int i = 0; i < len; ++i) count *= kAlphabet;
    for (int code = 0; code < count; ++code) {
      std::vector<int32_t> w;
      for (int i = 0, c = code; i < len; ++i, c /= kAlphabet) w.push_back(c % kAlphabet);
      words.push_back(w);
    }
  }
  int64_t cases = 0, mismatches = 0;
  std::string first_mismatch;
  const exec::PositionLogprobs filler = {{0, -0.1}, {1, -0.7}};
  int combos = 1;
  for (int i = 0; i < kAlphabet; ++i) combos *= static_cast<int>(grid.size()) + 1;
  for (const auto& y : words) {
    for (const auto& y2 : words) {
      std::optional<size_t> p = confirm::FirstDifference(y, y2);
      const size_t pos = p.value_or(0);
      for (int combo = 0; combo < combos; ++combo) {
        exec::PositionLogprobs at;
        for (int tok = 0, c = combo; tok < kAlphabet; ++tok, c /= static_cast<int>(grid.size()) + 1) {
          const int slot = c % (static_cast<int>(grid.size()) + 1);
          if (slot > 0) at.push_back({tok, grid[static_cast<size_t>(slot - 1)]});
        }
        // Full coverage, plus one list that stops just short of p.
        std::vector<std::vector<exec::PositionLogprobs>> lists;
        std::vector<exec::PositionLogprobs> full(pos, filler);
        full.push_back(at);
        lists.push_back(full);
        if (combo == 0) lists.push_back(std::vector<exec::PositionLogprobs>(pos, filler));
        for (const auto& L : lists) {
          for (int n = 0; n <= 3; ++n) {
            for (double eps : {0.0, 0.05, 0.5}) {
              ++cases;
              const Expected want = BruteForce(y, y2, L, n, eps);
              bool gap = false;
              confirm::Verdict got = confirm::Verdict::kPass;
              try {
                got = confirm::ConfirmRelational(y, y2, L, n, eps).verdict;
              } catch (const confirm::InstrumentationGap&) {
                gap = true;
              }
              if (gap != want.gap || (!gap && got != want.verdict)) {
                if (mismatches++ == 0) {
                  first_mismatch = Fmt(" first mismatch at |y|=%zu |y2|=%zu N=%d eps=%g",
                                       y.size(), y2.size(), n, eps);
                }
              }
            }
          }
        }
      }
    }
  }
  const double secs = Seconds(start);
  return {mismatches == 0 && secs < kOracleSweepMaxSeconds,
          Fmt("%lld cases, %lld mismatches, %.2f s", static_cast<long long>(cases),
              static_cast<long long>(mismatches), secs) + first_mismatch};
}

// ---------------------------------------------------------------------------
// 2. Majority threshold.

Result MajorityRule() {
  int bad = 0;
  for (int k = 1; k <= 12; ++k) {
    int ceiling = 0;
    while (3 * ceiling < 2 * k) ++ceiling;
    if (confirm::MajorityThreshold(k) != ceiling) ++bad;
    for (unsigned mask = 0; mask < (1u << k); ++mask) {
      std::vector<bool> flags;
      int count = 0;
      for (int i = 0; i < k; ++i) {
        flags.push_back((mask >> i) & 1u);
        count += (mask >> i) & 1u;
      }
      if (confirm::MajorityConfirm(flags, k) != (count >= ceiling)) ++bad;
    }
  }
  return {bad == 0, Fmt("k=1..12, all flag vectors, %d disagreements", bad)};
}

// ---------------------------------------------------------------------------
// 3. Pressure score.

Result PressureScore() {
  const double ref = campaign::ScorePressure(20, 6, 1500, 6).s_total;
  bool ok = std::abs(ref - 4.0) <= kPressureTolerance;
  Rng rng(31337);
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const int64_t s = rng.UniformInt(0, 64), a = rng.UniformInt(0, 12);
    const int64_t k = rng.UniformInt(0, 4096), h = rng.UniformInt(0, 24);
    const double direct = s / 20.0 + a / 6.0 + k / 1500.0 + h / 6.0;
    worst = std::max(worst, std::abs(campaign::ScorePressure(s, a, k, h).s_total - direct));
  }
  ok = ok && worst <= kPressureTolerance;
  return {ok, Fmt("S(20,6,1500,6)=%.12f, max random deviation %.3g", ref, worst)};
}

// ---------------------------------------------------------------------------
// Campaign plumbing shared by the planted-fault criteria.

struct CampaignRun {
  campaign::CampaignSummary summary;
  double seconds = 0.0;
};

campaign::CampaignConfig Config(const std::string& profile, std::map<std::string, std::string> flags,
                                int64_t budget, uint64_t seed) {
  campaign::CampaignConfig c;
  c.rng_seed = seed;
  c.max_iterations = budget;
  c.profile_name = profile;
  c.profile = campaign::NamedProfile(profile);
  c.engine_flags = std::move(flags);
  return c;
}

CampaignRun RunCampaign(const campaign::CampaignConfig& c) {
  const sim::SimConfig sc = exec::SimConfigFromFlags(c.engine_flags);
  exec::VirtualSimTarget target(sc, {}), confirm_target(sc, {});
  const auto start = std::chrono::steady_clock::now();
  campaign::Campaign campaign(c, target, confirm_target);
  CampaignRun run;
  run.summary = campaign.Run();
  run.seconds = Seconds(start);
  return run;
}

campaign::CampaignConfig F1Config() {
  campaign::CampaignConfig c = Config("prefix-sharing", {{"faults", "F1"}}, kF1MaxIterations, 1);
  c.stop_on_first_finding = true;
  return c;
}

// ---------------------------------------------------------------------------
// 4. F1 discovery.

Result F1Discovery(const CampaignRun& run) {
  const confirm::Finding* tp = nullptr;
  for (const auto& f : run.summary.findings) {
    if (f.relational == confirm::Verdict::kTruePositive) tp = &f;
  }
  const bool ok = tp != nullptr && run.seconds < kF1MaxSeconds;
  std::string kinds;
  for (const auto& f : run.summary.findings) {
    kinds += std::string(kinds.empty() ? "" : ",") + std::string(oracle::SuspicionKindName(f.kind)) +
             (f.subtype.empty() ? "" : "/" + f.subtype);
  }
  return {ok, Fmt("%lld iterations, %.1f s, findings [%s], TruePositive %s",
                  static_cast<long long>(run.summary.iterations), run.seconds, kinds.c_str(),
                  tp ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 5. F2 discovery with amplification and recovery.

Result F2Discovery() {
  const CampaignRun run = RunCampaign(Config("default", {{"faults", "F2"}}, kF2Iterations, 1));
  double best = 0.0;
  bool recovered = false;
  std::string kind = "none";
  for (const auto& f : run.summary.findings) {
    if (f.kind != oracle::SuspicionKind::kStall && f.kind != oracle::SuspicionKind::kTtftRegression) {
      continue;
    }
    const nlohmann::json& ev = f.evidence.at("confirmation");
    if (!ev.contains("amplification_vs_campaign") || !ev["amplification_vs_campaign"].is_number()) {
      continue;
    }
    const double amp = ev["amplification_vs_campaign"].get<double>();
    const bool rec = ev.contains("recovery") && ev["recovery"].value("recovered", false) &&
                     ev["recovery"].value("recovered_vs_campaign", false);
    if (amp >= kF2MinAmplification && rec && amp > best) {
      best = amp;
      recovered = true;
      kind = std::string(oracle::SuspicionKindName(f.kind));
    } else if (!recovered && amp > best) {
      best = amp;
      kind = std::string(oracle::SuspicionKindName(f.kind));
    }
  }
  return {best >= kF2MinAmplification && recovered,
          Fmt("%s finding, amplification %.0fx vs campaign p50 %.1f ms, recovered %s, %.1f s",
              kind.c_str(), best, run.summary.baseline_p50_ms, recovered ? "yes" : "no", run.seconds)};
}

// ---------------------------------------------------------------------------
// 6. F3 discovery and minimization.

Result F3Discovery() {
  campaign::CampaignConfig c = Config("lora", {{"faults", "F3"}}, kF3MaxIterations, 1);
  c.stop_on_first_finding = true;
  const CampaignRun run = RunCampaign(c);
  const confirm::Finding* crash = nullptr;
  for (const auto& f : run.summary.findings) {
    if (f.kind == oracle::SuspicionKind::kCrash) crash = &f;
  }
  if (crash == nullptr) {
    return {false, Fmt("no crash in %lld iterations", static_cast<long long>(run.summary.iterations))};
  }
  const trace::TimedTrace& original = run.summary.finding_traces.at(crash->fingerprint);
  exec::VirtualSimTarget fresh(exec::SimConfigFromFlags(c.engine_flags), {});
  oracle::Suspicion s;
  s.kind = oracle::SuspicionKind::kCrash;
  s.fingerprint = crash->fingerprint;
  const campaign::Predicate crashes = campaign::ReproducePredicate(fresh, s, c.thresholds);
  const campaign::MinimizeResult m = campaign::Minimize(original, crashes, kF3MajorityK);
  const bool holds = !m.refused && campaign::MajorityHolds(crashes, m.trace, kF3MajorityK);
  const bool ok = run.seconds < kF3MaxSeconds && m.trace.events.size() < original.events.size() && holds;
  return {ok, Fmt("crash at iteration %lld, %.1f s; minimized %zu -> %zu events, k=3 majority %s",
                  static_cast<long long>(run.summary.first_finding_iteration.at("crash")), run.seconds,
                  original.events.size(), m.trace.events.size(), holds ? "holds" : "fails")};
}

// ---------------------------------------------------------------------------
// 7. Single-axis immunity.

Result SubsetImmunity() {
  exec::VirtualSimTarget target(exec::SimConfigFromFlags({{"faults", "F3"}}), {});
  int crashes = 0, leaks = 0, unobserved = 0;
  for (unsigned subset = 0; subset < sim::kF3All; ++subset) {
    for (int run = 0; run < kSubsetRuns; ++run) {
      target.Reset();
      const exec::ExecutionReport r =
          target.Execute(servefuzz::testing::F3Template(subset, 1000 + static_cast<uint64_t>(run)));
      crashes += r.server_crashed;
      const auto& masks = target.engine().f3_masks_seen();
      for (unsigned m : masks) leaks += (m & ~subset) != 0;
      unobserved += !masks.contains(subset);
    }
  }
  target.Reset();
  const bool control = target.Execute(servefuzz::testing::F3Template(sim::kF3All, 1000)).server_crashed;
  return {crashes == 0 && leaks == 0 && unobserved == 0 && control,
          Fmt("15 subsets x %d runs: %d crashes, %d off-subset conditions, %d templates missing their "
              "subset; all four together crash: %s",
              kSubsetRuns, crashes, leaks, unobserved, control ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 8. False-positive floor.

Result FalsePositiveFloor() {
  const CampaignRun clean = RunCampaign(Config("default", {}, kCleanIterations, 1));
  campaign::CampaignConfig nt = Config("prefix-sharing", {{"near_tie_mode", "true"}}, kNearTieIterations, 1);
  nt.max_confirmations_per_fingerprint = 1000;
  const CampaignRun tie = RunCampaign(nt);
  int relational = 0, dismissed_fp = 0, other = 0;
  for (const auto& rec : tie.summary.confirmations) {
    if (rec.suspicion.kind != oracle::SuspicionKind::kCorruptedOutput) continue;
    ++relational;
    if (rec.disposition == confirm::Disposition::kDismissed &&
        rec.relational == confirm::Verdict::kFalsePositive) {
      ++dismissed_fp;
    } else {
      ++other;
    }
  }
  const bool ok = clean.summary.findings.empty() && tie.summary.findings.empty() &&
                  relational >= kNearTieMinSuspicions && other == 0;
  return {ok, Fmt("clean: %zu findings in %lld iterations; near-tie: %d output suspicions, %d dismissed "
                  "as FalsePositive, %d otherwise, %zu findings",
                  clean.summary.findings.size(), static_cast<long long>(clean.summary.iterations),
                  relational, dismissed_fp, other, tie.summary.findings.size())};
}

// ---------------------------------------------------------------------------
// 9. Trigger-prompt invariance.

Result TriggerInvariance(const CampaignRun& f1) {
  const confirm::Finding* conflict = nullptr;
  for (const auto& f : f1.summary.findings) {
    if (f.kind == oracle::SuspicionKind::kHashConflict) conflict = &f;
  }
  CampaignRun more;
  if (conflict == nullptr) {
    campaign::CampaignConfig c = F1Config();
    c.stop_on_first_finding = false;
    c.max_iterations = 1000;
    more = RunCampaign(c);
    for (const auto& f : more.summary.findings) {
      if (f.kind == oracle::SuspicionKind::kHashConflict) conflict = &f;
    }
  }
  if (conflict == nullptr) return {false, "no hash_conflict finding to take the schedule from"};
  const auto& traces = more.summary.finding_traces.contains(conflict->fingerprint)
                           ? more.summary.finding_traces
                           : f1.summary.finding_traces;
  const nlohmann::json& ev = conflict->evidence.at("suspicion");
  const std::string trigger = ev.at("alloc_owner");
  const std::string victim = ev.at("hit_owner");
  const trace::TimedTrace schedule =
      confirm::DeterministicVariant(traces.at(conflict->fingerprint), confirm::ConfirmConfig{});

  const sim::SimConfig sc = exec::SimConfigFromFlags(F1Config().engine_flags);
  auto victim_tokens = [&](const trace::TimedTrace& t) {
    exec::VirtualSimTarget target(sc, {});
    const exec::ExecutionReport r = target.Execute(t);
    const exec::RequestOutcome* o = r.Find(victim);
    return o && !o->completions.empty() ? o->completions[0].tokens : std::vector<int32_t>{};
  };
  const std::vector<int32_t> reference = victim_tokens(schedule);
  const std::vector<int32_t> clean = victim_tokens(confirm::SoloTrace(schedule, victim));
  int identical = 0;
  for (const char* family : {"unrelated-alpha", "unrelated-beta", "unrelated-gamma"}) {
    trace::TimedTrace variant = schedule;
    for (auto& e : variant.events) {
      if (e.is_send() && e.spec().request_id == trigger) e.spec().prompt_family_id = family;
    }
    identical += victim_tokens(variant) == reference;
  }
  const bool corrupted = !reference.empty() && reference != clean;
  return {identical == 3 && corrupted,
          Fmt("trigger %s, victim %s: %d/3 variants bit-identical, victim output %s its solo run",
              trigger.c_str(), victim.c_str(), identical, corrupted ? "differs from" : "matches")};
}

// ---------------------------------------------------------------------------
// 10. Determinism and round-trips.

Result DeterminismAndRoundTrips(const CampaignRun& f1) {
  const CampaignRun again = RunCampaign(F1Config());
  auto fingerprints = [](const campaign::CampaignSummary& s) {
    std::vector<uint64_t> out;
    for (const auto& f : s.findings) out.push_back(f.fingerprint);
    return out;
  };
  const bool same = again.summary.executed_trace_ids == f1.summary.executed_trace_ids &&
                    fingerprints(again.summary) == fingerprints(f1.summary) &&
                    !f1.summary.findings.empty();

  Rng rng(2718);
  int round_trips = 0;
  for (int i = 0; i < kRoundTripTraces; ++i) {
    const trace::TimedTrace t = servefuzz::testing::RandomTrace(rng);
    round_trips += trace::Deserialize(trace::Serialize(t)) == t;
  }

  const mutation::SeedProfile profile = campaign::NamedProfile("lora");
  const mutation::MutationPalette palette = mutation::PaletteFromProfile(profile);
  int valid = 0;
  for (int i = 0; i < kMutationChecks; ++i) {
    const trace::TimedTrace a = trace::Repair(servefuzz::testing::RandomTrace(rng));
    const trace::TimedTrace b = mutation::GenerateSeed(profile, rng.Next());
    const uint64_t seed = rng.Next();
    trace::TimedTrace m;
    switch (i % 5) {
      case 0: m = mutation::MutateTiming(a, seed, 0.05); break;
      case 1: m = mutation::CollapseTiming(b, seed); break;
      case 2: m = mutation::MutateEvents(a, seed, palette); break;
      case 3: m = mutation::Splice(a, b, {}, seed); break;
      default: {
        exec::TelemetrySummary wf, pf;
        wf.windows.kv_allocs = {static_cast<int64_t>(rng.UniformInt(0, 9)), 3};
        pf.windows.inflight_sends = {1, static_cast<int64_t>(rng.UniformInt(0, 9))};
        m = mutation::DirectedSplice(b, a, &wf, &pf, {}, seed);
      }
    }
    valid += trace::Validate(m).ok();
  }
  return {same && round_trips == kRoundTripTraces && valid == kMutationChecks,
          Fmt("campaign rerun identical: %s (%zu executions); round-trips %d/%d; valid mutations %d/%d",
              same ? "yes" : "no", f1.summary.executed_trace_ids.size(), round_trips, kRoundTripTraces,
              valid, kMutationChecks)};
}

}  // namespace
}  // namespace servefuzz

int main() {
  using servefuzz::Result;
  int failed = 0;
  auto report = [&](int id, const char* name, const Result& r) {
    std::printf("[%s] %2d %s: %s\n", r.pass ? "PASS" : "FAIL", id, name, r.detail.c_str());
    std::fflush(stdout);
    failed += !r.pass;
  };
  auto guarded = [](const std::function<Result()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Result{false, std::string("exception: ") + e.what()};
    }
  };
  report(1, "relational oracle equivalence", guarded(servefuzz::OracleEquivalence));
  report(2, "majority threshold", guarded(servefuzz::MajorityRule));
  report(3, "pressure score", guarded(servefuzz::PressureScore));
  servefuzz::CampaignRun f1;
  std::string f1_error;
  try {
    f1 = servefuzz::RunCampaign(servefuzz::F1Config());
  } catch (const std::exception& e) {
    f1_error = e.what();
  }
  auto needs_f1 = [&](auto fn) {
    return [&, fn] {
      if (!f1_error.empty()) return Result{false, "F1 campaign failed: " + f1_error};
      return fn(f1);
    };
  };
  report(4, "F1 discovery", guarded(needs_f1(servefuzz::F1Discovery)));
  report(5, "F2 discovery", guarded(servefuzz::F2Discovery));
  report(6, "F3 discovery and minimization", guarded(servefuzz::F3Discovery));
  report(7, "F3 single-axis immunity", guarded(servefuzz::SubsetImmunity));
  report(8, "false-positive floor", guarded(servefuzz::FalsePositiveFloor));
  report(9, "trigger-prompt invariance", guarded(needs_f1(servefuzz::TriggerInvariance)));
  report(10, "determinism and round-trips", guarded(needs_f1(servefuzz::DeterminismAndRoundTrips)));
  std::printf("%d/10 criteria passed\n", 10 - failed);
  return failed == 0 ? 0 : 1;
}
