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
#include "servefuzz/confirm/confirm.h"

#include <algorithm>
#include <functional>
#include <utility>

#include "servefuzz/util/hash.h"

namespace servefuzz::confirm {
namespace {

using exec::ExecutionReport;
using exec::OutcomeStatus;
using exec::PositionLogprobs;
using exec::RequestOutcome;
using nlohmann::json;
using oracle::Route;
using oracle::Suspicion;
using oracle::SuspicionKind;
using trace::TimedTrace;

std::optional<double> LogprobOf(const PositionLogprobs& lp, int32_t token) {
  for (const exec::TokenLogprob& e : lp) {
    if (e.token == token) return e.logprob;
  }
  return std::nullopt;
}

// Failure of the replay machinery itself, as opposed to a verdict.
struct InfraFailure {
  std::string what;
};

ExecutionReport RunOnce(const TimedTrace& t, exec::Target& target) {
  if (target.SupportsReset()) target.Reset();
  return target.Execute(t);
}

// Longest stretch without a token anywhere while some request is in flight.
// Each request contributes its dispatch, the global token arrivals inside its
// lifetime, and its terminal time.
int64_t MaxProgressGap(const ExecutionReport& r) {
  std::vector<int64_t> times;
  for (const RequestOutcome& o : r.outcomes) {
    for (const exec::Completion& c : o.completions) {
      times.insert(times.end(), c.token_times_ms.begin(), c.token_times_ms.end());
    }
  }
  std::sort(times.begin(), times.end());
  int64_t gap = 0;
  for (const RequestOutcome& o : r.outcomes) {
    int64_t last = o.dispatch_ms;
    auto it = std::upper_bound(times.begin(), times.end(), o.dispatch_ms);
    for (; it != times.end() && *it <= o.terminal_ms(); ++it) {
      gap = std::max(gap, *it - last);
      last = *it;
    }
    gap = std::max(gap, o.terminal_ms() - last);
  }
  return gap;
}

int64_t MaxTerminal(const ExecutionReport& r) {
  int64_t t = 0;
  for (const RequestOutcome& o : r.outcomes) t = std::max(t, o.terminal_ms());
  return t;
}

struct RelationalCheck {
  std::string request_id;
  std::optional<ConfirmationVerdict> verdict;
  bool degraded = false;
  bool gap = false;
  std::string skipped;

  json ToJson() const {
    json j = {{"request_id", request_id}};
    if (verdict) j["verdict"] = confirm::ToJson(*verdict);
    if (degraded) j["degraded_exact_match"] = true;
    if (!skipped.empty()) j["skipped"] = skipped;
    return j;
  }
};

// Compares the request's output in a full replay against its solo replay.
RelationalCheck CheckRequest(const TimedTrace& det, const ExecutionReport& full,
                             const std::string& id, exec::Target& target,
                             const ConfirmConfig& config, int& replays) {
  RelationalCheck check{id};
  const RequestOutcome* o = full.Find(id);
  if (o == nullptr || o->status != OutcomeStatus::kCompleted || o->completions.empty()) {
    check.skipped = "not completed in replay";
    return check;
  }
  ExecutionReport solo = RunOnce(SoloTrace(det, id), target);
  ++replays;
  if (solo.server_crashed) throw InfraFailure{"server crashed during solo replay"};
  const RequestOutcome* so = solo.Find(id);
  if (so == nullptr || so->status != OutcomeStatus::kCompleted || so->completions.empty()) {
    throw InfraFailure{"solo replay did not complete"};
  }
  const std::vector<int32_t>& y = o->completions.front().tokens;
  const exec::Completion& c2 = so->completions.front();
  if (!c2.logprobs) {
    check.degraded = true;
    ConfirmationVerdict v;
    v.divergence_position = FirstDifference(y, c2.tokens);
    v.verdict = v.divergence_position ? Verdict::kTruePositive : Verdict::kPass;
    check.verdict = v;
    return check;
  }
  try {
    check.verdict = ConfirmRelational(y, c2.tokens, *c2.logprobs, config.top_n, config.epsilon);
  } catch (const InstrumentationGap& e) {
    check.gap = true;
    check.skipped = e.what();
  }
  return check;
}

// Strongest verdict: TruePositive over FalsePositive over Pass.
std::optional<Verdict> Strongest(const std::vector<RelationalCheck>& checks) {
  std::optional<Verdict> best;
  for (const RelationalCheck& c : checks) {
    if (!c.verdict) continue;
    if (!best || static_cast<int>(c.verdict->verdict) > static_cast<int>(*best)) {
      best = c.verdict->verdict;
    }
  }
  return best;
}

json ChecksJson(const std::vector<RelationalCheck>& checks) {
  json a = json::array();
  for (const RelationalCheck& c : checks) a.push_back(c.ToJson());
  return a;
}

bool Reproduces(const Suspicion& s, const TimedTrace& det, const ExecutionReport& r,
                const ConfirmConfig& config) {
  oracle::BaselineStats none;
  oracle::CheckResult found = oracle::Evaluate(det, r, none, config.thresholds);
  return std::any_of(found.suspicions.begin(), found.suspicions.end(),
                     [&](const Suspicion& m) { return m.fingerprint == s.fingerprint; });
}

std::vector<bool> Flags(const std::vector<ExecutionReport>& reports,
                        const std::function<bool(const ExecutionReport&)>& pred) {
  std::vector<bool> flags;
  for (const ExecutionReport& r : reports) flags.push_back(pred(r));
  return flags;
}

int Count(const std::vector<bool>& flags) {
  return static_cast<int>(std::count(flags.begin(), flags.end(), true));
}

void ConfirmRelationalRoute(const Suspicion& s, const TimedTrace& det, exec::Target& target,
                            const ConfirmConfig& config, ConfirmationOutcome& out) {
  ExecutionReport full = RunOnce(det, target);
  out.replays = 1;
  if (full.server_crashed) throw InfraFailure{"server crashed during full replay"};
  std::vector<RelationalCheck> checks;
  for (const std::string& id : s.requests) {
    checks.push_back(CheckRequest(det, full, id, target, config, out.replays));
  }
  out.relational = Strongest(checks);
  out.evidence["relational"] = ChecksJson(checks);
  bool any_gap = std::any_of(checks.begin(), checks.end(),
                             [](const RelationalCheck& c) { return c.gap; });
  if (out.relational == Verdict::kTruePositive) {
    out.reproductions = 1;
    out.disposition = Disposition::kFinding;
  } else if (any_gap) {
    throw InfraFailure{"replay logprobs missing at divergence"};
  } else {
    out.disposition = Disposition::kDismissed;
  }
}

void ConfirmReproductionRoute(const Suspicion& s, const TimedTrace& det, exec::Target& target,
                              const ConfirmConfig& config, ConfirmationOutcome& out) {
  std::vector<ExecutionReport> reports = Replay(det, target, config.k);
  out.replays = config.k;
  std::vector<bool> flags = Flags(
      reports, [&](const ExecutionReport& r) { return Reproduces(s, det, r, config); });
  out.reproductions = Count(flags);
  out.evidence["reproduced"] = flags;
  if (!MajorityConfirm(flags, config.k)) {
    out.disposition = Disposition::kDismissed;
    return;
  }
  out.disposition = Disposition::kFinding;
  // Block-level anomalies also get output evidence for the requests they name.
  if (s.kind == SuspicionKind::kHashConflict || s.kind == SuspicionKind::kCrossAdapterReuse ||
      s.kind == SuspicionKind::kSnapshotDivergence) {
    const ExecutionReport* full = nullptr;
    for (size_t i = 0; i < reports.size(); ++i) {
      if (flags[i] && !reports[i].server_crashed) {
        full = &reports[i];
        break;
      }
    }
    if (full == nullptr) return;
    std::vector<RelationalCheck> checks;
    for (size_t i = 0; i < s.requests.size() && i < 4; ++i) {
      checks.push_back(CheckRequest(det, *full, s.requests[i], target, config, out.replays));
    }
    out.relational = Strongest(checks);
    out.evidence["relational"] = ChecksJson(checks);
  }
}

void ConfirmCrashRoute(const TimedTrace& det, exec::Target& target, const ConfirmConfig& config,
                       ConfirmationOutcome& out) {
  std::vector<ExecutionReport> reports = Replay(det, target, config.k);
  out.replays = config.k;
  std::vector<bool> flags =
      Flags(reports, [](const ExecutionReport& r) { return r.server_crashed; });
  out.reproductions = Count(flags);
  out.evidence["reproduced"] = flags;
  json crashes = json::array();
  for (const ExecutionReport& r : reports) {
    if (r.server_crashed) crashes.push_back(r.crash_evidence);
  }
  out.evidence["crash_evidence"] = crashes;
  out.disposition =
      MajorityConfirm(flags, config.k) ? Disposition::kFinding : Disposition::kDismissed;
}

struct SoloBaseline {
  std::string request_id;
  int64_t ttft_ms = 0;
  int64_t max_gap_ms = 0;
};

void ConfirmTimingRoute(const Suspicion& s, const TimedTrace& det, exec::Target& target,
                        const ConfirmConfig& config, ConfirmationOutcome& out) {
  const double factor = config.thresholds.ttft_factor;
  std::vector<SoloBaseline> solos;
  for (const std::string& id : s.requests) {
    if (solos.size() >= config.max_timing_victims) break;
    if (det.FindSend(id) == nullptr) continue;
    ExecutionReport solo = RunOnce(SoloTrace(det, id), target);
    ++out.replays;
    if (solo.server_crashed) throw InfraFailure{"server crashed during solo replay"};
    const RequestOutcome* so = solo.Find(id);
    if (so == nullptr || !so->ttft_ms) continue;
    solos.push_back({id, std::max<int64_t>(*so->ttft_ms, 1),
                     std::max<int64_t>(MaxProgressGap(solo), 1)});
  }
  if (solos.empty() && s.kind != SuspicionKind::kTimeout) {
    throw InfraFailure{"no solo baseline could be measured"};
  }

  std::vector<ExecutionReport> reports = Replay(det, target, config.k);
  out.replays += config.k;
  int64_t worst_ttft = 0;
  double worst_ratio = 0.0;
  std::vector<int64_t> victim_ttfts;
  auto retrip = [&](const ExecutionReport& r) {
    if (r.server_crashed) return false;
    // A victim re-trips when both its TTFT and the engine-wide progress gap
    // exceed factor times its own solo values; queueing alone keeps tokens
    // flowing and fails the second test.
    const double gap = static_cast<double>(MaxProgressGap(r));
    bool victim_slow = false;
    for (const SoloBaseline& b : solos) {
      const RequestOutcome* o = r.Find(b.request_id);
      if (o == nullptr || !o->ttft_ms) continue;
      worst_ttft = std::max(worst_ttft, *o->ttft_ms);
      victim_ttfts.push_back(*o->ttft_ms);
      double ratio = static_cast<double>(*o->ttft_ms) / static_cast<double>(b.ttft_ms);
      worst_ratio = std::max(worst_ratio, ratio);
      if (ratio > factor && gap > factor * static_cast<double>(b.max_gap_ms)) {
        victim_slow = true;
      }
    }
    switch (s.kind) {
      case SuspicionKind::kStall:
        // No progress for the whole window is anomalous on its own.
        return oracle::DetectStall(r, config.thresholds.stall_window_ms).has_value();
      case SuspicionKind::kTimeout:
        return std::any_of(s.requests.begin(), s.requests.end(), [&](const std::string& id) {
          const RequestOutcome* o = r.Find(id);
          return o != nullptr && o->status == OutcomeStatus::kTimeout;
        });
      default:
        return victim_slow;
    }
  };
  std::vector<bool> flags = Flags(reports, retrip);
  out.reproductions = Count(flags);

  json solo_json = json::array();
  for (const SoloBaseline& b : solos) {
    solo_json.push_back({{"request_id", b.request_id},
                         {"solo_ttft_ms", b.ttft_ms},
                         {"solo_max_gap_ms", b.max_gap_ms}});
  }
  out.evidence["solo_baselines"] = solo_json;
  out.evidence["reproduced"] = flags;
  int64_t p50_ttft = 0;
  if (!victim_ttfts.empty()) {
    std::sort(victim_ttfts.begin(), victim_ttfts.end());
    p50_ttft = victim_ttfts[(victim_ttfts.size() - 1) / 2];
  }
  out.evidence["replay_max_ttft_ms"] = worst_ttft;
  out.evidence["replay_p50_ttft_ms"] = p50_ttft;
  out.evidence["amplification_vs_solo"] = worst_ratio;
  if (config.campaign_baseline_p50_ms && *config.campaign_baseline_p50_ms > 0) {
    const double base = *config.campaign_baseline_p50_ms;
    out.evidence["campaign_baseline_p50_ms"] = base;
    out.evidence["amplification_vs_campaign"] = static_cast<double>(p50_ttft) / base;
    out.evidence["max_amplification_vs_campaign"] = static_cast<double>(worst_ttft) / base;
  }
  if (!MajorityConfirm(flags, config.k)) {
    out.disposition = Disposition::kDismissed;
    return;
  }
  out.disposition = Disposition::kFinding;
  if (!config.recovery_probe || solos.empty()) return;

  // A copy of the first victim sent after everything else has finished.
  const SoloBaseline& b = solos.front();
  trace::RequestSpec probe = *det.FindSend(b.request_id);
  probe.request_id = "probe-" + HexDigest(HashString(b.request_id)).substr(0, 8);
  TimedTrace with_probe = det;
  int64_t at = MaxTerminal(reports.front()) + config.probe_gap_ms;
  with_probe.events.push_back(trace::TraceEvent::Send(at, probe));
  ExecutionReport pr = RunOnce(with_probe, target);
  ++out.replays;
  const RequestOutcome* po = pr.Find(probe.request_id);
  json rec = {{"probe_offset_ms", at}, {"solo_ttft_ms", b.ttft_ms}};
  if (po != nullptr && po->ttft_ms) {
    rec["probe_ttft_ms"] = *po->ttft_ms;
    rec["recovered"] = *po->ttft_ms <= 2 * b.ttft_ms;
    if (config.campaign_baseline_p50_ms && *config.campaign_baseline_p50_ms > 0) {
      rec["recovered_vs_campaign"] =
          static_cast<double>(*po->ttft_ms) <= 2.0 * *config.campaign_baseline_p50_ms;
    }
  } else {
    rec["recovered"] = false;
  }
  out.evidence["recovery"] = rec;
}

}  // namespace

std::string_view VerdictName(Verdict v) {
  switch (v) {
    case Verdict::kPass: return "Pass";
    case Verdict::kFalsePositive: return "FalsePositive";
    case Verdict::kTruePositive: return "TruePositive";
  }
  return "?";
}

json ToJson(const ConfirmationVerdict& v) {
  json j = {{"verdict", VerdictName(v.verdict)}};
  j["divergence_position"] = v.divergence_position ? json(*v.divergence_position) : json();
  j["delta"] = v.delta ? json(*v.delta) : json();
  j["in_top_n"] = v.in_top_n ? json(*v.in_top_n) : json();
  return j;
}

std::optional<size_t> FirstDifference(const std::vector<int32_t>& y,
                                      const std::vector<int32_t>& y2) {
  size_t n = std::min(y.size(), y2.size());
  for (size_t i = 0; i < n; ++i) {
    if (y[i] != y2[i]) return i;
  }
  if (y.size() != y2.size()) return n;
  return std::nullopt;
}

ConfirmationVerdict ConfirmRelational(const std::vector<int32_t>& y,
                                      const std::vector<int32_t>& y2,
                                      const std::vector<PositionLogprobs>& L, int top_n,
                                      double epsilon) {
  ConfirmationVerdict v;
  std::optional<size_t> p = FirstDifference(y, y2);
  if (!p) return v;
  v.divergence_position = p;
  if (*p >= L.size()) {
    throw InstrumentationGap("no replay logprobs at position " + std::to_string(*p));
  }
  PositionLogprobs lp = L[*p];
  std::stable_sort(lp.begin(), lp.end(), [](const auto& a, const auto& b) {
    return a.logprob != b.logprob ? a.logprob > b.logprob : a.token < b.token;
  });
  PositionLogprobs top(lp.begin(), lp.begin() + std::min<size_t>(lp.size(), std::max(top_n, 0)));

  std::optional<double> orig = *p < y.size() ? LogprobOf(lp, y[*p]) : std::nullopt;
  std::optional<double> repl = *p < y2.size() ? LogprobOf(lp, y2[*p]) : std::nullopt;
  bool in_t = *p < y.size() && LogprobOf(top, y[*p]).has_value();
  v.in_top_n = in_t;
  if (orig && repl) v.delta = *repl - *orig;
  v.verdict = (in_t && v.delta && *v.delta < epsilon) ? Verdict::kFalsePositive
                                                      : Verdict::kTruePositive;
  return v;
}

int MajorityThreshold(int k) {
  if (k < 1) throw std::invalid_argument("k must be positive");
  return (2 * k + 2) / 3;
}

bool MajorityConfirm(const std::vector<bool>& reproduced, int k) {
  if (k < 1 || reproduced.size() != static_cast<size_t>(k)) {
    throw std::invalid_argument("expected exactly k reproduction flags");
  }
  return Count(reproduced) >= MajorityThreshold(k);
}

TimedTrace DeterministicVariant(const TimedTrace& t, const ConfirmConfig& config) {
  TimedTrace d = t;
  for (trace::TraceEvent& e : d.events) {
    if (!e.is_send()) continue;
    trace::SamplingConfig& s = e.spec().sampling;
    s.temperature = 0.0;
    s.seed = config.replay_seed;
    s.logprobs = config.top_n;
  }
  return d;
}

TimedTrace SoloTrace(const TimedTrace& t, std::string_view request_id) {
  TimedTrace solo;
  solo.trace_id = t.trace_id + "/solo";
  solo.base_time = t.base_time;
  if (const trace::RequestSpec* spec = t.FindSend(request_id)) {
    solo.events.push_back(trace::TraceEvent::Send(0, *spec));
  }
  return solo;
}

std::vector<ExecutionReport> Replay(const TimedTrace& t, exec::Target& target, int k) {
  std::vector<ExecutionReport> out;
  for (int i = 0; i < k; ++i) out.push_back(RunOnce(t, target));
  return out;
}

json ToJson(const Finding& f) {
  json j = {{"fingerprint", HexDigest(f.fingerprint)},
            {"kind", oracle::SuspicionKindName(f.kind)},
            {"subtype", f.subtype},
            {"trace_id", f.trace_id},
            {"evidence", f.evidence},
            {"replay_count", f.replay_count},
            {"reproduction_count", f.reproduction_count},
            {"duplicate_count", f.duplicate_count}};
  j["relational"] = f.relational ? json(VerdictName(*f.relational)) : json();
  return j;
}

Finding FindingFromJson(const json& j) {
  Finding f;
  f.fingerprint = std::stoull(j.at("fingerprint").get<std::string>(), nullptr, 16);
  auto kind = oracle::ParseSuspicionKind(j.at("kind").get<std::string>());
  if (!kind) throw std::invalid_argument("unknown finding kind");
  f.kind = *kind;
  f.subtype = j.value("subtype", "");
  f.trace_id = j.value("trace_id", "");
  f.evidence = j.value("evidence", json::object());
  f.replay_count = j.value("replay_count", 0);
  f.reproduction_count = j.value("reproduction_count", 0);
  f.duplicate_count = j.value("duplicate_count", 0);
  if (j.contains("relational") && j["relational"].is_string()) {
    std::string v = j["relational"];
    for (Verdict c : {Verdict::kPass, Verdict::kFalsePositive, Verdict::kTruePositive}) {
      if (VerdictName(c) == v) f.relational = c;
    }
  }
  return f;
}

std::string_view DispositionName(Disposition d) {
  switch (d) {
    case Disposition::kFinding: return "finding";
    case Disposition::kDismissed: return "dismissed";
    case Disposition::kRequeue: return "requeue";
    case Disposition::kUnconfirmable: return "unconfirmable";
  }
  return "?";
}

ConfirmationOutcome ConfirmSuspicion(const Suspicion& suspicion, const TimedTrace& t,
                                     const ExecutionReport& original, exec::Target& target,
                                     const ConfirmConfig& config, int retries_left) {
  ConfirmationOutcome out;
  out.suspicion = suspicion;
  TimedTrace det = DeterministicVariant(t, config);
  out.evidence["route"] = [&] {
    switch (suspicion.route()) {
      case Route::kRelational: return "relational";
      case Route::kReproduction: return "reproduction";
      case Route::kCrash: return "crash";
      case Route::kTiming: return "timing";
    }
    return "?";
  }();
  out.evidence["original_output_digest"] = HexDigest(exec::OutputDigest(original));
  try {
    switch (suspicion.route()) {
      case Route::kRelational:
        ConfirmRelationalRoute(suspicion, det, target, config, out);
        break;
      case Route::kReproduction:
        ConfirmReproductionRoute(suspicion, det, target, config, out);
        break;
      case Route::kCrash:
        ConfirmCrashRoute(det, target, config, out);
        break;
      case Route::kTiming:
        ConfirmTimingRoute(suspicion, det, target, config, out);
        break;
    }
  } catch (const InfraFailure& e) {
    out.evidence["infrastructure_failure"] = e.what;
    out.disposition = retries_left > 0 ? Disposition::kRequeue : Disposition::kUnconfirmable;
    return out;
  } catch (const std::runtime_error& e) {
    out.evidence["infrastructure_failure"] = e.what();
    out.disposition = retries_left > 0 ? Disposition::kRequeue : Disposition::kUnconfirmable;
    return out;
  }
  if (out.disposition == Disposition::kFinding) {
    Finding f;
    f.fingerprint = suspicion.fingerprint;
    f.kind = suspicion.kind;
    f.subtype = suspicion.subtype;
    f.trace_id = t.trace_id;
    f.evidence = {{"suspicion", suspicion.evidence}, {"confirmation", out.evidence}};
    f.replay_count = out.replays;
    f.reproduction_count = out.reproductions;
    f.relational = out.relational;
    out.finding = std::move(f);
  }
  return out;
}

}  // namespace servefuzz::confirm
