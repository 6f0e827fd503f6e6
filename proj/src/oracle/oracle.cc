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
#include "servefuzz/oracle/oracle.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>
#include <utility>

#include "servefuzz/util/hash.h"

namespace servefuzz::oracle {
namespace {

using exec::ExecutionReport;
using exec::KvEvent;
using exec::KvEventKind;
using exec::OutcomeStatus;
using exec::RequestOutcome;

constexpr SuspicionKind kAllKinds[] = {
    SuspicionKind::kTimeout,          SuspicionKind::kStall,
    SuspicionKind::kTtftRegression,   SuspicionKind::kLifecycleViolation,
    SuspicionKind::kCorruptedOutput,  SuspicionKind::kKvLeak,
    SuspicionKind::kCrossAdapterReuse, SuspicionKind::kHashConflict,
    SuspicionKind::kSnapshotDivergence, SuspicionKind::kCrash,
};

int Severity(SuspicionKind kind) {
  switch (kind) {
    case SuspicionKind::kCrash:
      return 3;
    case SuspicionKind::kCorruptedOutput:
    case SuspicionKind::kCrossAdapterReuse:
    case SuspicionKind::kHashConflict:
    case SuspicionKind::kSnapshotDivergence:
      return 2;
    default:
      return 1;
  }
}

Suspicion Make(const std::string& trace_id, SuspicionKind kind, std::string subtype,
               std::vector<std::string> signature, nlohmann::json evidence,
               std::vector<std::string> requests) {
  Suspicion s;
  s.trace_id = trace_id;
  s.kind = kind;
  if (!subtype.empty()) signature.push_back("subtype:" + subtype);
  s.subtype = std::move(subtype);
  s.evidence = std::move(evidence);
  std::sort(requests.begin(), requests.end());
  requests.erase(std::unique(requests.begin(), requests.end()), requests.end());
  s.requests = std::move(requests);
  s.fingerprint = Fingerprint(kind, std::move(signature));
  s.severity_hint = Severity(kind);
  return s;
}

std::map<std::string, const trace::RequestSpec*, std::less<>> SpecIndex(
    const trace::TimedTrace& t) {
  std::map<std::string, const trace::RequestSpec*, std::less<>> index;
  for (const trace::TraceEvent& e : t.events) {
    if (e.is_send()) index.emplace(e.spec().request_id, &e.spec());
  }
  return index;
}

// Requests whose prompts are identical by construction.
using GroupKey = std::tuple<std::string, int64_t, int64_t, std::string>;

GroupKey KeyOf(const trace::RequestSpec& spec) {
  return {std::string(spec.PromptIdentity()), spec.shape.prefix_len,
          spec.shape.prompt_len, std::string(spec.AdapterName())};
}

std::string AdapterClass(std::string_view adapter) {
  return adapter == trace::kBaseAdapter ? "base" : "lora";
}

void CheckCorruption(const trace::TimedTrace& t, const ExecutionReport& r,
                     std::vector<Suspicion>& out) {
  const auto specs = SpecIndex(t);
  for (const RequestOutcome& o : r.outcomes) {
    std::string subtype;
    if (o.status == OutcomeStatus::kCompleted &&
        std::all_of(o.completions.begin(), o.completions.end(),
                    [](const exec::Completion& c) { return c.tokens.empty(); })) {
      subtype = "empty_body";
    }
    for (const exec::Completion& c : o.completions) {
      if (static_cast<int64_t>(c.tokens.size()) > o.requested_max_tokens) {
        subtype = "over_max_tokens";
      }
      for (int32_t tok : c.tokens) {
        if (tok < 0) subtype = "bad_token";
      }
    }
    if (!subtype.empty()) {
      out.push_back(Make(r.trace_id, SuspicionKind::kCorruptedOutput, subtype, {},
                         {{"request_id", o.request_id}}, {o.request_id}));
    }
  }

  // Greedy twins must agree on their common prefix.
  std::map<GroupKey, std::vector<const RequestOutcome*>> groups;
  for (const RequestOutcome& o : r.outcomes) {
    auto it = specs.find(o.request_id);
    if (it == specs.end() || o.status != OutcomeStatus::kCompleted) continue;
    if (it->second->sampling.temperature != 0.0 || o.completions.empty()) continue;
    groups[KeyOf(*it->second)].push_back(&o);
  }
  for (const auto& [key, members] : groups) {
    std::vector<std::string> implicated;
    std::optional<size_t> position;
    const std::vector<int32_t>& ref = members.front()->completions.front().tokens;
    for (const RequestOutcome* o : members) {
      for (const exec::Completion& c : o->completions) {
        const size_t n = std::min(ref.size(), c.tokens.size());
        for (size_t p = 0; p < n; ++p) {
          if (ref[p] != c.tokens[p]) {
            implicated.push_back(members.front()->request_id);
            implicated.push_back(o->request_id);
            if (!position || p < *position) position = p;
            break;
          }
        }
      }
    }
    if (implicated.empty()) continue;
    nlohmann::json ev = {{"prompt_identity", std::get<0>(key)},
                         {"prompt_len", std::get<2>(key)},
                         {"adapter", std::get<3>(key)},
                         {"first_difference", *position}};
    out.push_back(Make(r.trace_id, SuspicionKind::kCorruptedOutput, "family_mismatch", {},
                       std::move(ev), std::move(implicated)));
  }
}

void CheckKvLeak(const ExecutionReport& r, const Thresholds& th,
                 std::vector<Suspicion>& out) {
  if (r.server_crashed || !r.kv_stream_available) return;
  std::map<int64_t, const KvEvent*> open;
  for (const KvEvent& e : r.kv_events) {
    if (e.kind == KvEventKind::kAlloc) {
      if (e.block_hash == 0) {
        open[e.block_id] = &e;
      } else {
        open.erase(e.block_id);
      }
    } else if (e.kind == KvEventKind::kFree || e.kind == KvEventKind::kEvict) {
      open.erase(e.block_id);
    }
  }
  std::map<std::string, int64_t> leaked;  // owner -> blocks
  std::set<std::string> statuses;
  for (const auto& [block, alloc] : open) {
    const RequestOutcome* o = r.Find(alloc->owner_request_id);
    if (o == nullptr) continue;
    if (o->terminal_ms() + th.kv_grace_ms > r.observed_until_ms) continue;
    ++leaked[o->request_id];
    statuses.insert("owner_status:" + std::string(exec::OutcomeStatusName(o->status)));
  }
  if (leaked.empty()) return;
  nlohmann::json ev = {{"leaked_blocks", leaked}};
  std::vector<std::string> owners;
  for (const auto& [owner, n] : leaked) owners.push_back(owner);
  out.push_back(Make(r.trace_id, SuspicionKind::kKvLeak, "",
                     {statuses.begin(), statuses.end()}, std::move(ev), std::move(owners)));
}

std::vector<int64_t> TokenTimes(const ExecutionReport& r) {
  std::vector<int64_t> times;
  for (const RequestOutcome& o : r.outcomes) {
    for (const exec::Completion& c : o.completions) {
      times.insert(times.end(), c.token_times_ms.begin(), c.token_times_ms.end());
    }
  }
  std::sort(times.begin(), times.end());
  return times;
}

}  // namespace

std::string_view SuspicionKindName(SuspicionKind kind) {
  switch (kind) {
    case SuspicionKind::kTimeout:
      return "timeout";
    case SuspicionKind::kStall:
      return "stall";
    case SuspicionKind::kTtftRegression:
      return "ttft_regression";
    case SuspicionKind::kLifecycleViolation:
      return "lifecycle_violation";
    case SuspicionKind::kCorruptedOutput:
      return "corrupted_output";
    case SuspicionKind::kKvLeak:
      return "kv_leak";
    case SuspicionKind::kCrossAdapterReuse:
      return "cross_adapter_reuse";
    case SuspicionKind::kHashConflict:
      return "hash_conflict";
    case SuspicionKind::kSnapshotDivergence:
      return "snapshot_divergence";
    case SuspicionKind::kCrash:
      return "crash";
  }
  return "timeout";
}

std::optional<SuspicionKind> ParseSuspicionKind(std::string_view name) {
  for (SuspicionKind k : kAllKinds) {
    if (SuspicionKindName(k) == name) return k;
  }
  return std::nullopt;
}

Route RouteOf(SuspicionKind kind, std::string_view subtype) {
  switch (kind) {
    case SuspicionKind::kCrash:
      return Route::kCrash;
    case SuspicionKind::kTimeout:
    case SuspicionKind::kStall:
    case SuspicionKind::kTtftRegression:
      return Route::kTiming;
    case SuspicionKind::kCorruptedOutput:
      return subtype == "family_mismatch" ? Route::kRelational : Route::kReproduction;
    default:
      return Route::kReproduction;
  }
}

uint64_t Fingerprint(SuspicionKind kind, std::vector<std::string> signature) {
  std::sort(signature.begin(), signature.end());
  signature.erase(std::unique(signature.begin(), signature.end()), signature.end());
  uint64_t h = HashString(SuspicionKindName(kind));
  for (const std::string& s : signature) h = HashCombine(h, HashString(s));
  return h;
}

nlohmann::json ToJson(const Suspicion& s) {
  return {{"trace_id", s.trace_id},
          {"kind", SuspicionKindName(s.kind)},
          {"subtype", s.subtype},
          {"evidence", s.evidence},
          {"requests", s.requests},
          {"fingerprint", HexDigest(s.fingerprint)},
          {"severity_hint", s.severity_hint}};
}

Suspicion SuspicionFromJson(const nlohmann::json& j) {
  Suspicion s;
  s.trace_id = j.at("trace_id").get<std::string>();
  std::optional<SuspicionKind> kind = ParseSuspicionKind(j.at("kind").get<std::string>());
  if (!kind) throw std::invalid_argument("unknown suspicion kind");
  s.kind = *kind;
  s.subtype = j.value("subtype", std::string());
  s.evidence = j.value("evidence", nlohmann::json::object());
  s.requests = j.value("requests", std::vector<std::string>{});
  s.fingerprint = std::stoull(j.at("fingerprint").get<std::string>(), nullptr, 16);
  s.severity_hint = j.value("severity_hint", 0);
  return s;
}

void BaselineStats::Add(double ttft_ms) {
  samples_.push_back(ttft_ms);
  while (samples_.size() > window_) samples_.pop_front();
}

double BaselineStats::Quantile(double q) const {
  if (samples_.empty()) return 0.0;
  std::vector<double> sorted(samples_.begin(), samples_.end());
  std::sort(sorted.begin(), sorted.end());
  const double rank = std::ceil(q * static_cast<double>(sorted.size()));
  const size_t idx = static_cast<size_t>(std::max(1.0, rank)) - 1;
  return sorted[std::min(idx, sorted.size() - 1)];
}

std::optional<Suspicion> DetectStall(const ExecutionReport& r, int64_t window_ms) {
  std::vector<std::pair<int64_t, int64_t>> busy;
  for (const RequestOutcome& o : r.outcomes) {
    if (o.total_ms <= 0) continue;
    int64_t end = o.terminal_ms();
    if (r.server_crashed && r.crash_time_ms) end = std::min(end, *r.crash_time_ms);
    if (end > o.dispatch_ms) busy.emplace_back(o.dispatch_ms, end);
  }
  if (busy.empty()) return std::nullopt;
  std::sort(busy.begin(), busy.end());
  std::vector<std::pair<int64_t, int64_t>> segments;
  for (const auto& iv : busy) {
    if (!segments.empty() && iv.first <= segments.back().second) {
      segments.back().second = std::max(segments.back().second, iv.second);
    } else {
      segments.push_back(iv);
    }
  }
  const std::vector<int64_t> times = TokenTimes(r);
  int64_t worst = 0;
  for (const auto& [s, e] : segments) {
    int64_t prev = s;
    auto it = std::lower_bound(times.begin(), times.end(), s);
    for (; it != times.end() && *it <= e; ++it) {
      worst = std::max(worst, *it - prev);
      prev = *it;
    }
    worst = std::max(worst, e - prev);
  }
  if (worst < window_ms) return std::nullopt;
  std::vector<std::string> inflight;
  for (const RequestOutcome& o : r.outcomes) {
    if (o.total_ms > 0) inflight.push_back(o.request_id);
  }
  return Make(r.trace_id, SuspicionKind::kStall, "", {},
              {{"longest_gap_ms", worst}, {"window_ms", window_ms}},
              std::move(inflight));
}

CheckResult BehavioralCheck(const trace::TimedTrace& t, const ExecutionReport& r,
                            const BaselineStats& baseline, const Thresholds& th) {
  CheckResult result;
  std::vector<Suspicion>& out = result.suspicions;

  if (r.server_crashed) {
    out.push_back(Make(r.trace_id, SuspicionKind::kCrash, "",
                       {"evidence:" + r.crash_evidence},
                       {{"crash_evidence", r.crash_evidence},
                        {"crash_time_ms", r.crash_time_ms ? nlohmann::json(*r.crash_time_ms)
                                                          : nlohmann::json(nullptr)}},
                       {}));
  }

  std::vector<std::string> timed_out;
  for (const RequestOutcome& o : r.outcomes) {
    if (o.status == OutcomeStatus::kTimeout) timed_out.push_back(o.request_id);
  }
  if (!timed_out.empty()) {
    out.push_back(Make(r.trace_id, SuspicionKind::kTimeout, "", {},
                       {{"timed_out", timed_out.size()}}, timed_out));
  }

  if (std::optional<Suspicion> stall = DetectStall(r, th.stall_window_ms)) {
    out.push_back(std::move(*stall));
  }

  if (r.schedule_degraded) {
    result.skipped.push_back("ttft_regression: schedule degraded");
  } else if (!baseline.Ready(th.min_baseline_samples)) {
    result.skipped.push_back("ttft_regression: baseline has " +
                             std::to_string(baseline.count()) + " < " +
                             std::to_string(th.min_baseline_samples) + " samples");
  } else {
    const double p50 = std::max(baseline.p50(), 1.0);
    std::vector<std::string> victims;
    double worst = 0.0;
    for (const RequestOutcome& o : r.outcomes) {
      if (!o.ttft_ms) continue;
      const double ttft = static_cast<double>(*o.ttft_ms);
      if (ttft > th.ttft_factor * p50) {
        victims.push_back(o.request_id);
        worst = std::max(worst, ttft);
      }
    }
    if (!victims.empty()) {
      out.push_back(Make(r.trace_id, SuspicionKind::kTtftRegression, "", {},
                         {{"baseline_p50_ms", p50},
                          {"max_ttft_ms", worst},
                          {"amplification", worst / p50}},
                         victims));
    }
  }

  CheckCorruption(t, r, out);
  CheckKvLeak(r, th, out);
  return result;
}

std::vector<Suspicion> LifecycleCheck(const trace::TimedTrace& t,
                                      const ExecutionReport& r, const Thresholds& th) {
  (void)t;
  std::vector<Suspicion> out;
  auto flag = [&](const RequestOutcome& o, const char* subtype) {
    out.push_back(Make(r.trace_id, SuspicionKind::kLifecycleViolation, subtype, {},
                       {{"request_id", o.request_id},
                        {"status", exec::OutcomeStatusName(o.status)}},
                       {o.request_id}));
  };
  for (const RequestOutcome& o : r.outcomes) {
    int64_t last_token = -1;
    for (const exec::Completion& c : o.completions) {
      if (!c.token_times_ms.empty()) last_token = std::max(last_token, c.token_times_ms.back());
    }
    if (o.cancel_issued_ms) {
      const int64_t limit = *o.cancel_issued_ms + th.lifecycle_grace_ms;
      if (o.status == OutcomeStatus::kCompleted && o.terminal_ms() > limit) {
        flag(o, "completed_after_cancel");
      } else if (last_token > limit) {
        flag(o, "tokens_after_cancel");
      }
    } else if (o.status == OutcomeStatus::kCancelled) {
      flag(o, "spurious_cancel");
    }
    if (o.disconnect_issued_ms) {
      const int64_t limit = *o.disconnect_issued_ms + th.lifecycle_grace_ms;
      if (o.status == OutcomeStatus::kCompleted && o.terminal_ms() > limit) {
        flag(o, "completed_after_disconnect");
      } else if (last_token > limit) {
        flag(o, "streaming_after_disconnect");
      }
    } else if (o.status == OutcomeStatus::kDisconnected) {
      flag(o, "spurious_disconnect");
    }
  }
  return out;
}

std::vector<Suspicion> StructuralForensics(const trace::TimedTrace& t,
                                           const ExecutionReport& r) {
  std::vector<Suspicion> out;
  if (!r.kv_stream_available || r.kv_events.empty()) return out;
  std::map<int64_t, const KvEvent*> last_alloc;
  for (const KvEvent& e : r.kv_events) {
    if (e.kind == KvEventKind::kAlloc) {
      last_alloc[e.block_id] = &e;
      continue;
    }
    if (e.kind != KvEventKind::kPrefixHit && e.kind != KvEventKind::kReuse) continue;
    auto it = last_alloc.find(e.block_id);
    if (it == last_alloc.end()) continue;
    const KvEvent& alloc = *it->second;
    const std::string kind(exec::KvEventKindName(e.kind));
    nlohmann::json ev = {{"block_id", e.block_id},
                         {"event", kind},
                         {"hit_owner", e.owner_request_id},
                         {"hit_adapter", e.adapter},
                         {"hit_hash", HexDigest(e.block_hash)},
                         {"alloc_owner", alloc.owner_request_id},
                         {"alloc_adapter", alloc.adapter},
                         {"alloc_hash", HexDigest(alloc.block_hash)}};
    if (e.adapter != alloc.adapter) {
      out.push_back(Make(r.trace_id, SuspicionKind::kCrossAdapterReuse, "",
                         {"event:" + kind, "alloc:" + AdapterClass(alloc.adapter),
                          "hit:" + AdapterClass(e.adapter)},
                         std::move(ev), {e.owner_request_id, alloc.owner_request_id}));
    } else if (e.block_hash != alloc.block_hash) {
      out.push_back(Make(r.trace_id, SuspicionKind::kHashConflict, "", {"event:" + kind},
                         std::move(ev), {e.owner_request_id, alloc.owner_request_id}));
    }
  }

  // Matched prompts must cover the same cacheable block hashes.
  const auto specs = SpecIndex(t);
  std::map<std::string, std::set<uint64_t>> hashes;
  for (const KvEvent& e : r.kv_events) {
    if (e.block_hash == 0 || e.kind == KvEventKind::kFree || e.kind == KvEventKind::kEvict) {
      continue;
    }
    hashes[e.owner_request_id].insert(e.block_hash);
  }
  std::map<GroupKey, std::vector<std::string>> groups;
  for (const RequestOutcome& o : r.outcomes) {
    auto it = specs.find(o.request_id);
    if (it == specs.end() || o.status != OutcomeStatus::kCompleted) continue;
    groups[KeyOf(*it->second)].push_back(o.request_id);
  }
  for (const auto& [key, members] : groups) {
    std::vector<std::string> odd;
    for (const std::string& id : members) {
      if (hashes[id] != hashes[members.front()]) odd.push_back(id);
    }
    if (odd.empty()) continue;
    odd.push_back(members.front());
    out.push_back(Make(r.trace_id, SuspicionKind::kSnapshotDivergence, "within_run", {},
                       {{"prompt_identity", std::get<0>(key)},
                        {"prompt_len", std::get<2>(key)}},
                       std::move(odd)));
  }
  return out;
}

std::vector<Suspicion> CrossRunDivergence(const trace::TimedTrace& t,
                                          const ExecutionReport& a,
                                          const ExecutionReport& b) {
  (void)t;
  std::vector<Suspicion> out;
  if (!a.kv_stream_available || !b.kv_stream_available) return out;
  auto sequences = [](const ExecutionReport& r) {
    std::map<std::string, std::vector<int64_t>> seq;
    for (const KvEvent& e : r.kv_events) {
      if (e.kind == KvEventKind::kFree || e.kind == KvEventKind::kEvict) continue;
      seq[e.owner_request_id].push_back(e.block_id);
    }
    return seq;
  };
  const auto sa = sequences(a);
  const auto sb = sequences(b);
  std::vector<std::string> differing;
  for (const auto& [id, blocks] : sa) {
    auto it = sb.find(id);
    if (it != sb.end() && it->second != blocks) differing.push_back(id);
  }
  if (!differing.empty()) {
    out.push_back(Make(a.trace_id, SuspicionKind::kSnapshotDivergence, "cross_run", {},
                       {{"requests", differing.size()}}, differing));
  }
  return out;
}

CheckResult Evaluate(const trace::TimedTrace& t, const ExecutionReport& r,
                     const BaselineStats& baseline, const Thresholds& th) {
  CheckResult result = BehavioralCheck(t, r, baseline, th);
  std::vector<Suspicion> all = std::move(result.suspicions);
  for (std::vector<Suspicion> extra : {LifecycleCheck(t, r, th), StructuralForensics(t, r)}) {
    for (Suspicion& s : extra) all.push_back(std::move(s));
  }
  std::vector<Suspicion> merged;
  for (Suspicion& s : all) {
    auto it = std::find_if(merged.begin(), merged.end(), [&](const Suspicion& m) {
      return m.fingerprint == s.fingerprint;
    });
    if (it == merged.end()) {
      merged.push_back(std::move(s));
      continue;
    }
    it->requests.insert(it->requests.end(), s.requests.begin(), s.requests.end());
    std::sort(it->requests.begin(), it->requests.end());
    it->requests.erase(std::unique(it->requests.begin(), it->requests.end()),
                       it->requests.end());
  }
  result.suspicions = std::move(merged);
  return result;
}

}  // namespace servefuzz::oracle
