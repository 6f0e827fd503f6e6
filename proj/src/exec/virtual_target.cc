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
#include <algorithm>
#include <limits>
#include <map>
#include <utility>

#include "servefuzz/exec/target.h"
#include "servefuzz/sim/engine.h"

namespace servefuzz::exec {

using trace::EventKind;
using trace::TraceEvent;

VirtualSimTarget::VirtualSimTarget(const sim::SimConfig& config, ExecOptions options)
    : engine_(std::make_unique<sim::Engine>(config)), options_(std::move(options)) {}

VirtualSimTarget::~VirtualSimTarget() = default;

void VirtualSimTarget::Reset() { engine_->Reset(); }

bool VirtualSimTarget::Healthy() { return !engine_->crashed(); }

std::string VirtualSimTarget::Describe() const { return "sim://virtual"; }

ExecutionReport VirtualSimTarget::Execute(const trace::TimedTrace& t) {
  sim::Engine& engine = *engine_;
  ExecutionReport report;
  report.trace_id = t.trace_id;
  report.kv_stream_available = true;
  const int64_t t0 = engine.now_ms();
  const size_t kv_start = engine.kv_events().size();

  std::vector<const TraceEvent*> events;
  for (const TraceEvent& e : t.events) events.push_back(&e);
  std::stable_sort(events.begin(), events.end(),
                   [](const TraceEvent* a, const TraceEvent* b) {
                     return a->offset_ms < b->offset_ms;
                   });

  std::map<std::string, size_t, std::less<>> slot;
  for (const TraceEvent& e : t.events) {
    if (!e.is_send()) continue;
    const trace::RequestSpec& spec = e.spec();
    RequestOutcome o;
    o.request_id = spec.request_id;
    o.intended_offset_ms = e.offset_ms;
    o.dispatch_ms = e.offset_ms;
    o.requested_max_tokens = spec.sampling.max_tokens;
    slot.emplace(spec.request_id, report.outcomes.size());
    report.outcomes.push_back(std::move(o));
  }
  std::vector<bool> inflight(report.outcomes.size(), false);
  std::vector<bool> done(report.outcomes.size(), false);
  int inflight_count = 0;

  auto terminate = [&](size_t i, OutcomeStatus status, int64_t at,
                       std::optional<std::string> detail) {
    if (done[i]) return;
    RequestOutcome& o = report.outcomes[i];
    o.status = status;
    o.total_ms = std::max<int64_t>(0, at - o.dispatch_ms);
    if (detail) o.error_detail = std::move(detail);
    if (inflight[i]) --inflight_count;
    inflight[i] = false;
    done[i] = true;
  };

  size_t next = 0;
  int64_t observe_until = 0;
  auto deliver = [&](const TraceEvent& e, int64_t now_rel) {
    switch (e.kind) {
      case EventKind::kSend: {
        const trace::RequestSpec& spec = e.spec();
        const size_t i = slot.at(spec.request_id);
        RequestOutcome& o = report.outcomes[i];
        o.completions.resize(static_cast<size_t>(std::max(1, spec.sampling.n_completions)));
        if (spec.sampling.logprobs) {
          for (Completion& c : o.completions) c.logprobs.emplace();
        }
        if (engine.crashed()) {
          terminate(i, OutcomeStatus::kServerError, e.offset_ms,
                    "connection refused: " + engine.crash_reason());
          return;
        }
        sim::SimRequest r;
        r.request_id = spec.request_id;
        r.prompt = trace::SynthesizePrompt(spec, options_.corpus);
        r.adapter = spec.AdapterName();
        r.max_tokens = spec.sampling.max_tokens;
        r.temperature = spec.sampling.temperature;
        r.seed = static_cast<uint64_t>(spec.sampling.seed.value_or(0));
        r.logprobs = spec.sampling.logprobs;
        r.n = spec.sampling.n_completions;
        r.arrival_ms = t0 + e.offset_ms;
        std::string err = engine.Submit(std::move(r));
        if (!err.empty()) {
          terminate(i, OutcomeStatus::kServerError, e.offset_ms, err);
          return;
        }
        inflight[i] = true;
        ++inflight_count;
        return;
      }
      case EventKind::kCancel:
      case EventKind::kDisconnect: {
        auto it = slot.find(e.target());
        if (it == slot.end()) return;
        const size_t i = it->second;
        const bool cancel = e.kind == EventKind::kCancel;
        RequestOutcome& o = report.outcomes[i];
        if (cancel) {
          o.cancel_issued_ms = now_rel;
        } else {
          o.disconnect_issued_ms = now_rel;
        }
        if (!inflight[i]) return;
        if (cancel) {
          engine.Cancel(e.target());
        } else {
          engine.Abort(e.target());
        }
        terminate(i, cancel ? OutcomeStatus::kCancelled : OutcomeStatus::kDisconnected,
                  now_rel, std::nullopt);
        return;
      }
      case EventKind::kWait:
        observe_until = std::max(observe_until, e.offset_ms + e.duration_ms());
        return;
    }
  };

  for (;;) {
    int64_t now_rel = engine.now_ms() - t0;
    while (next < events.size() && events[next]->offset_ms <= now_rel) {
      deliver(*events[next], now_rel);
      ++next;
    }
    if (engine.crashed()) break;
    for (size_t i = 0; i < inflight.size(); ++i) {
      if (inflight[i] &&
          now_rel - report.outcomes[i].dispatch_ms >= options_.request_timeout_ms) {
        engine.Abort(report.outcomes[i].request_id);
        terminate(i, OutcomeStatus::kTimeout, now_rel, "request timed out");
      }
    }
    if (inflight_count == 0 && engine.Idle()) {
      if (next < events.size()) {
        engine.AdvanceTo(t0 + events[next]->offset_ms);
        continue;
      }
      break;
    }
    sim::TickResult tick = engine.Tick();
    for (sim::TokenEmission& tok : tick.tokens) {
      auto it = slot.find(tok.request_id);
      if (it == slot.end() || done[it->second]) continue;
      RequestOutcome& o = report.outcomes[it->second];
      const int64_t at = tok.time_ms - t0;
      Completion& c = o.completions.at(static_cast<size_t>(tok.completion));
      c.tokens.push_back(tok.token);
      c.token_times_ms.push_back(at);
      if (c.logprobs && tok.logprobs) c.logprobs->push_back(std::move(*tok.logprobs));
      if (!o.ttft_ms || at - o.dispatch_ms < *o.ttft_ms) o.ttft_ms = at - o.dispatch_ms;
    }
    for (const sim::Termination& fin : tick.finished) {
      auto it = slot.find(fin.request_id);
      if (it == slot.end() || done[it->second]) continue;
      if (fin.status == OutcomeStatus::kCompleted) {
        terminate(it->second, OutcomeStatus::kCompleted, fin.time_ms - t0, std::nullopt);
      } else if (fin.status == OutcomeStatus::kServerError) {
        terminate(it->second, OutcomeStatus::kServerError, fin.time_ms - t0, fin.detail);
      }
    }
  }

  int64_t end_rel = engine.now_ms() - t0;
  if (engine.crashed()) {
    report.server_crashed = true;
    report.crash_evidence = engine.crash_reason();
    if (engine.crash_time_ms()) report.crash_time_ms = *engine.crash_time_ms() - t0;
    for (size_t i = 0; i < done.size(); ++i) {
      if (done[i]) continue;
      const TraceEvent* send = nullptr;
      for (const TraceEvent* e : events) {
        if (e->is_send() && e->spec().request_id == report.outcomes[i].request_id) send = e;
      }
      if (!inflight[i] && send != nullptr) {
        RequestOutcome& o = report.outcomes[i];
        o.completions.resize(
            static_cast<size_t>(std::max(1, send->spec().sampling.n_completions)));
      }
      terminate(i, OutcomeStatus::kServerError,
                std::max(end_rel, report.outcomes[i].dispatch_ms),
                inflight[i] ? "connection lost" : "connection refused");
    }
  } else {
    // Late control and wait events still count towards observation.
    for (; next < events.size(); ++next) deliver(*events[next], end_rel);
    if (observe_until > end_rel) {
      engine.AdvanceTo(t0 + observe_until);
      end_rel = engine.now_ms() - t0;
    }
  }

  report.wall_clock_span_ms = end_rel;
  report.observed_until_ms = end_rel + options_.kv_grace_ms;
  if (!engine.crashed()) engine.AdvanceTo(t0 + report.observed_until_ms);
  const std::vector<KvEvent>& kv = engine.kv_events();
  for (size_t i = kv_start; i < kv.size(); ++i) {
    KvEvent e = kv[i];
    e.ts -= t0;
    report.kv_events.push_back(std::move(e));
  }
  return report;
}

}  // namespace servefuzz::exec
