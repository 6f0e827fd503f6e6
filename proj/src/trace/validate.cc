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
#include "servefuzz/trace/validate.h"

#include <algorithm>
#include <set>
#include <string>
#include <unordered_set>

namespace servefuzz::trace {
namespace {

bool SamplingValid(const SamplingConfig& s) {
  return s.max_tokens > 0 && s.temperature >= 0.0 && s.n_completions > 0 &&
         (!s.logprobs || *s.logprobs > 0);
}

std::string FreshId(const std::string& base,
                    const std::unordered_set<std::string>& taken) {
  const std::string stem = base.empty() ? "r" : base;
  for (int n = 1;; ++n) {
    std::string candidate = stem + "~" + std::to_string(n);
    if (!taken.contains(candidate)) return candidate;
  }
}

}  // namespace

ValidationReport Validate(const TimedTrace& trace) {
  ValidationReport report;
  auto add = [&](size_t i, ViolationKind kind, std::string message) {
    report.violations.push_back({i, kind, std::move(message)});
  };
  std::unordered_set<std::string> sent;
  int64_t previous = 0;
  for (size_t i = 0; i < trace.events.size(); ++i) {
    const TraceEvent& e = trace.events[i];
    if (e.offset_ms < 0) {
      add(i, ViolationKind::kNegativeOffset, "negative offset");
    }
    if (i > 0 && e.offset_ms < previous) {
      add(i, ViolationKind::kOutOfOrder, "events out of offset order");
    }
    previous = std::max(previous, e.offset_ms);
    switch (e.kind) {
      case EventKind::kSend: {
        const RequestSpec& spec = e.spec();
        if (spec.request_id.empty()) {
          add(i, ViolationKind::kDuplicateTransportId, "empty transport id");
        } else if (!sent.insert(spec.request_id).second) {
          add(i, ViolationKind::kDuplicateTransportId,
              "duplicate transport id '" + spec.request_id + "'");
        }
        if (!spec.shape.Valid()) {
          add(i, ViolationKind::kInvalidShape, "prefix_len exceeds prompt_len");
        }
        if (!SamplingValid(spec.sampling)) {
          add(i, ViolationKind::kInvalidSampling, "invalid sampling config");
        }
        break;
      }
      case EventKind::kCancel:
      case EventKind::kDisconnect:
        if (!sent.contains(e.target())) {
          add(i, ViolationKind::kOrphanedControl,
              "orphaned control event targeting '" + e.target() + "'");
        }
        break;
      case EventKind::kWait:
        if (e.duration_ms() <= 0) {
          add(i, ViolationKind::kNonPositiveWait, "non-positive wait");
        }
        break;
    }
  }
  return report;
}

TimedTrace Repair(const TimedTrace& trace) {
  TimedTrace out = trace;
  for (TraceEvent& e : out.events) {
    e.offset_ms = std::max<int64_t>(e.offset_ms, 0);
    if (e.kind == EventKind::kWait && e.duration_ms() <= 0) {
      e.payload = int64_t{1};
    }
    if (!e.is_send()) continue;
    RequestSpec& spec = e.spec();
    spec.shape.prompt_len = std::max<int64_t>(spec.shape.prompt_len, 0);
    spec.shape.prefix_len = std::clamp<int64_t>(spec.shape.prefix_len, 0,
                                                spec.shape.prompt_len);
    SamplingConfig& s = spec.sampling;
    s.max_tokens = std::max<int64_t>(s.max_tokens, 1);
    s.temperature = std::max(s.temperature, 0.0);
    s.n_completions = std::max(s.n_completions, 1);
    if (s.logprobs && *s.logprobs <= 0) s.logprobs.reset();
  }
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const TraceEvent& a, const TraceEvent& b) {
                     return a.offset_ms < b.offset_ms;
                   });

  std::unordered_set<std::string> taken;
  for (const TraceEvent& e : out.events) {
    if (e.is_send()) taken.insert(e.spec().request_id);
  }
  std::unordered_set<std::string> sent;
  std::vector<TraceEvent> kept;
  kept.reserve(out.events.size());
  for (TraceEvent& e : out.events) {
    if (e.is_send()) {
      std::string& id = e.spec().request_id;
      if (id.empty() || sent.contains(id)) {
        id = FreshId(id, taken);
        taken.insert(id);
      }
      sent.insert(id);
    } else if (e.is_control() && !sent.contains(e.target())) {
      continue;
    }
    kept.push_back(std::move(e));
  }
  out.events = std::move(kept);
  return out;
}

}  // namespace servefuzz::trace
