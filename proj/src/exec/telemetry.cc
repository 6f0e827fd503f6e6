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
#include "servefuzz/exec/telemetry.h"

#include <algorithm>
#include <set>
#include <string>

namespace servefuzz::exec {
namespace {

struct Interval {
  int64_t begin;
  int64_t end;
};

int64_t ConcurrencyAt(const std::vector<Interval>& intervals, int64_t t) {
  int64_t n = 0;
  for (const Interval& iv : intervals) {
    if (iv.begin <= t && t < iv.end) ++n;
  }
  return n;
}

}  // namespace

int64_t PeakHeldBlocks(const std::vector<KvEvent>& events) {
  int64_t held = 0;
  int64_t peak = 0;
  for (const KvEvent& e : events) {
    if (e.kind == KvEventKind::kAlloc) {
      ++held;
    } else if (e.kind == KvEventKind::kFree || e.kind == KvEventKind::kEvict) {
      --held;
    }
    peak = std::max(peak, held);
  }
  return peak;
}

TelemetrySummary Summarize(const trace::TimedTrace& trace,
                           const ExecutionReport& report, int64_t window_ms) {
  TelemetrySummary s;
  std::vector<double> ttfts;
  std::vector<Interval> intervals;
  for (const RequestOutcome& o : report.outcomes) {
    if (o.ttft_ms) ttfts.push_back(static_cast<double>(*o.ttft_ms));
    // Requests rejected at dispatch never occupied the engine.
    if (o.total_ms > 0) {
      intervals.push_back({o.dispatch_ms, o.terminal_ms()});
    }
  }
  if (!ttfts.empty()) {
    std::sort(ttfts.begin(), ttfts.end());
    s.ttft_p50_ms = ttfts[(ttfts.size() - 1) / 2];
    s.ttft_max_ms = ttfts.back();
  }
  std::vector<int64_t> boundaries;
  for (const Interval& iv : intervals) boundaries.push_back(iv.begin);
  for (int64_t b : boundaries) {
    s.max_concurrent_sends =
        std::max(s.max_concurrent_sends, ConcurrencyAt(intervals, b));
  }
  s.kv_peak_blocks = PeakHeldBlocks(report.kv_events);

  std::set<std::string> adapters;
  std::set<int64_t> lens;
  for (const trace::RequestSpec* spec : trace.Sends()) {
    lens.insert(spec->shape.prompt_len);
    const RequestOutcome* o = report.Find(spec->request_id);
    if (o && (o->status != OutcomeStatus::kServerError || o->ttft_ms)) {
      adapters.insert(std::string(spec->AdapterName()));
    }
  }
  s.distinct_adapters = static_cast<int64_t>(adapters.size());
  s.distinct_prompt_lens = static_cast<int64_t>(lens.size());

  window_ms = std::max<int64_t>(window_ms, 1);
  s.windows.window_ms = window_ms;
  int64_t end = report.observed_until_ms;
  for (const Interval& iv : intervals) end = std::max(end, iv.end);
  for (const KvEvent& e : report.kv_events) end = std::max(end, e.ts + 1);
  const int64_t n_windows = std::clamp<int64_t>((end + window_ms - 1) / window_ms,
                                                1, 4096);
  s.windows.kv_allocs.assign(static_cast<size_t>(n_windows), 0);
  s.windows.inflight_sends.assign(static_cast<size_t>(n_windows), 0);
  for (const KvEvent& e : report.kv_events) {
    if (e.kind != KvEventKind::kAlloc) continue;
    const int64_t w = std::min(e.ts / window_ms, n_windows - 1);
    ++s.windows.kv_allocs[static_cast<size_t>(std::max<int64_t>(w, 0))];
  }
  for (int64_t w = 0; w < n_windows; ++w) {
    const int64_t lo = w * window_ms;
    const int64_t hi = lo + window_ms;
    int64_t peak = ConcurrencyAt(intervals, lo);
    for (int64_t b : boundaries) {
      if (b >= lo && b < hi) peak = std::max(peak, ConcurrencyAt(intervals, b));
    }
    s.windows.inflight_sends[static_cast<size_t>(w)] = peak;
  }
  return s;
}

nlohmann::json ToJson(const TelemetrySummary& t) {
  nlohmann::json j = {{"max_concurrent_sends", t.max_concurrent_sends},
                      {"kv_peak_blocks", t.kv_peak_blocks},
                      {"distinct_adapters", t.distinct_adapters},
                      {"distinct_prompt_lens", t.distinct_prompt_lens},
                      {"window_ms", t.windows.window_ms},
                      {"kv_allocs", t.windows.kv_allocs},
                      {"inflight_sends", t.windows.inflight_sends}};
  if (t.ttft_p50_ms) j["ttft_p50_ms"] = *t.ttft_p50_ms;
  if (t.ttft_max_ms) j["ttft_max_ms"] = *t.ttft_max_ms;
  return j;
}

}  // namespace servefuzz::exec
