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
#ifndef SERVEFUZZ_EXEC_TELEMETRY_H_
#define SERVEFUZZ_EXEC_TELEMETRY_H_

#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "servefuzz/exec/report.h"
#include "servefuzz/trace/trace.h"

namespace servefuzz::exec {

// Per-window feedback series over one execution.
struct WindowSeries {
  int64_t window_ms = 1000;
  // New KV blocks allocated inside each window.
  std::vector<int64_t> kv_allocs;
  // Peak concurrently in-flight Sends inside each window.
  std::vector<int64_t> inflight_sends;

  bool operator==(const WindowSeries&) const = default;
};

struct TelemetrySummary {
  std::optional<double> ttft_p50_ms;
  std::optional<double> ttft_max_ms;
  int64_t max_concurrent_sends = 0;
  // Peak simultaneously held KV blocks (allocs minus frees and evictions).
  int64_t kv_peak_blocks = 0;
  int64_t distinct_adapters = 0;
  int64_t distinct_prompt_lens = 0;
  WindowSeries windows;

  bool operator==(const TelemetrySummary&) const = default;
};

TelemetrySummary Summarize(const trace::TimedTrace& trace,
                           const ExecutionReport& report,
                           int64_t window_ms = 1000);

// Peak of allocs - frees - evicts over the stream.
int64_t PeakHeldBlocks(const std::vector<KvEvent>& events);

nlohmann::json ToJson(const TelemetrySummary& t);

}  // namespace servefuzz::exec

#endif  // SERVEFUZZ_EXEC_TELEMETRY_H_
