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
#ifndef SERVEFUZZ_TESTS_SUPPORT_F3_TEMPLATES_H_
#define SERVEFUZZ_TESTS_SUPPORT_F3_TEMPLATES_H_

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "servefuzz/sim/engine.h"
#include "servefuzz/trace/trace.h"
#include "servefuzz/util/rng.h"

namespace servefuzz::testing {

// A schedule that satisfies exactly the adapter-drift trigger conditions in
// subset (bits of sim::F3Condition) and keeps the others false throughout.
inline trace::TimedTrace F3Template(unsigned subset, uint64_t seed) {
  const bool occupancy = subset & sim::kF3Occupancy;
  const bool lens = subset & sim::kF3PromptLens;
  const bool adapters = subset & sim::kF3Adapters;
  const bool burst = subset & sim::kF3LoraBurst;
  Rng rng(seed);
  trace::TimedTrace t;
  t.trace_id = "f3-template-" + std::to_string(subset) + "-" + std::to_string(seed);
  const int64_t long_len = 2000;
  const int64_t fixed_len = occupancy ? long_len : 64;
  int next = 0;
  auto send = [&](int64_t offset, int64_t len, const std::string& adapter, int64_t max_tokens) {
    trace::RequestSpec s;
    s.request_id = "r" + std::to_string(next++);
    s.shape = {0, len};
    if (adapter != "BASE") s.adapter = adapter;
    s.sampling.max_tokens = max_tokens;
    s.sampling.seed = rng.UniformInt(0, 1 << 30);
    t.events.push_back(trace::TraceEvent::Send(offset, s));
  };
  // 13 long BASE requests hold about 82% of the KV pool.
  if (occupancy) {
    for (int i = 0; i < 13; ++i) send(0, long_len, "BASE", 64);
  } else {
    send(0, fixed_len, "BASE", 64);
  }
  const std::vector<int64_t> varied = {64, 96, 128, 160};
  auto len_at = [&](size_t i) { return lens ? varied[i % varied.size()] : fixed_len; };
  if (burst) {
    // Six arrivals of an unloaded adapter inside the burst window.
    const int64_t start = 20 + rng.UniformInt(0, 3);
    for (size_t i = 0; i < 6; ++i) {
      send(start + static_cast<int64_t>(i), len_at(i), "lora_a", 16);
    }
  } else {
    // Same adapter, never six within the window.
    for (size_t i = 0; i < 6; ++i) {
      send(20 + 12 * static_cast<int64_t>(i), len_at(i), "lora_a", 16);
    }
  }
  if (adapters) {
    send(22 + rng.UniformInt(0, 4), len_at(1), "lora_b", 16);
  }
  trace::TimedTrace sorted = t;
  std::stable_sort(sorted.events.begin(), sorted.events.end(),
                   [](const trace::TraceEvent& a, const trace::TraceEvent& b) {
                     return a.offset_ms < b.offset_ms;
                   });
  return sorted;
}

}  // namespace servefuzz::testing

#endif  // SERVEFUZZ_TESTS_SUPPORT_F3_TEMPLATES_H_
