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
#ifndef SERVEFUZZ_MUTATION_MUTATION_H_
#define SERVEFUZZ_MUTATION_MUTATION_H_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "servefuzz/exec/telemetry.h"
#include "servefuzz/trace/trace.h"
#include "servefuzz/util/rng.h"

namespace servefuzz::mutation {

enum class MutationKind {
  kTimingJitter,
  kTimingCollapse,
  kEventInsert,
  kEventDelete,
  kEventModify,
  kSplice,
  kDirectedSplice,
};

std::string_view MutationKindName(MutationKind kind);

struct SeedProfile {
  int n_requests = 8;
  std::vector<trace::PromptShape> shape_palette = {{0, 64}};
  std::vector<std::string> adapter_palette = {std::string(trace::kBaseAdapter)};
  // Sends are clustered in [burst_start_ms, burst_start_ms + burst_window_ms].
  int64_t burst_window_ms = 6;
  int64_t burst_start_ms = 0;
  // Large BASE requests at offset 0, using the longest palette shape.
  int kv_filler_count = 0;
  int64_t filler_max_tokens = 16;
  // When positive, prompt families are drawn from this many shared ids.
  int family_pool = 0;
  int64_t max_tokens = 16;

  bool Valid() const;
};

// Value choices used when inserting or modifying requests.
struct MutationPalette {
  std::vector<std::string> adapters = {std::string(trace::kBaseAdapter)};
  std::vector<trace::PromptShape> shapes = {{0, 64}};
  std::vector<int64_t> max_tokens = {1, 4, 16, 32, 64};
  std::vector<int> n_completions = {1, 2, 4, 8};
  // Upper bound for placing a Cancel/Disconnect after its Send.
  int64_t control_window_ms = 200;
  int64_t max_wait_ms = 1000;
  // Inserted Sends land this close to an existing event.
  int64_t insert_jitter_ms = 6;
};

MutationPalette PaletteFromProfile(const SeedProfile& profile);

trace::TimedTrace GenerateSeed(const SeedProfile& profile, uint64_t rng_seed);

// Uniform jitter in [-J, +J] ms with J = intensity * 1000, clamped at zero.
// The event multiset is preserved; control events are held at or after
// their Send.
trace::TimedTrace MutateTiming(const trace::TimedTrace& trace,
                               uint64_t rng_seed, double intensity);

// Moves a random group of Sends onto one offset so they co-batch.
trace::TimedTrace CollapseTiming(const trace::TimedTrace& trace,
                                 uint64_t rng_seed);

// One insert, delete or modify, followed by repair.
trace::TimedTrace MutateEvents(const trace::TimedTrace& trace,
                               uint64_t rng_seed,
                               const MutationPalette& palette);

trace::TimedTrace InsertEvent(const trace::TimedTrace& trace, Rng& rng,
                              const MutationPalette& palette);
// Removes event index; a Send takes its Cancel/Disconnect events with it.
trace::TimedTrace DeleteEvent(const trace::TimedTrace& trace, size_t index);
// Changes one RequestSpec field of the Send at event index. The prompt
// family is never touched.
trace::TimedTrace ModifySend(const trace::TimedTrace& trace, size_t index,
                             Rng& rng, const MutationPalette& palette);

enum class CutMode { kRandom, kMidpoint };

struct CutPolicy {
  CutMode mode = CutMode::kRandom;
};

// Prefix of a followed by a suffix of b, rebased to a's epoch. Ids present
// in both parents are refreshed; orphaned control events are dropped.
trace::TimedTrace Splice(const trace::TimedTrace& a, const trace::TimedTrace& b,
                         const CutPolicy& cut, uint64_t rng_seed);

struct DirectedSpliceOptions {
  int64_t gap_ms = 50;
};

// Places warm's busiest KV-allocation window strictly before pressure's
// peak in-flight window. Without feedback for both parents this falls back
// to an undirected splice and says so in the lineage.
trace::TimedTrace DirectedSplice(const trace::TimedTrace& warm,
                                 const trace::TimedTrace& pressure,
                                 const exec::TelemetrySummary* warm_feedback,
                                 const exec::TelemetrySummary* pressure_feedback,
                                 const DirectedSpliceOptions& options,
                                 uint64_t rng_seed);

}  // namespace servefuzz::mutation

#endif  // SERVEFUZZ_MUTATION_MUTATION_H_
