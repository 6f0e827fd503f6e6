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
#include "servefuzz/mutation/mutation.h"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "servefuzz/trace/validate.h"
#include "servefuzz/util/hash.h"

namespace servefuzz::mutation {
namespace {

using trace::EventKind;
using trace::RequestSpec;
using trace::TimedTrace;
using trace::TraceEvent;

constexpr size_t kLineageDepth = 12;

std::optional<std::string> AdapterField(const std::string& name) {
  if (name == trace::kBaseAdapter) return std::nullopt;
  return name;
}

std::string ChildId(std::initializer_list<const TimedTrace*> parents,
                    MutationKind kind, uint64_t rng_seed) {
  uint64_t h = HashString(MutationKindName(kind));
  for (const TimedTrace* p : parents) h = HashCombine(h, HashString(p->trace_id));
  h = HashCombine(h, rng_seed);
  return "m-" + HexDigest(h).substr(0, 12);
}

void RecordLineage(TimedTrace& child,
                   std::initializer_list<const TimedTrace*> parents,
                   MutationKind kind, uint64_t rng_seed) {
  const TimedTrace& first = **parents.begin();
  std::string parent_ids;
  for (const TimedTrace* p : parents) {
    if (!parent_ids.empty()) parent_ids += ",";
    parent_ids += p->trace_id;
  }
  std::vector<std::string> chain;
  if (auto it = first.metadata.find("lineage"); it != first.metadata.end()) {
    size_t pos = 0;
    const std::string& s = it->second;
    while (pos <= s.size() && !s.empty()) {
      size_t end = s.find(',', pos);
      if (end == std::string::npos) end = s.size();
      chain.push_back(s.substr(pos, end - pos));
      pos = end + 1;
    }
  }
  chain.emplace_back(MutationKindName(kind));
  if (chain.size() > kLineageDepth) {
    chain.erase(chain.begin(), chain.end() - kLineageDepth);
  }
  std::string lineage;
  for (const std::string& k : chain) {
    if (!lineage.empty()) lineage += ",";
    lineage += k;
  }
  child.trace_id = ChildId(parents, kind, rng_seed);
  child.metadata["parents"] = parent_ids;
  child.metadata["mutation"] = std::string(MutationKindName(kind));
  child.metadata["lineage"] = lineage;
}

std::unordered_set<std::string> SendIds(const TimedTrace& t) {
  std::unordered_set<std::string> ids;
  for (const TraceEvent& e : t.events) {
    if (e.is_send()) ids.insert(e.spec().request_id);
  }
  return ids;
}

std::string FreshId(Rng& rng, std::unordered_set<std::string>& taken) {
  for (;;) {
    std::string id = "x" + HexDigest(rng.Next()).substr(0, 8);
    if (taken.insert(id).second) return id;
  }
}

void SortByOffset(std::vector<TraceEvent>& events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const TraceEvent& a, const TraceEvent& b) {
                     return a.offset_ms < b.offset_ms;
                   });
}

// Keeps every control event at or after its Send.
void ClampControls(std::vector<TraceEvent>& events) {
  std::unordered_map<std::string, int64_t> send_offset;
  for (const TraceEvent& e : events) {
    if (e.is_send()) send_offset[e.spec().request_id] = e.offset_ms;
  }
  for (TraceEvent& e : events) {
    if (!e.is_control()) continue;
    auto it = send_offset.find(e.target());
    if (it != send_offset.end()) e.offset_ms = std::max(e.offset_ms, it->second);
  }
}

// Renames the Sends of a segment whose id is in `collisions`, and retargets
// that segment's control events.
void RefreshIds(std::vector<TraceEvent>& segment,
                const std::unordered_set<std::string>& collisions, Rng& rng,
                std::unordered_set<std::string>& taken) {
  std::unordered_map<std::string, std::string> renamed;
  for (TraceEvent& e : segment) {
    if (e.is_send() && collisions.contains(e.spec().request_id)) {
      std::string fresh = FreshId(rng, taken);
      renamed[e.spec().request_id] = fresh;
      e.spec().request_id = std::move(fresh);
    } else if (e.is_control()) {
      auto it = renamed.find(e.target());
      if (it != renamed.end()) e.target() = it->second;
    }
  }
}

RequestSpec SpecFromPalette(Rng& rng, const MutationPalette& palette,
                            std::string request_id) {
  RequestSpec spec;
  spec.request_id = std::move(request_id);
  spec.shape = rng.Pick(palette.shapes);
  spec.adapter = AdapterField(rng.Pick(palette.adapters));
  spec.sampling.max_tokens = rng.Pick(palette.max_tokens);
  spec.sampling.seed = rng.UniformInt(0, (int64_t{1} << 31) - 1);
  return spec;
}

TimedTrace Spliced(const TimedTrace& a, const TimedTrace& b,
                   std::vector<TraceEvent> prefix,
                   std::vector<TraceEvent> suffix, Rng& rng) {
  std::unordered_set<std::string> ids_a = SendIds(a);
  std::unordered_set<std::string> ids_b = SendIds(b);
  std::unordered_set<std::string> collisions;
  for (const std::string& id : ids_a) {
    if (ids_b.contains(id)) collisions.insert(id);
  }
  std::unordered_set<std::string> taken = ids_a;
  taken.insert(ids_b.begin(), ids_b.end());
  RefreshIds(prefix, collisions, rng, taken);
  RefreshIds(suffix, collisions, rng, taken);

  TimedTrace child;
  child.base_time = a.base_time;
  child.metadata = a.metadata;
  child.events = std::move(prefix);
  for (TraceEvent& e : suffix) child.events.push_back(std::move(e));
  return trace::Repair(child);
}

}  // namespace

std::string_view MutationKindName(MutationKind kind) {
  switch (kind) {
    case MutationKind::kTimingJitter:
      return "timing_jitter";
    case MutationKind::kTimingCollapse:
      return "timing_collapse";
    case MutationKind::kEventInsert:
      return "event_insert";
    case MutationKind::kEventDelete:
      return "event_delete";
    case MutationKind::kEventModify:
      return "event_modify";
    case MutationKind::kSplice:
      return "splice";
    case MutationKind::kDirectedSplice:
      return "directed_splice";
  }
  return "timing_jitter";
}

bool SeedProfile::Valid() const {
  if (shape_palette.empty() || adapter_palette.empty()) return false;
  if (burst_window_ms < 0 || n_requests < 0 || kv_filler_count < 0) return false;
  for (const trace::PromptShape& s : shape_palette) {
    if (!s.Valid()) return false;
  }
  return max_tokens > 0 && filler_max_tokens > 0;
}

MutationPalette PaletteFromProfile(const SeedProfile& profile) {
  MutationPalette palette;
  palette.adapters = profile.adapter_palette;
  palette.shapes = profile.shape_palette;
  return palette;
}

TimedTrace GenerateSeed(const SeedProfile& profile, uint64_t rng_seed) {
  Rng rng(HashCombine(rng_seed, HashString("seed")));
  TimedTrace t;
  t.trace_id = "seed-" + HexDigest(rng_seed).substr(4);
  t.metadata["mutation"] = "seed";
  t.metadata["lineage"] = "seed";

  const trace::PromptShape filler_shape = *std::max_element(
      profile.shape_palette.begin(), profile.shape_palette.end(),
      [](const trace::PromptShape& x, const trace::PromptShape& y) {
        return x.prompt_len < y.prompt_len;
      });
  for (int i = 0; i < profile.kv_filler_count; ++i) {
    RequestSpec spec;
    spec.request_id = "f" + std::to_string(i);
    spec.shape = filler_shape;
    spec.sampling.max_tokens = profile.filler_max_tokens;
    spec.sampling.seed = rng.UniformInt(0, (int64_t{1} << 31) - 1);
    t.events.push_back(TraceEvent::Send(0, std::move(spec)));
  }

  // Distinct offsets inside the window whenever the window has room.
  const int64_t slots = profile.burst_window_ms + 1;
  std::vector<int64_t> offsets;
  if (profile.n_requests <= slots) {
    std::vector<int64_t> pool(static_cast<size_t>(slots));
    for (int64_t i = 0; i < slots; ++i) pool[static_cast<size_t>(i)] = i;
    for (int i = 0; i < profile.n_requests; ++i) {
      const size_t j = static_cast<size_t>(
          rng.UniformInt(i, static_cast<int64_t>(pool.size()) - 1));
      std::swap(pool[static_cast<size_t>(i)], pool[j]);
      offsets.push_back(pool[static_cast<size_t>(i)]);
    }
  } else {
    for (int i = 0; i < profile.n_requests; ++i) {
      offsets.push_back(rng.UniformInt(0, profile.burst_window_ms));
    }
  }
  std::sort(offsets.begin(), offsets.end());
  for (int i = 0; i < profile.n_requests; ++i) {
    RequestSpec spec;
    spec.request_id = "s" + std::to_string(i);
    spec.shape = rng.Pick(profile.shape_palette);
    spec.adapter = AdapterField(rng.Pick(profile.adapter_palette));
    if (profile.family_pool > 0) {
      spec.prompt_family_id =
          "fam" + std::to_string(rng.UniformInt(0, profile.family_pool - 1));
    }
    spec.sampling.max_tokens = profile.max_tokens;
    spec.sampling.seed = rng.UniformInt(0, (int64_t{1} << 31) - 1);
    t.events.push_back(TraceEvent::Send(
        profile.burst_start_ms + offsets[static_cast<size_t>(i)],
        std::move(spec)));
  }
  SortByOffset(t.events);
  return t;
}

TimedTrace MutateTiming(const TimedTrace& trace, uint64_t rng_seed,
                        double intensity) {
  const int64_t jitter =
      static_cast<int64_t>(std::clamp(intensity, 0.0, 1.0) * 1000.0);
  if (jitter == 0) return trace;
  Rng rng(HashCombine(rng_seed, HashString("jitter")));
  TimedTrace child = trace;
  for (TraceEvent& e : child.events) {
    e.offset_ms = std::max<int64_t>(0, e.offset_ms + rng.UniformInt(-jitter, jitter));
  }
  ClampControls(child.events);
  SortByOffset(child.events);
  RecordLineage(child, {&trace}, MutationKind::kTimingJitter, rng_seed);
  return child;
}

TimedTrace CollapseTiming(const TimedTrace& trace, uint64_t rng_seed) {
  Rng rng(HashCombine(rng_seed, HashString("collapse")));
  TimedTrace child = trace;
  std::vector<size_t> sends;
  for (size_t i = 0; i < child.events.size(); ++i) {
    if (child.events[i].is_send()) sends.push_back(i);
  }
  if (sends.size() >= 2) {
    const int64_t group = rng.UniformInt(
        2, std::min<int64_t>(8, static_cast<int64_t>(sends.size())));
    for (int64_t i = 0; i < group; ++i) {
      const size_t j = static_cast<size_t>(
          rng.UniformInt(i, static_cast<int64_t>(sends.size()) - 1));
      std::swap(sends[static_cast<size_t>(i)], sends[j]);
    }
    sends.resize(static_cast<size_t>(group));
    const int64_t target = child.events[rng.Pick(sends)].offset_ms;
    for (size_t i : sends) child.events[i].offset_ms = target;
    ClampControls(child.events);
    SortByOffset(child.events);
  }
  RecordLineage(child, {&trace}, MutationKind::kTimingCollapse, rng_seed);
  return child;
}

TimedTrace InsertEvent(const TimedTrace& trace, Rng& rng,
                       const MutationPalette& palette) {
  TimedTrace child = trace;
  std::vector<const RequestSpec*> sends = trace.Sends();
  std::unordered_set<std::string> taken = SendIds(trace);
  const double roll = rng.UniformReal();
  if (sends.empty() || roll < 0.55) {
    RequestSpec spec;
    int64_t offset = 0;
    if (!sends.empty()) {
      spec = *rng.Pick(sends);
      spec.request_id = FreshId(rng, taken);
      if (rng.Bernoulli(0.5)) spec.adapter = AdapterField(rng.Pick(palette.adapters));
      const TraceEvent& anchor = rng.Pick(trace.events);
      offset = anchor.offset_ms + rng.UniformInt(0, palette.insert_jitter_ms);
    } else {
      spec = SpecFromPalette(rng, palette, FreshId(rng, taken));
      if (!trace.events.empty()) {
        offset = rng.UniformInt(0, trace.EndOffset());
      }
    }
    child.events.push_back(TraceEvent::Send(offset, std::move(spec)));
  } else if (roll < 0.85) {
    const RequestSpec* target = rng.Pick(sends);
    int64_t send_offset = 0;
    for (const TraceEvent& e : trace.events) {
      if (e.is_send() && &e.spec() == target) send_offset = e.offset_ms;
    }
    const int64_t offset =
        send_offset + rng.UniformInt(0, palette.control_window_ms);
    if (roll < 0.75) {
      child.events.push_back(TraceEvent::Cancel(offset, target->request_id));
    } else {
      child.events.push_back(TraceEvent::Disconnect(offset, target->request_id));
    }
  } else {
    const int64_t offset = rng.UniformInt(0, std::max<int64_t>(trace.EndOffset(), 0));
    child.events.push_back(
        TraceEvent::Wait(offset, rng.UniformInt(1, palette.max_wait_ms)));
  }
  SortByOffset(child.events);
  return trace::Repair(child);
}

TimedTrace DeleteEvent(const TimedTrace& trace, size_t index) {
  TimedTrace child = trace;
  if (index >= child.events.size()) return child;
  const TraceEvent removed = child.events[index];
  child.events.erase(child.events.begin() + static_cast<ptrdiff_t>(index));
  if (removed.is_send()) {
    const std::string& id = removed.spec().request_id;
    std::erase_if(child.events, [&](const TraceEvent& e) {
      return e.is_control() && e.target() == id;
    });
  }
  return child;
}

TimedTrace ModifySend(const TimedTrace& trace, size_t index, Rng& rng,
                      const MutationPalette& palette) {
  TimedTrace child = trace;
  if (index >= child.events.size() || !child.events[index].is_send()) {
    return child;
  }
  RequestSpec& spec = child.events[index].spec();
  switch (rng.UniformInt(0, 7)) {
    case 0:
    case 1:
      spec.adapter = AdapterField(rng.Pick(palette.adapters));
      break;
    case 2:
    case 3:
      spec.shape = rng.Pick(palette.shapes);
      break;
    case 4:
      spec.sampling.max_tokens = rng.Pick(palette.max_tokens);
      break;
    case 5:
      spec.sampling.n_completions = rng.Pick(palette.n_completions);
      break;
    case 6:
      if (spec.sampling.logprobs) {
        spec.sampling.logprobs.reset();
      } else {
        spec.sampling.logprobs = 5;
      }
      break;
    default:
      spec.stream = !spec.stream;
      break;
  }
  return child;
}

TimedTrace MutateEvents(const TimedTrace& trace, uint64_t rng_seed,
                        const MutationPalette& palette) {
  Rng rng(HashCombine(rng_seed, HashString("events")));
  TimedTrace child;
  MutationKind kind;
  const double roll = rng.UniformReal();
  std::vector<size_t> sends;
  for (size_t i = 0; i < trace.events.size(); ++i) {
    if (trace.events[i].is_send()) sends.push_back(i);
  }
  if (trace.events.empty() || roll < 0.4) {
    kind = MutationKind::kEventInsert;
    child = InsertEvent(trace, rng, palette);
  } else if (roll < 0.65) {
    kind = MutationKind::kEventDelete;
    child = DeleteEvent(trace, rng.Index(trace.events.size()));
  } else if (!sends.empty()) {
    kind = MutationKind::kEventModify;
    child = ModifySend(trace, rng.Pick(sends), rng, palette);
  } else {
    kind = MutationKind::kEventInsert;
    child = InsertEvent(trace, rng, palette);
  }
  child = trace::Repair(child);
  RecordLineage(child, {&trace}, kind, rng_seed);
  return child;
}

TimedTrace Splice(const TimedTrace& a, const TimedTrace& b,
                  const CutPolicy& cut, uint64_t rng_seed) {
  Rng rng(HashCombine(rng_seed, HashString("splice")));
  const size_t na = a.events.size();
  const size_t nb = b.events.size();
  size_t cut_a = na;
  size_t cut_b = 0;
  if (nb > 0 && na > 0) {
    if (cut.mode == CutMode::kMidpoint) {
      cut_a = (na + 1) / 2;
      cut_b = nb / 2;
    } else {
      cut_a = static_cast<size_t>(rng.UniformInt(1, static_cast<int64_t>(na)));
      cut_b = static_cast<size_t>(rng.UniformInt(0, static_cast<int64_t>(nb) - 1));
    }
  }
  std::vector<TraceEvent> prefix(a.events.begin(),
                                 a.events.begin() + static_cast<ptrdiff_t>(cut_a));
  std::vector<TraceEvent> suffix(b.events.begin() + static_cast<ptrdiff_t>(cut_b),
                                 b.events.end());
  int64_t join_at = 0;
  if (!prefix.empty()) {
    const int64_t epoch = prefix.front().offset_ms;
    for (TraceEvent& e : prefix) e.offset_ms -= epoch;
    join_at = prefix.back().offset_ms;
  }
  if (!suffix.empty()) {
    const int64_t start = suffix.front().offset_ms;
    for (TraceEvent& e : suffix) e.offset_ms = e.offset_ms - start + join_at;
  }
  TimedTrace child = Spliced(a, b, std::move(prefix), std::move(suffix), rng);
  RecordLineage(child, {&a, &b}, MutationKind::kSplice, rng_seed);
  child.metadata["splice_mode"] = "undirected";
  return child;
}

TimedTrace DirectedSplice(const TimedTrace& warm, const TimedTrace& pressure,
                          const exec::TelemetrySummary* warm_feedback,
                          const exec::TelemetrySummary* pressure_feedback,
                          const DirectedSpliceOptions& options,
                          uint64_t rng_seed) {
  if (warm_feedback == nullptr || pressure_feedback == nullptr ||
      warm_feedback->windows.kv_allocs.empty() ||
      pressure_feedback->windows.inflight_sends.empty()) {
    TimedTrace child = Splice(warm, pressure, CutPolicy{}, rng_seed);
    RecordLineage(child, {&warm, &pressure}, MutationKind::kDirectedSplice,
                  rng_seed);
    child.metadata["splice_mode"] = "undirected-fallback";
    return child;
  }
  Rng rng(HashCombine(rng_seed, HashString("directed")));
  const std::vector<int64_t>& allocs = warm_feedback->windows.kv_allocs;
  const std::vector<int64_t>& inflight = pressure_feedback->windows.inflight_sends;
  const size_t warm_window = static_cast<size_t>(
      std::max_element(allocs.begin(), allocs.end()) - allocs.begin());
  const size_t pressure_window = static_cast<size_t>(
      std::max_element(inflight.begin(), inflight.end()) - inflight.begin());
  const int64_t warm_end =
      static_cast<int64_t>(warm_window + 1) * warm_feedback->windows.window_ms;
  const int64_t pressure_start = static_cast<int64_t>(pressure_window) *
                                 pressure_feedback->windows.window_ms;
  const int64_t shift = warm_end + options.gap_ms - pressure_start;

  std::vector<TraceEvent> prefix;
  for (const TraceEvent& e : warm.events) {
    if (e.offset_ms < warm_end) prefix.push_back(e);
  }
  std::vector<TraceEvent> suffix;
  for (const TraceEvent& e : pressure.events) {
    if (e.offset_ms >= pressure_start) {
      suffix.push_back(e);
      suffix.back().offset_ms += shift;
    }
  }
  TimedTrace child = Spliced(warm, pressure, std::move(prefix), std::move(suffix), rng);
  RecordLineage(child, {&warm, &pressure}, MutationKind::kDirectedSplice, rng_seed);
  child.metadata["splice_mode"] = "directed";
  child.metadata["warm_window_end_ms"] = std::to_string(warm_end);
  child.metadata["pressure_segment_start_ms"] = std::to_string(warm_end + options.gap_ms);
  return child;
}

}  // namespace servefuzz::mutation
