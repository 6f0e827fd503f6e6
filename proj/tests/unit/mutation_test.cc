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
#include <map>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "random_trace.h"
#include "servefuzz/mutation/mutation.h"
#include "servefuzz/trace/trace_io.h"
#include "servefuzz/trace/validate.h"

namespace servefuzz::mutation {
namespace {

using trace::TimedTrace;
using trace::TraceEvent;

// Event payloads with offsets erased, as a sortable multiset.
std::vector<std::string> Payloads(const TimedTrace& t) {
  std::vector<std::string> out;
  for (TraceEvent e : t.events) {
    e.offset_ms = 0;
    TimedTrace one;
    one.events = {e};
    out.push_back(trace::ToJson(one)["events"].dump());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void ExpectControlsAfterSends(const TimedTrace& t) {
  std::map<std::string, int64_t> sent;
  for (const TraceEvent& e : t.events) {
    if (e.is_send()) sent[e.spec().request_id] = e.offset_ms;
    if (e.is_control()) {
      ASSERT_TRUE(sent.contains(e.target())) << e.target();
      EXPECT_GE(e.offset_ms, sent[e.target()]);
    }
  }
}

SeedProfile LoraProfile() {
  SeedProfile p;
  p.n_requests = 12;
  p.shape_palette = {{0, 48}, {16, 96}, {0, 256}};
  p.adapter_palette = {"BASE", "lora_a", "lora_b"};
  p.kv_filler_count = 2;
  return p;
}

TEST(SeedTest, DeterministicAndValid) {
  const SeedProfile p = LoraProfile();
  EXPECT_EQ(GenerateSeed(p, 5), GenerateSeed(p, 5));
  EXPECT_NE(GenerateSeed(p, 5).events, GenerateSeed(p, 6).events);
  const TimedTrace t = GenerateSeed(p, 5);
  EXPECT_TRUE(trace::Validate(t).ok());
  EXPECT_EQ(t.Sends().size(), 14u);
  for (const TraceEvent& e : t.events) {
    EXPECT_LE(e.offset_ms, p.burst_start_ms + p.burst_window_ms);
  }
}

TEST(SeedTest, FamilyPoolAssignsSharedFamilies) {
  SeedProfile p;
  p.n_requests = 10;
  p.family_pool = 2;
  const TimedTrace t = GenerateSeed(p, 1);
  for (const auto* s : t.Sends()) {
    ASSERT_TRUE(s->prompt_family_id.has_value());
    EXPECT_TRUE(*s->prompt_family_id == "fam0" || *s->prompt_family_id == "fam1");
  }
}

TEST(TimingJitterTest, ZeroIntensityIsIdentity) {
  const TimedTrace t = GenerateSeed(LoraProfile(), 3);
  EXPECT_EQ(MutateTiming(t, 77, 0.0), t);
}

TEST(TimingJitterTest, PreservesEventMultisetAndBounds) {
  Rng rng(21);
  for (int i = 0; i < 300; ++i) {
    const TimedTrace t = trace::Repair(servefuzz::testing::RandomTrace(rng));
    const double intensity = rng.Pick(std::vector<double>{0.002, 0.01, 0.05});
    const TimedTrace m = MutateTiming(t, rng.Next(), intensity);
    EXPECT_EQ(Payloads(m), Payloads(t));
    EXPECT_TRUE(trace::Validate(m).ok());
    ExpectControlsAfterSends(m);
    // No event moves later than J ms beyond the original latest event, except
    // a control held at its Send, which is itself bounded the same way.
    const int64_t j = static_cast<int64_t>(intensity * 1000);
    const int64_t latest = t.events.empty() ? 0 : t.events.back().offset_ms;
    for (const TraceEvent& e : m.events) EXPECT_LE(e.offset_ms, latest + j);
  }
}

TEST(TimingCollapseTest, AlignsAGroupOfSends) {
  SeedProfile p;
  p.n_requests = 6;
  p.burst_window_ms = 200;
  const TimedTrace t = GenerateSeed(p, 9);
  const TimedTrace m = CollapseTiming(t, 4);
  std::map<int64_t, int> per_offset;
  for (const TraceEvent& e : m.events) ++per_offset[e.offset_ms];
  int largest = 0;
  for (const auto& [offset, n] : per_offset) largest = std::max(largest, n);
  EXPECT_GE(largest, 2);
  EXPECT_EQ(Payloads(m), Payloads(t));
}

TEST(EventMutationTest, DeleteSendRemovesItsControls) {
  trace::RequestSpec s;
  s.request_id = "a";
  TimedTrace t;
  t.events = {TraceEvent::Send(0, s), TraceEvent::Cancel(3, "a"),
              TraceEvent::Disconnect(4, "a"), TraceEvent::Wait(5, 2)};
  const TimedTrace m = DeleteEvent(t, 0);
  ASSERT_EQ(m.events.size(), 1u);
  EXPECT_EQ(m.events[0].kind, trace::EventKind::kWait);
}

TEST(EventMutationTest, InsertAddsExactlyOneEvent) {
  const TimedTrace t = GenerateSeed(LoraProfile(), 2);
  const MutationPalette palette = PaletteFromProfile(LoraProfile());
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    const TimedTrace m = InsertEvent(t, rng, palette);
    EXPECT_EQ(m.events.size(), t.events.size() + 1);
    EXPECT_TRUE(trace::Validate(m).ok());
  }
}

TEST(EventMutationTest, ModifyNeverTouchesFamily) {
  SeedProfile p;
  p.family_pool = 3;
  const TimedTrace t = GenerateSeed(p, 2);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const size_t idx = rng.Index(t.events.size());
    const TimedTrace m = ModifySend(t, idx, rng, PaletteFromProfile(p));
    EXPECT_EQ(m.events[idx].spec().prompt_family_id, t.events[idx].spec().prompt_family_id);
    EXPECT_EQ(m.events[idx].spec().request_id, t.events[idx].spec().request_id);
  }
}

TEST(SpliceTest, MidpointConcatenatesHalvesWithFreshIds) {
  SeedProfile p;
  p.n_requests = 4;
  const TimedTrace a = GenerateSeed(p, 1);
  const TimedTrace b = GenerateSeed(p, 2);  // same "s0".."s3" ids
  const TimedTrace c = Splice(a, b, {CutMode::kMidpoint}, 3);
  EXPECT_EQ(c.events.size(), 4u);
  EXPECT_TRUE(trace::Validate(c).ok());
  EXPECT_EQ(c.metadata.at("splice_mode"), "undirected");
  EXPECT_EQ(c.events.front().offset_ms, 0);
}

TEST(DirectedSpliceTest, WarmSegmentPrecedesPressureWindow) {
  SeedProfile p;
  p.n_requests = 6;
  p.burst_window_ms = 3000;
  const TimedTrace warm = GenerateSeed(p, 11);
  const TimedTrace pressure = GenerateSeed(p, 12);
  exec::TelemetrySummary wf, pf;
  wf.windows.kv_allocs = {1, 9, 2, 0};
  pf.windows.inflight_sends = {0, 0, 5, 1};
  const TimedTrace c = DirectedSplice(warm, pressure, &wf, &pf, {50}, 1);
  EXPECT_EQ(c.metadata.at("splice_mode"), "directed");
  const int64_t warm_end = std::stoll(c.metadata.at("warm_window_end_ms"));
  const int64_t seg = std::stoll(c.metadata.at("pressure_segment_start_ms"));
  EXPECT_EQ(warm_end, 2000);
  EXPECT_EQ(seg, 2050);
  size_t from_warm = 0;
  for (const TraceEvent& e : warm.events) from_warm += e.offset_ms < warm_end;
  ASSERT_LE(from_warm, c.events.size());
  for (size_t i = 0; i < c.events.size(); ++i) {
    if (i < from_warm) {
      EXPECT_LT(c.events[i].offset_ms, warm_end);
    } else {
      EXPECT_GE(c.events[i].offset_ms, seg);
    }
  }
  EXPECT_TRUE(trace::Validate(c).ok());
}

TEST(DirectedSpliceTest, FallsBackWithoutFeedback) {
  const TimedTrace a = GenerateSeed(SeedProfile{}, 1);
  const TimedTrace c = DirectedSplice(a, a, nullptr, nullptr, {}, 2);
  EXPECT_EQ(c.metadata.at("splice_mode"), "undirected-fallback");
  EXPECT_TRUE(trace::Validate(c).ok());
}

TEST(MutationPropertyTest, EveryOperatorOutputValidates) {
  Rng rng(606);
  const MutationPalette palette = PaletteFromProfile(LoraProfile());
  for (int i = 0; i < 2000; ++i) {
    const TimedTrace a = trace::Repair(servefuzz::testing::RandomTrace(rng));
    const TimedTrace b = trace::Repair(servefuzz::testing::RandomTrace(rng));
    const uint64_t seed = rng.Next();
    ASSERT_TRUE(trace::Validate(MutateTiming(a, seed, 0.05)).ok());
    ASSERT_TRUE(trace::Validate(CollapseTiming(a, seed)).ok());
    ASSERT_TRUE(trace::Validate(MutateEvents(a, seed, palette)).ok());
    ASSERT_TRUE(trace::Validate(Splice(a, b, {}, seed)).ok());
  }
}

}  // namespace
}  // namespace servefuzz::mutation
