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

#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "f3_templates.h"
#include "servefuzz/exec/target.h"
#include "servefuzz/exec/telemetry.h"
#include "servefuzz/sim/block_manager.h"
#include "servefuzz/sim/config.h"
#include "servefuzz/sim/decode.h"
#include "servefuzz/sim/engine.h"

namespace servefuzz::sim {
namespace {

using exec::KvEvent;
using exec::KvEventKind;

TEST(BlockManagerTest, CachedBlocksStayHeldUntilEvicted) {
  BlockManager bm(2);
  std::vector<KvEvent> log;
  const auto a = bm.Allocate(111, "r1", "BASE", 0, log);
  const auto b = bm.Allocate(0, "r1", "BASE", 0, log);
  ASSERT_TRUE(a && b);
  EXPECT_EQ(bm.held(), 2);
  bm.Release(*a, 5, log);
  bm.Release(*b, 5, log);
  // The uncacheable block is freed; the cached one lingers as evictable.
  EXPECT_EQ(bm.held(), 1);
  EXPECT_EQ(bm.evictable_count(), 1);
  EXPECT_EQ(bm.Lookup(111), a);
  EXPECT_EQ(log.back().kind, KvEventKind::kFree);
}

TEST(BlockManagerTest, PinEmitsPrefixHitThenReuse) {
  BlockManager bm(4);
  std::vector<KvEvent> log;
  const int64_t id = *bm.Allocate(7, "r1", "BASE", 0, log);
  bm.Release(id, 1, log);
  bm.Pin(id, 7, "r2", "BASE", 2, log);
  bm.Pin(id, 7, "r3", "BASE", 3, log);
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log[1].kind, KvEventKind::kPrefixHit);
  EXPECT_EQ(log[2].kind, KvEventKind::kReuse);
  EXPECT_EQ(bm.evictable_count(), 0);
}

TEST(BlockManagerTest, EvictsLeastRecentlyUsedAndBumpsGeneration) {
  BlockManager bm(2);
  std::vector<KvEvent> log;
  const int64_t x = *bm.Allocate(1, "a", "BASE", 0, log);
  const int64_t y = *bm.Allocate(2, "b", "BASE", 0, log);
  bm.Release(y, 10, log);
  bm.Release(x, 20, log);
  const uint64_t gen = bm.block(y).generation;
  const auto z = bm.Allocate(3, "c", "BASE", 30, log);
  ASSERT_EQ(z, y);
  EXPECT_EQ(bm.block(y).generation, gen + 1);
  EXPECT_FALSE(bm.Lookup(2).has_value());
  EXPECT_EQ(log[log.size() - 2].kind, KvEventKind::kEvict);
  EXPECT_EQ(bm.Lookup(1), x);
}

TEST(BlockManagerTest, ExhaustionReturnsNullopt) {
  BlockManager bm(1);
  std::vector<KvEvent> log;
  ASSERT_TRUE(bm.Allocate(0, "a", "BASE", 0, log).has_value());
  EXPECT_FALSE(bm.Allocate(0, "b", "BASE", 0, log).has_value());
  EXPECT_DOUBLE_EQ(bm.occupancy(), 1.0);
}

TEST(DecoderTest, ShallowListIsPrefixOfDeepList) {
  SimConfig c;
  PseudoDecoder d(c);
  const uint64_t digest = d.DigestOf("BASE", {1, 2, 3});
  const DecodeStep a = d.Step(digest, 3, "BASE", 5);
  const DecodeStep b = d.Step(digest, 3, "BASE", 12);
  ASSERT_EQ(a.top.size(), 5u);
  EXPECT_TRUE(std::equal(a.top.begin(), a.top.end(), b.top.begin()));
  EXPECT_EQ(a.token, a.top[0].token);
  for (size_t i = 1; i < b.top.size(); ++i) EXPECT_LT(b.top[i].logprob, b.top[i - 1].logprob);
}

TEST(DecoderTest, ContextAndAdapterChangeTheDigest) {
  SimConfig c;
  PseudoDecoder d(c);
  EXPECT_NE(d.DigestOf("BASE", {1, 2}), d.DigestOf("BASE", {2, 1}));
  EXPECT_NE(d.DigestOf("BASE", {1, 2}), d.DigestOf("lora_a", {1, 2}));
  EXPECT_EQ(d.DigestOf("BASE", {1, 2}), PseudoDecoder::Fold(d.DigestOf("BASE", {1}), 2));
}

TEST(DecoderTest, NearTieFlipPicksRunnerUpWithinGap) {
  SimConfig c;
  c.near_tie_mode = true;
  c.near_tie_gap = 0.01;
  PseudoDecoder d(c);
  const uint64_t digest = d.DigestOf("BASE", {9});
  const DecodeStep straight = d.Step(digest, 4, "BASE", 5, false);
  const DecodeStep flipped = d.Step(digest, 4, "BASE", 5, true);
  ASSERT_TRUE(straight.near_tie);
  EXPECT_EQ(flipped.token, straight.top[1].token);
  EXPECT_NEAR(straight.top[0].logprob - straight.top[1].logprob, 0.01, 1e-12);

  SimConfig off;
  PseudoDecoder plain(off);
  EXPECT_EQ(plain.Step(digest, 4, "BASE", 5, true).token,
            plain.Step(digest, 4, "BASE", 5, false).token);
}

TEST(SimConfigTest, ValidateRejectsBadValues) {
  SimConfig c;
  EXPECT_EQ(c.Validate(), "");
  c.chunked_prefill_limit = c.max_batch_tokens + 1;
  EXPECT_NE(c.Validate(), "");
  c = SimConfig{};
  c.adapters = {"BASE"};
  EXPECT_NE(c.Validate(), "");
  c = SimConfig{};
  c.faults = {FaultSpec::Defaults(FaultFamily::kStaleKv)};
  c.faults[0].occupancy_threshold = 1.5;
  EXPECT_NE(c.Validate(), "");
}

TEST(SimConfigTest, FaultNamesAndJson) {
  EXPECT_EQ(ParseFaultFamily("F2"), FaultFamily::kEngineStall);
  EXPECT_EQ(ParseFaultFamily("F3_adapter_drift"), FaultFamily::kAdapterDrift);
  EXPECT_FALSE(ParseFaultFamily("F9").has_value());
  SimConfig c = exec::SimConfigFromFlags({{"faults", "F1,F3"}, {"near_tie_mode", "true"}});
  EXPECT_TRUE(c.near_tie_mode);
  EXPECT_NE(c.Armed(FaultFamily::kStaleKv), nullptr);
  EXPECT_EQ(c.Armed(FaultFamily::kEngineStall), nullptr);
  EXPECT_EQ(SimConfigFromJson(ToJson(c)), c);
  EXPECT_THROW(exec::SimConfigFromFlags({{"faults", "F7"}}), std::invalid_argument);
  EXPECT_THROW(exec::SimConfigFromFlags({{"tick_ms", "0"}}), std::invalid_argument);
}

trace::RequestSpec Req(std::string id, int64_t len, int64_t max_tokens, int n = 1) {
  trace::RequestSpec s;
  s.request_id = std::move(id);
  s.shape = {0, len};
  s.sampling.max_tokens = max_tokens;
  s.sampling.seed = 1;
  s.sampling.n_completions = n;
  return s;
}

TEST(EngineTest, CleanRunCompletesEverything) {
  exec::VirtualSimTarget target(SimConfig{}, {});
  trace::TimedTrace t;
  for (int i = 0; i < 6; ++i) t.events.push_back(trace::TraceEvent::Send(i, Req("r" + std::to_string(i), 64, 8)));
  const exec::ExecutionReport r = target.Execute(t);
  ASSERT_EQ(r.outcomes.size(), 6u);
  for (const auto& o : r.outcomes) {
    EXPECT_EQ(o.status, exec::OutcomeStatus::kCompleted);
    EXPECT_EQ(o.completions.at(0).tokens.size(), 8u);
  }
  EXPECT_FALSE(r.server_crashed);
  EXPECT_GT(exec::PeakHeldBlocks(r.kv_events), 0);
}

TEST(EngineTest, SharedPrefixHitsTheCache) {
  exec::VirtualSimTarget target(SimConfig{}, {});
  trace::RequestSpec a = Req("a", 96, 2), b = Req("b", 96, 2);
  a.shape.prefix_len = b.shape.prefix_len = 64;
  trace::TimedTrace t;
  t.events = {trace::TraceEvent::Send(0, a), trace::TraceEvent::Send(200, b)};
  const exec::ExecutionReport r = target.Execute(t);
  int hits = 0;
  for (const KvEvent& e : r.kv_events) hits += e.kind == KvEventKind::kPrefixHit && e.owner_request_id == "b";
  EXPECT_EQ(hits, 4);  // 64 shared tokens in blocks of 16
}

TEST(EngineTest, StallFaultHoldsTheLoop) {
  SimConfig c = exec::SimConfigFromFlags({{"faults", "F2"}});
  exec::VirtualSimTarget target(c, {});
  trace::TimedTrace t;
  t.events = {trace::TraceEvent::Send(0, Req("fan", 32, 4, 8)),
              trace::TraceEvent::Send(1, Req("victim", 32, 4))};
  const exec::ExecutionReport r = target.Execute(t);
  const auto* v = r.Find("victim");
  ASSERT_NE(v, nullptr);
  ASSERT_TRUE(v->ttft_ms.has_value());
  EXPECT_GE(*v->ttft_ms, 12000);

  exec::VirtualSimTarget clean(SimConfig{}, {});
  EXPECT_LT(*clean.Execute(t).Find("victim")->ttft_ms, 100);
}

TEST(EngineTest, AdapterDriftNeedsAllFourConditions) {
  SimConfig c = exec::SimConfigFromFlags({{"faults", "F3"}});
  exec::VirtualSimTarget target(c, {});
  const exec::ExecutionReport full = target.Execute(servefuzz::testing::F3Template(kF3All, 1));
  EXPECT_TRUE(full.server_crashed);
  EXPECT_NE(full.crash_evidence.find("max_loras_per_batch"), std::string::npos);
  for (unsigned drop : {kF3Occupancy, kF3PromptLens, kF3Adapters, kF3LoraBurst}) {
    target.Reset();
    const auto r = target.Execute(servefuzz::testing::F3Template(kF3All & ~drop, 1));
    EXPECT_FALSE(r.server_crashed) << "dropped bit " << drop;
    EXPECT_FALSE(target.engine().f3_masks_seen().contains(kF3All));
  }
}

TEST(EngineTest, ResetRestoresPristineState) {
  SimConfig c;
  exec::VirtualSimTarget target(c, {});
  trace::TimedTrace t;
  t.events = {trace::TraceEvent::Send(0, Req("a", 64, 4))};
  const auto first = target.Execute(t);
  target.Reset();
  EXPECT_EQ(target.Execute(t), first);
  target.Reset();
  EXPECT_EQ(target.engine().blocks().held(), 0);
  EXPECT_TRUE(target.engine().f3_masks_seen().empty());
}

}  // namespace
}  // namespace servefuzz::sim
