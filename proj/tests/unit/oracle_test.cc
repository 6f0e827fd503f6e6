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
#include <string>

#include <gtest/gtest.h>

#include "servefuzz/oracle/oracle.h"

namespace servefuzz::oracle {
namespace {

using exec::ExecutionReport;
using exec::KvEvent;
using exec::KvEventKind;
using exec::OutcomeStatus;
using exec::RequestOutcome;

trace::RequestSpec Spec(std::string id, std::optional<std::string> family = std::nullopt) {
  trace::RequestSpec s;
  s.request_id = std::move(id);
  s.prompt_family_id = std::move(family);
  s.shape = {0, 64};
  s.sampling.max_tokens = 4;
  return s;
}

RequestOutcome Done(std::string id, int64_t dispatch, int64_t ttft,
                    std::vector<int32_t> tokens = {1, 2, 3, 4}) {
  RequestOutcome o;
  o.request_id = std::move(id);
  o.status = OutcomeStatus::kCompleted;
  o.dispatch_ms = dispatch;
  o.ttft_ms = ttft;
  o.requested_max_tokens = 4;
  exec::Completion c;
  c.tokens = std::move(tokens);
  for (size_t i = 0; i < c.tokens.size(); ++i) {
    c.token_times_ms.push_back(dispatch + ttft + static_cast<int64_t>(i) * 10);
  }
  o.total_ms = ttft + static_cast<int64_t>(c.tokens.size()) * 10;
  o.completions = {c};
  return o;
}

std::optional<Suspicion> FindKind(const CheckResult& r, SuspicionKind kind) {
  for (const Suspicion& s : r.suspicions) {
    if (s.kind == kind) return s;
  }
  return std::nullopt;
}

BaselineStats Baseline(double ttft, int n) {
  BaselineStats b;
  for (int i = 0; i < n; ++i) b.Add(ttft);
  return b;
}

TEST(BaselineTest, NearestRankQuantiles) {
  BaselineStats b;
  EXPECT_EQ(b.p50(), 0.0);
  for (int i = 1; i <= 100; ++i) b.Add(i);
  EXPECT_EQ(b.p50(), 50);
  EXPECT_EQ(b.p95(), 95);
  EXPECT_EQ(b.p99(), 99);
  BaselineStats small(3);
  for (double x : {100.0, 1.0, 2.0, 3.0}) small.Add(x);
  EXPECT_EQ(small.count(), 3u);
  EXPECT_EQ(small.Quantile(1.0), 3.0);
}

TEST(TtftTest, FourHundredFoldRegressionIsFlagged) {
  trace::TimedTrace t;
  t.events = {trace::TraceEvent::Send(0, Spec("slow"))};
  ExecutionReport r;
  r.outcomes = {Done("slow", 0, 4000)};
  const CheckResult c = Evaluate(t, r, Baseline(10.0, 50), Thresholds{});
  const std::optional<Suspicion> s = FindKind(c, SuspicionKind::kTtftRegression);
  ASSERT_TRUE(s.has_value());
  EXPECT_DOUBLE_EQ(s->evidence["amplification"].get<double>(), 400.0);
  EXPECT_EQ(s->requests, std::vector<std::string>{"slow"});
  EXPECT_EQ(s->route(), Route::kTiming);
}

TEST(TtftTest, SkippedWithThinBaseline) {
  trace::TimedTrace t;
  t.events = {trace::TraceEvent::Send(0, Spec("slow"))};
  ExecutionReport r;
  r.outcomes = {Done("slow", 0, 4000)};
  const CheckResult c = Evaluate(t, r, Baseline(10.0, 49), Thresholds{});
  EXPECT_FALSE(FindKind(c, SuspicionKind::kTtftRegression).has_value());
  ASSERT_EQ(c.skipped.size(), 1u);
  EXPECT_NE(c.skipped[0].find("49 < 50"), std::string::npos);
}

TEST(TtftTest, ExactlyAtFactorIsNotARegression) {
  trace::TimedTrace t;
  t.events = {trace::TraceEvent::Send(0, Spec("edge"))};
  ExecutionReport r;
  r.outcomes = {Done("edge", 0, 100)};
  EXPECT_FALSE(FindKind(Evaluate(t, r, Baseline(10.0, 60), Thresholds{}),
                     SuspicionKind::kTtftRegression).has_value());
}

TEST(StallTest, GapInsideBusyPeriodOnly) {
  ExecutionReport r;
  r.outcomes = {Done("a", 0, 10), Done("b", 30000, 10)};
  // 30 s idle between two short requests is not a stall.
  EXPECT_FALSE(DetectStall(r, 10000).has_value());
  r.outcomes[0].total_ms = 15000;  // a is in flight through the silence
  const auto s = DetectStall(r, 10000);
  ASSERT_TRUE(s.has_value());
  EXPECT_GE(s->evidence["longest_gap_ms"].get<int64_t>(), 10000);
}

TEST(TimeoutTest, TimedOutRequestsAreImplicated) {
  trace::TimedTrace t;
  ExecutionReport r;
  RequestOutcome o = Done("x", 0, 5);
  o.status = OutcomeStatus::kTimeout;
  r.outcomes = {o, Done("y", 0, 5)};
  const std::optional<Suspicion> s = FindKind(Evaluate(t, r, {}, {}), SuspicionKind::kTimeout);
  ASSERT_TRUE(s.has_value());
  EXPECT_EQ(s->requests, std::vector<std::string>{"x"});
}

TEST(CorruptionTest, StructuralSubtypes) {
  trace::TimedTrace t;
  ExecutionReport r;
  r.outcomes = {Done("empty", 0, 5, {}), Done("long", 0, 5, {1, 2, 3, 4, 5}),
                Done("bad", 0, 5, {1, -1})};
  std::set<std::string> subtypes;
  for (const Suspicion& s : Evaluate(t, r, {}, {}).suspicions) {
    if (s.kind == SuspicionKind::kCorruptedOutput) subtypes.insert(s.subtype);
  }
  EXPECT_EQ(subtypes, (std::set<std::string>{"empty_body", "over_max_tokens", "bad_token"}));
}

TEST(CorruptionTest, GreedyTwinsMustAgree) {
  trace::TimedTrace t;
  t.events = {trace::TraceEvent::Send(0, Spec("a", "fam")),
              trace::TraceEvent::Send(1, Spec("b", "fam")),
              trace::TraceEvent::Send(2, Spec("c", "other"))};
  ExecutionReport r;
  r.outcomes = {Done("a", 0, 5), Done("b", 1, 5, {1, 2, 9, 4}), Done("c", 2, 5, {7, 7})};
  const std::optional<Suspicion> s = FindKind(Evaluate(t, r, {}, {}), SuspicionKind::kCorruptedOutput);
  ASSERT_TRUE(s.has_value());
  EXPECT_EQ(s->subtype, "family_mismatch");
  EXPECT_EQ(s->evidence["first_difference"], 2);
  EXPECT_EQ(s->requests, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(s->route(), Route::kRelational);

  // Sampled twins are allowed to differ.
  t.events[1].spec().sampling.temperature = 0.7;
  EXPECT_FALSE(FindKind(Evaluate(t, r, {}, {}), SuspicionKind::kCorruptedOutput).has_value());
}

TEST(KvLeakTest, UnfreedUncacheableBlocksAfterGrace) {
  ExecutionReport r;
  r.kv_stream_available = true;
  r.outcomes = {Done("a", 0, 5)};
  r.kv_events = {{0, KvEventKind::kAlloc, 1, 0, "a", "BASE"},
                 {0, KvEventKind::kAlloc, 2, 0, "a", "BASE"},
                 {0, KvEventKind::kAlloc, 3, 77, "a", "BASE"},
                 {40, KvEventKind::kFree, 1, 0, "a", "BASE"}};
  r.observed_until_ms = 1000;
  trace::TimedTrace t;
  EXPECT_FALSE(FindKind(Evaluate(t, r, {}, {}), SuspicionKind::kKvLeak).has_value());
  r.observed_until_ms = 5000;
  const std::optional<Suspicion> s = FindKind(Evaluate(t, r, {}, {}), SuspicionKind::kKvLeak);
  ASSERT_TRUE(s.has_value());
  EXPECT_EQ(s->evidence["leaked_blocks"]["a"], 1);
}

TEST(LifecycleTest, TokensAfterCancel) {
  ExecutionReport r;
  RequestOutcome o = Done("a", 0, 5, {1, 2, 3, 4});
  o.cancel_issued_ms = 0;
  o.status = OutcomeStatus::kCancelled;
  o.completions[0].token_times_ms = {5, 15, 100, 200};
  r.outcomes = {o};
  const auto out = LifecycleCheck({}, r, {});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].subtype, "tokens_after_cancel");

  RequestOutcome spurious = Done("b", 0, 5);
  spurious.status = OutcomeStatus::kDisconnected;
  r.outcomes = {spurious};
  ASSERT_EQ(LifecycleCheck({}, r, {}).size(), 1u);
  EXPECT_EQ(LifecycleCheck({}, r, {})[0].subtype, "spurious_disconnect");
}

TEST(ForensicsTest, HashConflictAndCrossAdapterReuse) {
  ExecutionReport r;
  r.kv_stream_available = true;
  r.kv_events = {{0, KvEventKind::kAlloc, 5, 0xaa, "owner", "BASE"},
                 {10, KvEventKind::kPrefixHit, 5, 0xbb, "victim", "BASE"},
                 {20, KvEventKind::kReuse, 5, 0xaa, "lora-user", "lora_a"}};
  const auto out = StructuralForensics({}, r);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].kind, SuspicionKind::kHashConflict);
  EXPECT_EQ(out[0].evidence["alloc_owner"], "owner");
  EXPECT_EQ(out[0].evidence["hit_owner"], "victim");
  EXPECT_EQ(out[1].kind, SuspicionKind::kCrossAdapterReuse);
}

TEST(ForensicsTest, CrossRunBlockSequenceDivergence) {
  ExecutionReport a, b;
  a.kv_stream_available = b.kv_stream_available = true;
  a.kv_events = {{0, KvEventKind::kAlloc, 1, 0, "x", "BASE"}};
  b.kv_events = {{0, KvEventKind::kAlloc, 2, 0, "x", "BASE"}};
  EXPECT_EQ(CrossRunDivergence({}, a, a).size(), 0u);
  ASSERT_EQ(CrossRunDivergence({}, a, b).size(), 1u);
  EXPECT_EQ(CrossRunDivergence({}, a, b)[0].subtype, "cross_run");
}

TEST(FingerprintTest, OrderInsensitiveAndKindSensitive) {
  EXPECT_EQ(Fingerprint(SuspicionKind::kKvLeak, {"x", "y"}),
            Fingerprint(SuspicionKind::kKvLeak, {"y", "x"}));
  EXPECT_NE(Fingerprint(SuspicionKind::kKvLeak, {"x"}),
            Fingerprint(SuspicionKind::kStall, {"x"}));
}

TEST(FingerprintTest, IndependentOfRequestIdsAndTiming) {
  trace::TimedTrace t1, t2;
  ExecutionReport r1, r2;
  RequestOutcome o1 = Done("a", 0, 5), o2 = Done("zz", 900, 70);
  o1.status = o2.status = OutcomeStatus::kTimeout;
  r1.outcomes = {o1};
  r2.outcomes = {o2};
  EXPECT_EQ(FindKind(Evaluate(t1, r1, {}, {}), SuspicionKind::kTimeout)->fingerprint,
            FindKind(Evaluate(t2, r2, {}, {}), SuspicionKind::kTimeout)->fingerprint);
}

TEST(SuspicionJsonTest, RoundTrip) {
  ExecutionReport r;
  r.server_crashed = true;
  r.crash_evidence = "boom";
  r.crash_time_ms = 7;
  const Suspicion s = *FindKind(Evaluate({}, r, {}, {}), SuspicionKind::kCrash);
  const Suspicion back = SuspicionFromJson(ToJson(s));
  EXPECT_EQ(back.fingerprint, s.fingerprint);
  EXPECT_EQ(back.kind, s.kind);
  EXPECT_EQ(back.evidence, s.evidence);
  EXPECT_EQ(s.route(), Route::kCrash);
}

}  // namespace
}  // namespace servefuzz::oracle
