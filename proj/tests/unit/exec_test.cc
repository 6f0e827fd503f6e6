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

#include <gtest/gtest.h>

#include "servefuzz/exec/report.h"
#include "servefuzz/exec/target.h"
#include "servefuzz/exec/telemetry.h"
#include "servefuzz/sim/config.h"
#include "servefuzz/sim/server.h"
#include "servefuzz/trace/prompt.h"

namespace servefuzz::exec {
namespace {

using trace::TraceEvent;

trace::RequestSpec Req(std::string id, int64_t len = 64, int64_t max_tokens = 8) {
  trace::RequestSpec s;
  s.request_id = std::move(id);
  s.shape = {0, len};
  s.sampling.max_tokens = max_tokens;
  s.sampling.seed = 3;
  s.sampling.logprobs = 5;
  return s;
}

trace::TimedTrace Mixed() {
  trace::TimedTrace t;
  t.trace_id = "mixed";
  trace::RequestSpec lora = Req("b", 96, 12);
  lora.adapter = "lora_a";
  t.events = {TraceEvent::Send(0, Req("a")), TraceEvent::Send(2, lora),
              TraceEvent::Send(5, Req("c", 64, 200)), TraceEvent::Cancel(60, "c"),
              TraceEvent::Wait(70, 100)};
  return t;
}

TEST(MapEventTest, TotalOverEventKinds) {
  const trace::PromptCorpus corpus;
  const trace::TimedTrace t = Mixed();
  const ApiCall send = MapEvent(t.events[1], EngineKind::kGenericOpenAi, corpus);
  EXPECT_EQ(send.transport, ApiCall::Transport::kHttpPost);
  EXPECT_EQ(send.path, "/v1/completions");
  EXPECT_EQ(send.body["model"], "lora_a");
  EXPECT_EQ(send.body["logprobs"], 5);
  EXPECT_EQ(trace::ParseText(send.body["prompt"].get<std::string>(), corpus.vocab_size),
            trace::SynthesizePrompt(t.events[1].spec(), corpus));
  EXPECT_EQ(MapEvent(t.events[3], EngineKind::kSimulator, corpus).path, "/v1/cancel");
  EXPECT_EQ(MapEvent(t.events[3], EngineKind::kGenericOpenAi, corpus).transport,
            ApiCall::Transport::kAbort);
  EXPECT_EQ(MapEvent(t.events[4], EngineKind::kSimulator, corpus).transport,
            ApiCall::Transport::kNone);
}

TEST(VirtualTargetTest, DeterministicAfterReset) {
  VirtualSimTarget target(sim::SimConfig{}, {});
  const ExecutionReport a = target.Execute(Mixed());
  target.Reset();
  const ExecutionReport b = target.Execute(Mixed());
  EXPECT_EQ(a, b);
  EXPECT_EQ(OutputDigest(a), OutputDigest(b));
}

TEST(VirtualTargetTest, OutcomesFollowTheTrace) {
  VirtualSimTarget target(sim::SimConfig{}, {});
  const ExecutionReport r = target.Execute(Mixed());
  ASSERT_EQ(r.outcomes.size(), 3u);
  EXPECT_EQ(r.outcomes[0].request_id, "a");
  EXPECT_EQ(r.Find("a")->status, OutcomeStatus::kCompleted);
  EXPECT_EQ(r.Find("b")->status, OutcomeStatus::kCompleted);
  const RequestOutcome* c = r.Find("c");
  EXPECT_EQ(c->status, OutcomeStatus::kCancelled);
  EXPECT_EQ(c->cancel_issued_ms, 60);
  EXPECT_LT(c->completions[0].tokens.size(), 200u);
  // Logprob lists are one per token, top-5, descending, first entry is the token.
  const Completion& comp = r.Find("a")->completions[0];
  ASSERT_TRUE(comp.logprobs.has_value());
  ASSERT_EQ(comp.logprobs->size(), comp.tokens.size());
  for (size_t i = 0; i < comp.tokens.size(); ++i) {
    ASSERT_EQ((*comp.logprobs)[i].size(), 5u);
    EXPECT_EQ((*comp.logprobs)[i][0].token, comp.tokens[i]);
  }
  EXPECT_GE(r.observed_until_ms, 170);
  EXPECT_TRUE(r.kv_stream_available);
}

TEST(VirtualTargetTest, RequestTimeoutIsReported) {
  ExecOptions options;
  options.request_timeout_ms = 500;
  VirtualSimTarget target(exec::SimConfigFromFlags({{"faults", "F2"}}), options);
  trace::RequestSpec fan = Req("fan");
  fan.sampling.n_completions = 8;
  trace::TimedTrace t;
  t.events = {TraceEvent::Send(0, fan), TraceEvent::Send(1, Req("v"))};
  const ExecutionReport r = target.Execute(t);
  EXPECT_EQ(r.Find("v")->status, OutcomeStatus::kTimeout);
}

TEST(ReportTest, JsonRoundTrip) {
  VirtualSimTarget target(sim::SimConfig{}, {});
  ExecutionReport r = target.Execute(Mixed());
  r.crash_evidence = "x";
  r.crash_time_ms = 5;
  EXPECT_EQ(ReportFromJson(ToJson(r)), r);
}

TEST(ReportTest, DigestSeesTokensAndLogprobs) {
  VirtualSimTarget target(sim::SimConfig{}, {});
  const ExecutionReport r = target.Execute(Mixed());
  ExecutionReport token = r;
  token.outcomes[0].completions[0].tokens[0] ^= 1;
  ExecutionReport logprob = r;
  (*logprob.outcomes[0].completions[0].logprobs)[0][2].logprob += 1e-9;
  EXPECT_NE(OutputDigest(token), OutputDigest(r));
  EXPECT_NE(OutputDigest(logprob), OutputDigest(r));
  ExecutionReport timing = r;
  timing.outcomes[0].ttft_ms = 999;
  EXPECT_EQ(OutputDigest(timing), OutputDigest(r));
}

TEST(TelemetryTest, SummarizesHandBuiltReport) {
  trace::TimedTrace t;
  trace::RequestSpec b = Req("b", 32);
  b.adapter = "lora_b";
  t.events = {TraceEvent::Send(0, Req("a")), TraceEvent::Send(500, b),
              TraceEvent::Send(1500, Req("c", 16))};
  ExecutionReport r;
  auto outcome = [](std::string id, int64_t dispatch, int64_t total, int64_t ttft) {
    RequestOutcome o;
    o.request_id = std::move(id);
    o.status = OutcomeStatus::kCompleted;
    o.dispatch_ms = dispatch;
    o.total_ms = total;
    o.ttft_ms = ttft;
    return o;
  };
  r.outcomes = {outcome("a", 0, 1000, 10), outcome("b", 500, 200, 30),
                outcome("c", 1500, 100, 20)};
  r.kv_events = {{0, KvEventKind::kAlloc, 0, 0, "a", "BASE"},
                 {1, KvEventKind::kAlloc, 1, 0, "a", "BASE"},
                 {600, KvEventKind::kAlloc, 2, 0, "b", "lora_b"},
                 {700, KvEventKind::kFree, 2, 0, "b", "lora_b"},
                 {1000, KvEventKind::kEvict, 0, 0, "a", "BASE"},
                 {1500, KvEventKind::kAlloc, 3, 0, "c", "BASE"}};
  const TelemetrySummary s = Summarize(t, r, 1000);
  EXPECT_EQ(s.ttft_p50_ms, 20.0);
  EXPECT_EQ(s.ttft_max_ms, 30.0);
  EXPECT_EQ(s.max_concurrent_sends, 2);
  EXPECT_EQ(s.kv_peak_blocks, 3);
  EXPECT_EQ(s.distinct_adapters, 2);
  EXPECT_EQ(s.distinct_prompt_lens, 3);
  EXPECT_EQ(s.windows.kv_allocs, (std::vector<int64_t>{3, 1}));
  EXPECT_EQ(s.windows.inflight_sends, (std::vector<int64_t>{2, 1}));
}

TEST(HttpTargetTest, MatchesVirtualTargetTokens) {
  sim::ServerOptions options;
  options.time_scale = 0.5;
  sim::SimServer server(sim::SimConfig{}, options);
  const int port = server.Start();
  EngineEndpoint endpoint;
  endpoint.base_url = "http://127.0.0.1:" + std::to_string(port);
  HttpTarget http(endpoint, {});
  ASSERT_TRUE(http.Healthy());
  ASSERT_TRUE(http.SupportsReset());
  trace::TimedTrace t;
  t.events = {TraceEvent::Send(0, Req("a")), TraceEvent::Send(30, Req("b", 32))};
  const ExecutionReport remote = http.Execute(t);
  VirtualSimTarget local(sim::SimConfig{}, {});
  const ExecutionReport virt = local.Execute(t);
  for (const char* id : {"a", "b"}) {
    ASSERT_EQ(remote.Find(id)->status, OutcomeStatus::kCompleted) << id;
    EXPECT_EQ(remote.Find(id)->completions[0].tokens, virt.Find(id)->completions[0].tokens);
  }
  server.Stop();
}

TEST(HttpTargetTest, UnreachableEndpointIsUnavailable) {
  EngineEndpoint endpoint;
  endpoint.base_url = "http://127.0.0.1:1";
  endpoint.health_timeout_ms = 200;
  EXPECT_THROW(MakeTarget(endpoint, {}), EndpointUnavailable);
}

}  // namespace
}  // namespace servefuzz::exec
