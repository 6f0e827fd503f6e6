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
#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <utility>

#include "httplib.h"
#include "servefuzz/exec/target.h"
#include "servefuzz/util/hash.h"

namespace servefuzz::exec {
namespace {

using Clock = std::chrono::steady_clock;
using trace::EventKind;
using trace::TraceEvent;

int64_t MsSince(Clock::time_point t0) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t0).count();
}

// Token id from the sim extension field, the synthetic vocabulary, or a
// stable hash of the text for foreign engines.
int32_t TokenIdOf(const nlohmann::json& choice, const std::string& text, int vocab) {
  if (choice.contains("token_id") && choice["token_id"].is_number_integer()) {
    return choice["token_id"].get<int32_t>();
  }
  std::string word = text;
  while (!word.empty() && word.front() == ' ') word.erase(word.begin());
  if (std::optional<trace::Token> t = trace::ParseTokenText(word, vocab)) return *t;
  return static_cast<int32_t>(HashString(text) & 0x3fffffff) + vocab;
}

PositionLogprobs ParseTop(const nlohmann::json& lp, int vocab) {
  PositionLogprobs top;
  if (lp.contains("top_ids") && lp["top_ids"].is_array()) {
    for (const nlohmann::json& pair : lp["top_ids"]) {
      top.push_back({pair.at(0).get<int32_t>(), pair.at(1).get<double>()});
    }
  } else if (lp.contains("top_logprobs") && lp["top_logprobs"].is_array() &&
             !lp["top_logprobs"].empty()) {
    for (const auto& [text, value] : lp["top_logprobs"].back().items()) {
      top.push_back({TokenIdOf(nlohmann::json::object(), text, vocab), value.get<double>()});
    }
  }
  std::sort(top.begin(), top.end(), [](const TokenLogprob& a, const TokenLogprob& b) {
    return a.logprob != b.logprob ? a.logprob > b.logprob : a.token < b.token;
  });
  return top;
}

struct Slot {
  std::mutex mu;
  RequestOutcome outcome;
  std::atomic<bool> abort{false};
  std::atomic<bool> cancelled{false};
  bool transport_error = false;
};

}  // namespace

HttpTarget::HttpTarget(EngineEndpoint endpoint, ExecOptions options)
    : endpoint_(std::move(endpoint)), options_(std::move(options)) {}

std::string HttpTarget::Describe() const { return endpoint_.base_url; }

bool HttpTarget::SupportsReset() const {
  return endpoint_.engine_kind == EngineKind::kSimulator;
}

bool HttpTarget::Healthy() {
  httplib::Client cli(endpoint_.base_url);
  const auto timeout = std::chrono::milliseconds(endpoint_.health_timeout_ms);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  httplib::Result res = cli.Get("/health");
  return res && res->status == 200;
}

void HttpTarget::Reset() {
  if (!SupportsReset()) {
    throw UnsupportedOperation("reset is not available on a remote " +
                               endpoint_.base_url + " endpoint");
  }
  httplib::Client cli(endpoint_.base_url);
  httplib::Result res = cli.Post("/reset");
  if (!res || res->status != 200) {
    throw EndpointUnavailable("reset failed on " + endpoint_.base_url);
  }
}

std::vector<KvEvent> HttpTarget::CollectKvStream(size_t since, bool* available) {
  *available = false;
  std::vector<KvEvent> events;
  if (endpoint_.engine_kind != EngineKind::kSimulator) return events;
  httplib::Client cli(endpoint_.base_url);
  httplib::Result res = cli.Get("/v1/kv_events?since=" + std::to_string(since));
  if (!res || res->status != 200) return events;
  *available = true;
  std::istringstream lines(res->body);
  for (std::string line; std::getline(lines, line);) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;
    events.push_back(KvEventFromJson(j));
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const KvEvent& a, const KvEvent& b) { return a.ts < b.ts; });
  return events;
}

ExecutionReport HttpTarget::Execute(const trace::TimedTrace& t) {
  if (!Healthy()) {
    throw EndpointUnavailable("endpoint " + endpoint_.base_url + " is unreachable");
  }
  const bool sim_kind = endpoint_.engine_kind == EngineKind::kSimulator;
  // Server clock and KV cursor at start, to rebase the side stream.
  size_t kv_since = 0;
  int64_t server_now = 0;
  if (sim_kind) {
    httplib::Client cli(endpoint_.base_url);
    if (httplib::Result res = cli.Get("/health"); res && res->status == 200) {
      nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_object()) {
        kv_since = j.value("kv_next_seq", size_t{0});
        server_now = j.value("now_ms", int64_t{0});
      }
    }
  }

  ExecutionReport report;
  report.trace_id = t.trace_id;
  std::map<std::string, std::unique_ptr<Slot>, std::less<>> slots;
  std::vector<std::string> order;
  for (const TraceEvent& e : t.events) {
    if (!e.is_send()) continue;
    auto s = std::make_unique<Slot>();
    s->outcome.request_id = e.spec().request_id;
    s->outcome.intended_offset_ms = e.offset_ms;
    s->outcome.requested_max_tokens = e.spec().sampling.max_tokens;
    s->outcome.completions.resize(
        static_cast<size_t>(std::max(1, e.spec().sampling.n_completions)));
    if (e.spec().sampling.logprobs) {
      for (Completion& c : s->outcome.completions) c.logprobs.emplace();
    }
    order.push_back(e.spec().request_id);
    slots.emplace(e.spec().request_id, std::move(s));
  }

  const Clock::time_point t0 = Clock::now();
  const int vocab = options_.corpus.vocab_size;
  std::vector<std::thread> workers;
  int64_t observe_until = 0;

  auto run_send = [&, this](const TraceEvent& e) {
    Slot& s = *slots.at(e.spec().request_id);
    std::this_thread::sleep_until(t0 + std::chrono::milliseconds(e.offset_ms));
    const int64_t dispatch = MsSince(t0);
    {
      std::lock_guard<std::mutex> lock(s.mu);
      s.outcome.dispatch_ms = dispatch;
    }
    httplib::Client cli(endpoint_.base_url);
    cli.set_read_timeout(std::chrono::milliseconds(options_.request_timeout_ms));
    cli.set_connection_timeout(std::chrono::milliseconds(endpoint_.health_timeout_ms));
    httplib::Request req;
    req.method = "POST";
    req.path = "/v1/completions";
    req.body = CompletionBody(e.spec(), options_.corpus).dump();
    req.set_header("Content-Type", "application/json");
    req.set_header("X-Request-Id", e.spec().request_id);
    std::string buffer;
    bool timed_out = false;
    bool saw_done = false;
    auto on_choice = [&](const nlohmann::json& choice, int64_t at) {
      const size_t c = choice.value("index", size_t{0});
      std::lock_guard<std::mutex> lock(s.mu);
      if (c >= s.outcome.completions.size()) return;
      Completion& comp = s.outcome.completions[c];
      const std::string text = choice.value("text", std::string());
      comp.tokens.push_back(TokenIdOf(choice, text, vocab));
      comp.token_times_ms.push_back(at);
      if (comp.logprobs && choice.contains("logprobs") && choice["logprobs"].is_object()) {
        comp.logprobs->push_back(ParseTop(choice["logprobs"], vocab));
      }
      const int64_t ttft = at - s.outcome.dispatch_ms;
      if (!s.outcome.ttft_ms || ttft < *s.outcome.ttft_ms) s.outcome.ttft_ms = ttft;
    };
    req.content_receiver = [&](const char* data, size_t len, uint64_t, uint64_t) {
      if (s.abort.load()) return false;
      if (MsSince(t0) - dispatch >= options_.request_timeout_ms) {
        timed_out = true;
        return false;
      }
      buffer.append(data, len);
      const int64_t at = MsSince(t0);
      if (!e.spec().stream) return true;
      for (size_t pos; (pos = buffer.find("\n\n")) != std::string::npos;) {
        std::string frame = buffer.substr(0, pos);
        buffer.erase(0, pos + 2);
        if (frame.rfind("data: ", 0) != 0) continue;
        std::string payload = frame.substr(6);
        if (payload == "[DONE]") {
          saw_done = true;
          continue;
        }
        nlohmann::json j = nlohmann::json::parse(payload, nullptr, false);
        if (j.is_discarded() || !j.contains("choices")) continue;
        for (const nlohmann::json& choice : j["choices"]) on_choice(choice, at);
      }
      return true;
    };
    httplib::Response res;
    httplib::Error err = httplib::Error::Success;
    const bool ok = cli.send(req, res, err);
    const int64_t end = MsSince(t0);
    if (ok && res.status == 200 && !e.spec().stream) {
      nlohmann::json j = nlohmann::json::parse(buffer, nullptr, false);
      if (j.is_object() && j.contains("choices")) {
        for (const nlohmann::json& choice : j["choices"]) {
          if (!choice.contains("token_ids")) continue;
          const nlohmann::json& toks = choice["token_ids"];
          for (size_t k = 0; k < toks.size(); ++k) {
            nlohmann::json one = {{"index", choice.value("index", 0)},
                                  {"token_id", toks[k]}};
            if (choice.contains("logprobs") && choice["logprobs"].contains("top_ids")) {
              one["logprobs"] = {{"top_ids", choice["logprobs"]["top_ids"].at(k)}};
            }
            on_choice(one, end);
          }
        }
        saw_done = true;
      }
    }
    std::lock_guard<std::mutex> lock(s.mu);
    RequestOutcome& o = s.outcome;
    o.total_ms = std::max<int64_t>(0, end - o.dispatch_ms);
    if (s.cancelled.load()) {
      o.status = OutcomeStatus::kCancelled;
    } else if (s.abort.load()) {
      o.status = OutcomeStatus::kDisconnected;
    } else if (timed_out || err == httplib::Error::Read) {
      o.status = timed_out ? OutcomeStatus::kTimeout : OutcomeStatus::kServerError;
      o.error_detail = timed_out ? "request timed out" : "connection lost";
      s.transport_error = !timed_out;
    } else if (!ok) {
      o.status = OutcomeStatus::kServerError;
      o.error_detail = "transport error: " + httplib::to_string(err);
      s.transport_error = true;
    } else if (res.status != 200) {
      o.status = OutcomeStatus::kServerError;
      o.error_detail = "HTTP " + std::to_string(res.status) + ": " + res.body;
    } else if (!saw_done) {
      o.status = OutcomeStatus::kServerError;
      o.error_detail = "stream ended without [DONE]";
      s.transport_error = true;
    } else {
      o.status = OutcomeStatus::kCompleted;
    }
  };

  for (const TraceEvent& e : t.events) {
    if (e.is_send()) workers.emplace_back(run_send, std::cref(e));
  }
  std::vector<const TraceEvent*> controls;
  for (const TraceEvent& e : t.events) {
    if (!e.is_send()) controls.push_back(&e);
  }
  for (const TraceEvent* e : controls) {
    if (e->kind == EventKind::kWait) {
      observe_until = std::max(observe_until, e->offset_ms + e->duration_ms());
      continue;
    }
    std::this_thread::sleep_until(t0 + std::chrono::milliseconds(e->offset_ms));
    auto it = slots.find(e->target());
    if (it == slots.end()) continue;
    Slot& s = *it->second;
    const int64_t now = MsSince(t0);
    ApiCall call = MapEvent(*e, endpoint_.engine_kind, options_.corpus);
    {
      std::lock_guard<std::mutex> lock(s.mu);
      if (e->kind == EventKind::kCancel) {
        s.outcome.cancel_issued_ms = now;
      } else {
        s.outcome.disconnect_issued_ms = now;
      }
    }
    if (call.transport == ApiCall::Transport::kHttpPost) {
      s.cancelled = true;
      httplib::Client cli(endpoint_.base_url);
      cli.Post(call.path, call.body.dump(), "application/json");
    } else {
      if (e->kind == EventKind::kCancel) s.cancelled = true;
      s.abort = true;
    }
  }
  for (std::thread& w : workers) w.join();
  const int64_t settled = MsSince(t0);
  if (observe_until > settled) {
    std::this_thread::sleep_until(t0 + std::chrono::milliseconds(observe_until));
  }

  bool transport_failures = false;
  for (const std::string& id : order) {
    Slot& s = *slots.at(id);
    transport_failures = transport_failures || s.transport_error;
    if (s.outcome.dispatch_ms - s.outcome.intended_offset_ms > options_.schedule_tolerance_ms) {
      report.schedule_degraded = true;
    }
    report.outcomes.push_back(s.outcome);
  }
  if (transport_failures && !Healthy()) {
    report.server_crashed = true;
    report.crash_evidence = "connection lost and health check failed";
    for (const RequestOutcome& o : report.outcomes) {
      if (o.status == OutcomeStatus::kServerError &&
          (!report.crash_time_ms || o.terminal_ms() < *report.crash_time_ms)) {
        report.crash_time_ms = o.terminal_ms();
      }
    }
  }
  report.wall_clock_span_ms = MsSince(t0);
  if (!report.server_crashed && sim_kind) {
    std::this_thread::sleep_for(std::chrono::milliseconds(options_.kv_grace_ms));
  }
  report.observed_until_ms = MsSince(t0);
  if (!report.server_crashed) {
    bool available = false;
    std::vector<KvEvent> kv = CollectKvStream(kv_since, &available);
    report.kv_stream_available = available;
    for (KvEvent& e : kv) {
      e.ts -= server_now;
      report.kv_events.push_back(std::move(e));
    }
  }
  return report;
}

}  // namespace servefuzz::exec
