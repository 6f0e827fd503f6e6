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
#include "servefuzz/exec/report.h"

#include <cstring>

#include "servefuzz/util/hash.h"

namespace servefuzz::exec {

using nlohmann::json;

std::string_view KvEventKindName(KvEventKind kind) {
  switch (kind) {
    case KvEventKind::kAlloc:
      return "alloc";
    case KvEventKind::kFree:
      return "free";
    case KvEventKind::kPrefixHit:
      return "prefix_hit";
    case KvEventKind::kEvict:
      return "evict";
    case KvEventKind::kReuse:
      return "reuse";
  }
  return "alloc";
}

std::optional<KvEventKind> ParseKvEventKind(std::string_view name) {
  for (KvEventKind k : {KvEventKind::kAlloc, KvEventKind::kFree,
                        KvEventKind::kPrefixHit, KvEventKind::kEvict,
                        KvEventKind::kReuse}) {
    if (KvEventKindName(k) == name) return k;
  }
  return std::nullopt;
}

std::string_view OutcomeStatusName(OutcomeStatus status) {
  switch (status) {
    case OutcomeStatus::kCompleted:
      return "completed";
    case OutcomeStatus::kCancelled:
      return "cancelled";
    case OutcomeStatus::kDisconnected:
      return "disconnected";
    case OutcomeStatus::kTimeout:
      return "timeout";
    case OutcomeStatus::kServerError:
      return "server_error";
  }
  return "server_error";
}

std::optional<OutcomeStatus> ParseOutcomeStatus(std::string_view name) {
  for (OutcomeStatus s :
       {OutcomeStatus::kCompleted, OutcomeStatus::kCancelled,
        OutcomeStatus::kDisconnected, OutcomeStatus::kTimeout,
        OutcomeStatus::kServerError}) {
    if (OutcomeStatusName(s) == name) return s;
  }
  return std::nullopt;
}

const RequestOutcome* ExecutionReport::Find(std::string_view request_id) const {
  for (const RequestOutcome& o : outcomes) {
    if (o.request_id == request_id) return &o;
  }
  return nullptr;
}

json ToJson(const KvEvent& e) {
  return json{{"ts", e.ts},
              {"kind", std::string(KvEventKindName(e.kind))},
              {"block_id", e.block_id},
              {"block_hash", e.block_hash},
              {"owner_request_id", e.owner_request_id},
              {"adapter", e.adapter}};
}

KvEvent KvEventFromJson(const json& j) {
  KvEvent e;
  e.ts = j.at("ts").get<int64_t>();
  const auto kind = ParseKvEventKind(j.at("kind").get<std::string>());
  if (!kind) throw std::runtime_error("unknown kv event kind");
  e.kind = *kind;
  e.block_id = j.at("block_id").get<int64_t>();
  e.block_hash = j.at("block_hash").get<uint64_t>();
  e.owner_request_id = j.at("owner_request_id").get<std::string>();
  e.adapter = j.at("adapter").get<std::string>();
  return e;
}

json ToJson(const RequestOutcome& o) {
  json completions = json::array();
  for (const Completion& c : o.completions) {
    json cj = {{"tokens", c.tokens}, {"token_times_ms", c.token_times_ms}};
    if (c.logprobs) {
      json positions = json::array();
      for (const PositionLogprobs& p : *c.logprobs) {
        json entries = json::array();
        for (const TokenLogprob& t : p) entries.push_back({t.token, t.logprob});
        positions.push_back(std::move(entries));
      }
      cj["logprobs"] = std::move(positions);
    }
    completions.push_back(std::move(cj));
  }
  json j = {{"request_id", o.request_id},
            {"status", std::string(OutcomeStatusName(o.status))},
            {"total_ms", o.total_ms},
            {"intended_offset_ms", o.intended_offset_ms},
            {"dispatch_ms", o.dispatch_ms},
            {"requested_max_tokens", o.requested_max_tokens},
            {"completions", std::move(completions)}};
  if (o.ttft_ms) j["ttft_ms"] = *o.ttft_ms;
  if (o.error_detail) j["error_detail"] = *o.error_detail;
  if (o.cancel_issued_ms) j["cancel_issued_ms"] = *o.cancel_issued_ms;
  if (o.disconnect_issued_ms) {
    j["disconnect_issued_ms"] = *o.disconnect_issued_ms;
  }
  return j;
}

RequestOutcome OutcomeFromJson(const json& j) {
  RequestOutcome o;
  o.request_id = j.at("request_id").get<std::string>();
  const auto status = ParseOutcomeStatus(j.at("status").get<std::string>());
  if (!status) throw std::runtime_error("unknown outcome status");
  o.status = *status;
  o.total_ms = j.at("total_ms").get<int64_t>();
  o.intended_offset_ms = j.at("intended_offset_ms").get<int64_t>();
  o.dispatch_ms = j.at("dispatch_ms").get<int64_t>();
  o.requested_max_tokens = j.value("requested_max_tokens", int64_t{0});
  for (const json& cj : j.at("completions")) {
    Completion c;
    c.tokens = cj.at("tokens").get<std::vector<int32_t>>();
    c.token_times_ms = cj.at("token_times_ms").get<std::vector<int64_t>>();
    if (cj.contains("logprobs")) {
      std::vector<PositionLogprobs> positions;
      for (const json& pj : cj.at("logprobs")) {
        PositionLogprobs p;
        for (const json& t : pj) {
          p.push_back({t.at(0).get<int32_t>(), t.at(1).get<double>()});
        }
        positions.push_back(std::move(p));
      }
      c.logprobs = std::move(positions);
    }
    o.completions.push_back(std::move(c));
  }
  if (j.contains("ttft_ms")) o.ttft_ms = j.at("ttft_ms").get<int64_t>();
  if (j.contains("error_detail")) {
    o.error_detail = j.at("error_detail").get<std::string>();
  }
  if (j.contains("cancel_issued_ms")) {
    o.cancel_issued_ms = j.at("cancel_issued_ms").get<int64_t>();
  }
  if (j.contains("disconnect_issued_ms")) {
    o.disconnect_issued_ms = j.at("disconnect_issued_ms").get<int64_t>();
  }
  return o;
}

json ToJson(const ExecutionReport& r) {
  json outcomes = json::array();
  for (const RequestOutcome& o : r.outcomes) outcomes.push_back(ToJson(o));
  json events = json::array();
  for (const KvEvent& e : r.kv_events) events.push_back(ToJson(e));
  json j = {{"trace_id", r.trace_id},
            {"outcomes", std::move(outcomes)},
            {"kv_events", std::move(events)},
            {"kv_stream_available", r.kv_stream_available},
            {"server_crashed", r.server_crashed},
            {"crash_evidence", r.crash_evidence},
            {"wall_clock_span_ms", r.wall_clock_span_ms},
            {"observed_until_ms", r.observed_until_ms},
            {"schedule_degraded", r.schedule_degraded}};
  if (r.crash_time_ms) j["crash_time_ms"] = *r.crash_time_ms;
  return j;
}

ExecutionReport ReportFromJson(const json& j) {
  ExecutionReport r;
  r.trace_id = j.at("trace_id").get<std::string>();
  for (const json& o : j.at("outcomes")) r.outcomes.push_back(OutcomeFromJson(o));
  for (const json& e : j.at("kv_events")) r.kv_events.push_back(KvEventFromJson(e));
  r.kv_stream_available = j.at("kv_stream_available").get<bool>();
  r.server_crashed = j.at("server_crashed").get<bool>();
  r.crash_evidence = j.at("crash_evidence").get<std::string>();
  r.wall_clock_span_ms = j.at("wall_clock_span_ms").get<int64_t>();
  r.observed_until_ms = j.value("observed_until_ms", int64_t{0});
  r.schedule_degraded = j.at("schedule_degraded").get<bool>();
  if (j.contains("crash_time_ms")) {
    r.crash_time_ms = j.at("crash_time_ms").get<int64_t>();
  }
  return r;
}

uint64_t OutputDigest(const ExecutionReport& r) {
  uint64_t h = HashString("outputs");
  for (const RequestOutcome& o : r.outcomes) {
    h = HashCombine(h, HashString(o.request_id));
    h = HashCombine(h, static_cast<uint64_t>(o.status));
    for (const Completion& c : o.completions) {
      for (int32_t t : c.tokens) h = HashCombine(h, static_cast<uint64_t>(t));
      if (!c.logprobs) continue;
      for (const PositionLogprobs& p : *c.logprobs) {
        for (const TokenLogprob& t : p) {
          uint64_t bits;
          std::memcpy(&bits, &t.logprob, sizeof(bits));
          h = HashCombine(HashCombine(h, static_cast<uint64_t>(t.token)), bits);
        }
      }
    }
  }
  h = HashCombine(h, r.server_crashed ? 1 : 0);
  return h;
}

}  // namespace servefuzz::exec
