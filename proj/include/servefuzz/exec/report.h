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
#ifndef SERVEFUZZ_EXEC_REPORT_H_
#define SERVEFUZZ_EXEC_REPORT_H_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace servefuzz::exec {

enum class KvEventKind { kAlloc, kFree, kPrefixHit, kEvict, kReuse };

std::string_view KvEventKindName(KvEventKind kind);
std::optional<KvEventKind> ParseKvEventKind(std::string_view name);

// One record of the engine's out-of-band KV block lifecycle stream.
// block_hash is zero for blocks that are not prefix-cacheable.
struct KvEvent {
  int64_t ts = 0;
  KvEventKind kind = KvEventKind::kAlloc;
  int64_t block_id = 0;
  uint64_t block_hash = 0;
  std::string owner_request_id;
  std::string adapter;

  bool operator==(const KvEvent&) const = default;
};

enum class OutcomeStatus {
  kCompleted,
  kCancelled,
  kDisconnected,
  kTimeout,
  kServerError,
};

std::string_view OutcomeStatusName(OutcomeStatus status);
std::optional<OutcomeStatus> ParseOutcomeStatus(std::string_view name);

struct TokenLogprob {
  int32_t token = 0;
  double logprob = 0.0;
  bool operator==(const TokenLogprob&) const = default;
};

// Reported candidates at one position, sorted by descending logprob.
using PositionLogprobs = std::vector<TokenLogprob>;

struct Completion {
  std::vector<int32_t> tokens;
  // Arrival time of each token, ms from trace start.
  std::vector<int64_t> token_times_ms;
  std::optional<std::vector<PositionLogprobs>> logprobs;

  bool operator==(const Completion&) const = default;
};

struct RequestOutcome {
  std::string request_id;
  OutcomeStatus status = OutcomeStatus::kServerError;
  // Present iff at least one token arrived.
  std::optional<int64_t> ttft_ms;
  // Dispatch to terminal state.
  int64_t total_ms = 0;
  int64_t intended_offset_ms = 0;
  int64_t dispatch_ms = 0;
  int64_t requested_max_tokens = 0;
  std::vector<Completion> completions;
  std::optional<std::string> error_detail;
  // When the harness delivered a Cancel/Disconnect for this request.
  std::optional<int64_t> cancel_issued_ms;
  std::optional<int64_t> disconnect_issued_ms;

  int64_t terminal_ms() const { return dispatch_ms + total_ms; }
  bool operator==(const RequestOutcome&) const = default;
};

struct ExecutionReport {
  std::string trace_id;
  // One per Send, in trace order.
  std::vector<RequestOutcome> outcomes;
  std::vector<KvEvent> kv_events;
  bool kv_stream_available = false;
  bool server_crashed = false;
  std::string crash_evidence;
  std::optional<int64_t> crash_time_ms;
  int64_t wall_clock_span_ms = 0;
  // Time up to which the engine was observed (includes the KV grace tail).
  int64_t observed_until_ms = 0;
  // Some Send left the dispatch tolerance window.
  bool schedule_degraded = false;

  const RequestOutcome* Find(std::string_view request_id) const;
  bool operator==(const ExecutionReport&) const = default;
};

nlohmann::json ToJson(const KvEvent& e);
KvEvent KvEventFromJson(const nlohmann::json& j);
nlohmann::json ToJson(const RequestOutcome& o);
RequestOutcome OutcomeFromJson(const nlohmann::json& j);
nlohmann::json ToJson(const ExecutionReport& r);
ExecutionReport ReportFromJson(const nlohmann::json& j);

// Digest of the observable outputs (tokens, logprobs, statuses). Used to
// compare replays.
uint64_t OutputDigest(const ExecutionReport& r);

}  // namespace servefuzz::exec

#endif  // SERVEFUZZ_EXEC_REPORT_H_
