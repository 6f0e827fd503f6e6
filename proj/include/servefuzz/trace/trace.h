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
#ifndef SERVEFUZZ_TRACE_TRACE_H_
#define SERVEFUZZ_TRACE_TRACE_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace servefuzz::trace {

// Adapter name used when a request does not select a LoRA adapter.
inline constexpr std::string_view kBaseAdapter = "BASE";

struct PromptShape {
  int64_t prefix_len = 0;
  int64_t prompt_len = 0;

  bool Valid() const {
    return prefix_len >= 0 && prompt_len >= 0 && prefix_len <= prompt_len;
  }
  bool operator==(const PromptShape&) const = default;
};

struct SamplingConfig {
  int64_t max_tokens = 16;
  double temperature = 0.0;
  std::optional<int64_t> seed;
  // Top-N logprobs to report per position; absent means not requested.
  std::optional<int> logprobs;
  int n_completions = 1;

  bool Deterministic() const { return temperature == 0.0 && seed.has_value(); }
  bool operator==(const SamplingConfig&) const = default;
};

struct RequestSpec {
  // Transport instance; targeted by Cancel/Disconnect.
  std::string request_id;
  // Semantic prompt identity. Equal family and shape give equal prompts.
  std::optional<std::string> prompt_family_id;
  PromptShape shape;
  SamplingConfig sampling;
  std::optional<std::string> adapter;
  bool stream = true;

  std::string_view PromptIdentity() const {
    return prompt_family_id ? std::string_view(*prompt_family_id)
                            : std::string_view(request_id);
  }
  std::string_view AdapterName() const {
    return adapter ? std::string_view(*adapter) : kBaseAdapter;
  }
  bool operator==(const RequestSpec&) const = default;
};

enum class EventKind { kSend, kCancel, kDisconnect, kWait };

std::string_view EventKindName(EventKind kind);
std::optional<EventKind> ParseEventKind(std::string_view name);

struct TraceEvent {
  int64_t offset_ms = 0;
  EventKind kind = EventKind::kWait;
  // RequestSpec for Send, target request_id for Cancel/Disconnect,
  // duration_ms for Wait.
  std::variant<RequestSpec, std::string, int64_t> payload = int64_t{1};

  static TraceEvent Send(int64_t offset_ms, RequestSpec spec);
  static TraceEvent Cancel(int64_t offset_ms, std::string target);
  static TraceEvent Disconnect(int64_t offset_ms, std::string target);
  static TraceEvent Wait(int64_t offset_ms, int64_t duration_ms);

  bool is_send() const { return kind == EventKind::kSend; }
  bool is_control() const {
    return kind == EventKind::kCancel || kind == EventKind::kDisconnect;
  }
  const RequestSpec& spec() const { return std::get<RequestSpec>(payload); }
  RequestSpec& spec() { return std::get<RequestSpec>(payload); }
  const std::string& target() const { return std::get<std::string>(payload); }
  std::string& target() { return std::get<std::string>(payload); }
  int64_t duration_ms() const { return std::get<int64_t>(payload); }

  bool operator==(const TraceEvent&) const = default;
};

struct TimedTrace {
  std::string trace_id;
  int64_t base_time = 0;
  std::vector<TraceEvent> events;
  // Parent ids, mutation lineage and other annotations.
  std::map<std::string, std::string> metadata;

  // Sends in event order.
  std::vector<const RequestSpec*> Sends() const;
  const RequestSpec* FindSend(std::string_view request_id) const;
  // Last offset at which the trace still acts (Wait ends included).
  int64_t EndOffset() const;

  bool operator==(const TimedTrace&) const = default;
};

}  // namespace servefuzz::trace

#endif  // SERVEFUZZ_TRACE_TRACE_H_
