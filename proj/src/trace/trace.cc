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
#include "servefuzz/trace/trace.h"

#include <algorithm>
#include <utility>

namespace servefuzz::trace {

std::string_view EventKindName(EventKind kind) {
  switch (kind) {
    case EventKind::kSend:
      return "send";
    case EventKind::kCancel:
      return "cancel";
    case EventKind::kDisconnect:
      return "disconnect";
    case EventKind::kWait:
      return "wait";
  }
  return "wait";
}

std::optional<EventKind> ParseEventKind(std::string_view name) {
  if (name == "send") return EventKind::kSend;
  if (name == "cancel") return EventKind::kCancel;
  if (name == "disconnect") return EventKind::kDisconnect;
  if (name == "wait") return EventKind::kWait;
  return std::nullopt;
}

TraceEvent TraceEvent::Send(int64_t offset_ms, RequestSpec spec) {
  return TraceEvent{offset_ms, EventKind::kSend, std::move(spec)};
}

TraceEvent TraceEvent::Cancel(int64_t offset_ms, std::string target) {
  return TraceEvent{offset_ms, EventKind::kCancel, std::move(target)};
}

TraceEvent TraceEvent::Disconnect(int64_t offset_ms, std::string target) {
  return TraceEvent{offset_ms, EventKind::kDisconnect, std::move(target)};
}

TraceEvent TraceEvent::Wait(int64_t offset_ms, int64_t duration_ms) {
  return TraceEvent{offset_ms, EventKind::kWait, duration_ms};
}

std::vector<const RequestSpec*> TimedTrace::Sends() const {
  std::vector<const RequestSpec*> sends;
  for (const TraceEvent& e : events) {
    if (e.is_send()) sends.push_back(&e.spec());
  }
  return sends;
}

const RequestSpec* TimedTrace::FindSend(std::string_view request_id) const {
  for (const TraceEvent& e : events) {
    if (e.is_send() && e.spec().request_id == request_id) return &e.spec();
  }
  return nullptr;
}

int64_t TimedTrace::EndOffset() const {
  int64_t end = 0;
  for (const TraceEvent& e : events) {
    end = std::max(end, e.offset_ms);
    if (e.kind == EventKind::kWait) {
      end = std::max(end, e.offset_ms + e.duration_ms());
    }
  }
  return end;
}

}  // namespace servefuzz::trace
