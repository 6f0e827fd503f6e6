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
#include "servefuzz/trace/trace_io.h"

#include <fstream>
#include <sstream>

namespace servefuzz::trace {
namespace {

using nlohmann::json;

[[noreturn]] void SchemaError(const std::string& path,
                              const std::string& message) {
  throw TraceParseError("trace schema error at " + (path.empty() ? "/" : path) +
                            ": " + message,
                        std::nullopt, path.empty() ? "/" : path);
}

const json& Field(const json& j, const char* key, const std::string& path) {
  if (!j.is_object()) SchemaError(path, "expected object");
  auto it = j.find(key);
  if (it == j.end()) SchemaError(path, std::string("missing field '") + key + "'");
  return *it;
}

int64_t IntField(const json& j, const char* key, const std::string& path) {
  const json& v = Field(j, key, path);
  if (!v.is_number_integer()) {
    SchemaError(path + "/" + key, "expected integer");
  }
  return v.get<int64_t>();
}

std::string StringField(const json& j, const char* key,
                        const std::string& path) {
  const json& v = Field(j, key, path);
  if (!v.is_string()) SchemaError(path + "/" + key, "expected string");
  return v.get<std::string>();
}

}  // namespace

json ToJson(const RequestSpec& spec) {
  json sampling = {{"max_tokens", spec.sampling.max_tokens},
                   {"temperature", spec.sampling.temperature},
                   {"n_completions", spec.sampling.n_completions}};
  if (spec.sampling.seed) sampling["seed"] = *spec.sampling.seed;
  if (spec.sampling.logprobs) sampling["logprobs"] = *spec.sampling.logprobs;
  json j = {{"request_id", spec.request_id},
            {"shape",
             {{"prefix_len", spec.shape.prefix_len},
              {"prompt_len", spec.shape.prompt_len}}},
            {"sampling", std::move(sampling)},
            {"stream", spec.stream}};
  if (spec.prompt_family_id) j["prompt_family_id"] = *spec.prompt_family_id;
  if (spec.adapter) j["adapter"] = *spec.adapter;
  return j;
}

RequestSpec RequestSpecFromJson(const json& j, const std::string& path) {
  RequestSpec spec;
  spec.request_id = StringField(j, "request_id", path);
  if (j.contains("prompt_family_id")) {
    spec.prompt_family_id = StringField(j, "prompt_family_id", path);
  }
  if (j.contains("adapter")) spec.adapter = StringField(j, "adapter", path);
  const json& shape = Field(j, "shape", path);
  spec.shape.prefix_len = IntField(shape, "prefix_len", path + "/shape");
  spec.shape.prompt_len = IntField(shape, "prompt_len", path + "/shape");
  const std::string spath = path + "/sampling";
  const json& s = Field(j, "sampling", path);
  spec.sampling.max_tokens = IntField(s, "max_tokens", spath);
  const json& temperature = Field(s, "temperature", spath);
  if (!temperature.is_number()) {
    SchemaError(spath + "/temperature", "expected number");
  }
  spec.sampling.temperature = temperature.get<double>();
  spec.sampling.n_completions =
      static_cast<int>(IntField(s, "n_completions", spath));
  if (s.contains("seed")) spec.sampling.seed = IntField(s, "seed", spath);
  if (s.contains("logprobs")) {
    spec.sampling.logprobs = static_cast<int>(IntField(s, "logprobs", spath));
  }
  if (j.contains("stream")) {
    const json& stream = j.at("stream");
    if (!stream.is_boolean()) SchemaError(path + "/stream", "expected boolean");
    spec.stream = stream.get<bool>();
  }
  return spec;
}

json ToJson(const TimedTrace& trace) {
  json events = json::array();
  for (const TraceEvent& e : trace.events) {
    json ev = {{"offset_ms", e.offset_ms},
               {"kind", std::string(EventKindName(e.kind))}};
    switch (e.kind) {
      case EventKind::kSend:
        ev["request"] = ToJson(e.spec());
        break;
      case EventKind::kCancel:
      case EventKind::kDisconnect:
        ev["target"] = e.target();
        break;
      case EventKind::kWait:
        ev["duration_ms"] = e.duration_ms();
        break;
    }
    events.push_back(std::move(ev));
  }
  json metadata = json::object();
  for (const auto& [k, v] : trace.metadata) metadata[k] = v;
  return json{{"trace_id", trace.trace_id},
              {"base_time", trace.base_time},
              {"events", std::move(events)},
              {"metadata", std::move(metadata)}};
}

TimedTrace TraceFromJson(const json& j) {
  TimedTrace trace;
  trace.trace_id = StringField(j, "trace_id", "");
  trace.base_time = IntField(j, "base_time", "");
  const json& events = Field(j, "events", "");
  if (!events.is_array()) SchemaError("/events", "expected array");
  for (size_t i = 0; i < events.size(); ++i) {
    const std::string path = "/events/" + std::to_string(i);
    const json& ev = events[i];
    const int64_t offset = IntField(ev, "offset_ms", path);
    const std::string kind_name = StringField(ev, "kind", path);
    const std::optional<EventKind> kind = ParseEventKind(kind_name);
    if (!kind) SchemaError(path + "/kind", "unknown event kind '" + kind_name + "'");
    switch (*kind) {
      case EventKind::kSend:
        trace.events.push_back(TraceEvent::Send(
            offset,
            RequestSpecFromJson(Field(ev, "request", path), path + "/request")));
        break;
      case EventKind::kCancel:
        trace.events.push_back(
            TraceEvent::Cancel(offset, StringField(ev, "target", path)));
        break;
      case EventKind::kDisconnect:
        trace.events.push_back(
            TraceEvent::Disconnect(offset, StringField(ev, "target", path)));
        break;
      case EventKind::kWait:
        trace.events.push_back(
            TraceEvent::Wait(offset, IntField(ev, "duration_ms", path)));
        break;
    }
  }
  if (j.contains("metadata")) {
    const json& metadata = j.at("metadata");
    if (!metadata.is_object()) SchemaError("/metadata", "expected object");
    for (const auto& [k, v] : metadata.items()) {
      if (!v.is_string()) SchemaError("/metadata/" + k, "expected string");
      trace.metadata[k] = v.get<std::string>();
    }
  }
  return trace;
}

std::string Serialize(const TimedTrace& trace) {
  return ToJson(trace).dump(2) + "\n";
}

TimedTrace Deserialize(std::string_view bytes) {
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw TraceParseError("trace syntax error at byte " +
                              std::to_string(e.byte) + ": " + e.what(),
                          e.byte, "");
  }
  return TraceFromJson(j);
}

TimedTrace LoadTrace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return Deserialize(buffer.str());
}

void SaveTrace(const TimedTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write trace file " + path);
  out << Serialize(trace);
}

}  // namespace servefuzz::trace
