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
#ifndef SERVEFUZZ_TRACE_TRACE_IO_H_
#define SERVEFUZZ_TRACE_TRACE_IO_H_

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "json.hpp"
#include "servefuzz/trace/trace.h"

namespace servefuzz::trace {

// Malformed trace document. For syntax errors byte_offset is the position
// reported by the parser; for schema errors it is absent and json_path names
// the offending element.
class TraceParseError : public std::runtime_error {
 public:
  TraceParseError(const std::string& what, std::optional<size_t> byte_offset,
                  std::string json_path)
      : std::runtime_error(what),
        byte_offset_(byte_offset),
        json_path_(std::move(json_path)) {}

  std::optional<size_t> byte_offset() const { return byte_offset_; }
  const std::string& json_path() const { return json_path_; }

 private:
  std::optional<size_t> byte_offset_;
  std::string json_path_;
};

nlohmann::json ToJson(const RequestSpec& spec);
RequestSpec RequestSpecFromJson(const nlohmann::json& j,
                                const std::string& path = "");
nlohmann::json ToJson(const TimedTrace& trace);
TimedTrace TraceFromJson(const nlohmann::json& j);

std::string Serialize(const TimedTrace& trace);
TimedTrace Deserialize(std::string_view bytes);

TimedTrace LoadTrace(const std::string& path);
void SaveTrace(const TimedTrace& trace, const std::string& path);

}  // namespace servefuzz::trace

#endif  // SERVEFUZZ_TRACE_TRACE_IO_H_
