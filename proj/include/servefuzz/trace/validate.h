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
#ifndef SERVEFUZZ_TRACE_VALIDATE_H_
#define SERVEFUZZ_TRACE_VALIDATE_H_

#include <cstddef>
#include <string>
#include <vector>

#include "servefuzz/trace/trace.h"

namespace servefuzz::trace {

enum class ViolationKind {
  kOutOfOrder,
  kNegativeOffset,
  kDuplicateTransportId,
  kOrphanedControl,
  kInvalidShape,
  kInvalidSampling,
  kNonPositiveWait,
};

struct Violation {
  size_t event_index = 0;
  ViolationKind kind = ViolationKind::kOutOfOrder;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport Validate(const TimedTrace& trace);

// Stable-sorts by offset, renames duplicate transport ids, drops orphaned
// Cancel/Disconnect events and clamps out-of-range fields. Sends and Waits
// are never dropped. Idempotent.
TimedTrace Repair(const TimedTrace& trace);

}  // namespace servefuzz::trace

#endif  // SERVEFUZZ_TRACE_VALIDATE_H_
