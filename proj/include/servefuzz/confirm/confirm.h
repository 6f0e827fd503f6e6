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
#ifndef SERVEFUZZ_CONFIRM_CONFIRM_H_
#define SERVEFUZZ_CONFIRM_CONFIRM_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "servefuzz/exec/report.h"
#include "servefuzz/exec/target.h"
#include "servefuzz/oracle/oracle.h"
#include "servefuzz/trace/trace.h"

namespace servefuzz::confirm {

enum class Verdict { kPass, kFalsePositive, kTruePositive };
std::string_view VerdictName(Verdict v);

struct ConfirmationVerdict {
  Verdict verdict = Verdict::kPass;
  std::optional<size_t> divergence_position;
  // L_p(y2_p) - L_p(y_p); absent when either token is missing from L_p.
  std::optional<double> delta;
  std::optional<bool> in_top_n;

  bool operator==(const ConfirmationVerdict&) const = default;
};

nlohmann::json ToJson(const ConfirmationVerdict& v);

// The replay logprobs do not cover the divergence position.
class InstrumentationGap : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Smallest differing index; a strict prefix diverges at its own length.
std::optional<size_t> FirstDifference(const std::vector<int32_t>& y,
                                      const std::vector<int32_t>& y2);

// y is the original output, y2 the replay output and L the replay's top-N
// lists. Throws InstrumentationGap when L has no entry at the divergence.
ConfirmationVerdict ConfirmRelational(const std::vector<int32_t>& y,
                                      const std::vector<int32_t>& y2,
                                      const std::vector<exec::PositionLogprobs>& L,
                                      int top_n, double epsilon);

// ceil(2k/3), for k >= 1.
int MajorityThreshold(int k);
// Throws std::invalid_argument unless reproduced.size() == k >= 1.
bool MajorityConfirm(const std::vector<bool>& reproduced, int k);

struct ConfirmConfig {
  int top_n = 5;
  double epsilon = 0.1;
  int k = 3;
  int retry_budget = 2;
  int64_t replay_seed = 20240917;
  oracle::Thresholds thresholds;
  // Implicated requests that get a solo baseline, at most.
  size_t max_timing_victims = 8;
  bool recovery_probe = true;
  int64_t probe_gap_ms = 100;
  std::optional<double> campaign_baseline_p50_ms;
};

// Forces temperature 0, the replay seed and top-N logprobs on every Send.
trace::TimedTrace DeterministicVariant(const trace::TimedTrace& t,
                                       const ConfirmConfig& config);

// The Send of request_id alone at offset 0.
trace::TimedTrace SoloTrace(const trace::TimedTrace& t, std::string_view request_id);

// k executions, each after a reset when the target supports one.
std::vector<exec::ExecutionReport> Replay(const trace::TimedTrace& t,
                                          exec::Target& target, int k);

struct Finding {
  uint64_t fingerprint = 0;
  oracle::SuspicionKind kind = oracle::SuspicionKind::kCrash;
  std::string subtype;
  std::string trace_id;
  nlohmann::json evidence = nlohmann::json::object();
  int replay_count = 0;
  int reproduction_count = 0;
  int duplicate_count = 0;
  // Strongest relational verdict gathered while confirming, if any.
  std::optional<Verdict> relational;
};

nlohmann::json ToJson(const Finding& f);
Finding FindingFromJson(const nlohmann::json& j);

enum class Disposition { kFinding, kDismissed, kRequeue, kUnconfirmable };
std::string_view DispositionName(Disposition d);

struct ConfirmationOutcome {
  Disposition disposition = Disposition::kDismissed;
  oracle::Suspicion suspicion;
  std::optional<Finding> finding;
  nlohmann::json evidence = nlohmann::json::object();
  int replays = 0;
  int reproductions = 0;
  std::optional<Verdict> relational;
};

// Routes by suspicion kind. Infrastructure failures come back as kRequeue
// while retries_left > 0 and as kUnconfirmable after that.
ConfirmationOutcome ConfirmSuspicion(const oracle::Suspicion& suspicion,
                                     const trace::TimedTrace& t,
                                     const exec::ExecutionReport& original,
                                     exec::Target& target,
                                     const ConfirmConfig& config, int retries_left);

}  // namespace servefuzz::confirm

#endif  // SERVEFUZZ_CONFIRM_CONFIRM_H_
