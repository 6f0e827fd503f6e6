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
#ifndef SERVEFUZZ_ORACLE_ORACLE_H_
#define SERVEFUZZ_ORACLE_ORACLE_H_

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "servefuzz/exec/report.h"
#include "servefuzz/trace/trace.h"

namespace servefuzz::oracle {

enum class SuspicionKind {
  kTimeout,
  kStall,
  kTtftRegression,
  kLifecycleViolation,
  kCorruptedOutput,
  kKvLeak,
  kCrossAdapterReuse,
  kHashConflict,
  kSnapshotDivergence,
  kCrash,
};

std::string_view SuspicionKindName(SuspicionKind kind);
std::optional<SuspicionKind> ParseSuspicionKind(std::string_view name);

// Confirmation strategy for a suspicion.
enum class Route { kRelational, kReproduction, kCrash, kTiming };
Route RouteOf(SuspicionKind kind, std::string_view subtype);

struct Suspicion {
  std::string trace_id;
  SuspicionKind kind = SuspicionKind::kTimeout;
  // Distinguishes variants of one kind, e.g. "family_mismatch".
  std::string subtype;
  nlohmann::json evidence = nlohmann::json::object();
  // Request ids the anomaly implicates. Not part of the fingerprint.
  std::vector<std::string> requests;
  uint64_t fingerprint = 0;
  int severity_hint = 0;

  Route route() const { return RouteOf(kind, subtype); }
};

// Hash of the kind and its order-insensitive signature tokens. Signatures
// carry no request ids or timings.
uint64_t Fingerprint(SuspicionKind kind, std::vector<std::string> signature);

nlohmann::json ToJson(const Suspicion& s);
Suspicion SuspicionFromJson(const nlohmann::json& j);

struct Thresholds {
  double ttft_factor = 10.0;
  int64_t stall_window_ms = 10000;
  int64_t kv_grace_ms = 2000;
  size_t min_baseline_samples = 50;
  // Tokens this long after a Cancel/Disconnect count as still streaming.
  int64_t lifecycle_grace_ms = 50;
};

// Rolling TTFT window over recent non-suspect executions.
class BaselineStats {
 public:
  explicit BaselineStats(size_t window = 2000) : window_(window) {}

  void Add(double ttft_ms);
  size_t count() const { return samples_.size(); }
  bool Ready(size_t min_samples) const { return count() >= min_samples; }
  // Nearest-rank quantile; 0 when empty.
  double Quantile(double q) const;
  double p50() const { return Quantile(0.50); }
  double p95() const { return Quantile(0.95); }
  double p99() const { return Quantile(0.99); }

 private:
  size_t window_;
  std::deque<double> samples_;
};

struct CheckResult {
  std::vector<Suspicion> suspicions;
  // Checks that could not run, with the reason.
  std::vector<std::string> skipped;
};

// Stage-1 checks: timeout, stall, TTFT regression, structural output
// corruption, deterministic-twin mismatch, KV leak and crash.
CheckResult BehavioralCheck(const trace::TimedTrace& trace,
                            const exec::ExecutionReport& report,
                            const BaselineStats& baseline,
                            const Thresholds& thresholds);

// No token progress anywhere for window_ms while a request is in flight and
// the server is alive.
std::optional<Suspicion> DetectStall(const exec::ExecutionReport& report,
                                     int64_t window_ms);

std::vector<Suspicion> LifecycleCheck(const trace::TimedTrace& trace,
                                      const exec::ExecutionReport& report,
                                      const Thresholds& thresholds);

// Block-lifecycle anomalies in one run: cross-adapter reuse, hash conflicts
// and divergent block-hash sets among matched prompts.
std::vector<Suspicion> StructuralForensics(const trace::TimedTrace& trace,
                                           const exec::ExecutionReport& report);

// Matched requests whose block-id sequences differ between two runs of the
// same trace.
std::vector<Suspicion> CrossRunDivergence(const trace::TimedTrace& trace,
                                          const exec::ExecutionReport& a,
                                          const exec::ExecutionReport& b);

// All stages, deduplicated by fingerprint.
CheckResult Evaluate(const trace::TimedTrace& trace,
                     const exec::ExecutionReport& report,
                     const BaselineStats& baseline,
                     const Thresholds& thresholds);

}  // namespace servefuzz::oracle

#endif  // SERVEFUZZ_ORACLE_ORACLE_H_
