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
#ifndef SERVEFUZZ_CAMPAIGN_CAMPAIGN_H_
#define SERVEFUZZ_CAMPAIGN_CAMPAIGN_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "servefuzz/confirm/confirm.h"
#include "servefuzz/exec/report.h"
#include "servefuzz/exec/target.h"
#include "servefuzz/exec/telemetry.h"
#include "servefuzz/mutation/mutation.h"
#include "servefuzz/oracle/oracle.h"
#include "servefuzz/trace/trace.h"
#include "servefuzz/util/rng.h"

namespace servefuzz::campaign {

// Reporting only; never fed back into the search unless explicitly enabled.
struct PressureScore {
  double s_total = 0.0;
  double burst = 0.0;
  double multi_adapter = 0.0;
  double kv_pressure = 0.0;
  double shape_diversity = 0.0;
  int64_t n_send = 0;
  int64_t n_adapter = 0;
  int64_t n_kv = 0;
  int64_t n_shape = 0;
};

PressureScore ScorePressure(int64_t n_send, int64_t n_adapter, int64_t n_kv,
                            int64_t n_shape);
PressureScore ScorePressure(const exec::TelemetrySummary& telemetry);
nlohmann::json ToJson(const PressureScore& p);

struct MutationWeights {
  double timing_jitter = 0.15;
  double timing_collapse = 0.15;
  double event = 0.40;
  double splice = 0.10;
  double directed_splice = 0.20;

  std::vector<double> AsVector() const {
    return {timing_jitter, timing_collapse, event, splice, directed_splice};
  }
};

struct SelectionWeights {
  double floor = 0.05;
  double novelty = 0.40;
  double suspicion = 0.40;
  double pressure = 0.15;
  // The pressure term only counts when this is set.
  bool pressure_in_selection = false;
};

struct RetentionPolicy {
  size_t max_corpus = 256;
};

// Named seed profiles: "default", "lora", "prefix-sharing".
mutation::SeedProfile NamedProfile(const std::string& name);

struct CampaignConfig {
  uint64_t rng_seed = 1;
  int64_t max_iterations = 1000;
  // Wall-clock limit in seconds; zero means none.
  double time_budget_s = 0.0;
  MutationWeights mutation;
  SelectionWeights selection;
  oracle::Thresholds thresholds;
  confirm::ConfirmConfig confirmation;
  exec::EngineEndpoint endpoint;
  std::map<std::string, std::string> engine_flags;
  RetentionPolicy retention;
  std::string profile_name = "default";
  mutation::SeedProfile profile;
  int bootstrap_seeds = 4;
  std::vector<double> jitter_intensities = {0.002, 0.01, 0.05};
  int64_t telemetry_window_ms = 1000;
  // Confirmations per fingerprint before backing off to power-of-two
  // occurrences.
  int max_confirmations_per_fingerprint = 3;
  bool stop_on_first_finding = false;
  bool minimize_crashes = false;
  std::string output_dir;

  // Empty when valid.
  std::string Validate() const;
};

nlohmann::json ToJson(const CampaignConfig& c);
// Unknown keys are rejected; missing keys keep their defaults.
CampaignConfig CampaignConfigFromJson(const nlohmann::json& j);

struct CorpusEntry {
  trace::TimedTrace trace;
  std::vector<std::string> parents;
  std::string mutation;
  exec::ExecutionReport report;
  exec::TelemetrySummary telemetry;
  PressureScore pressure;
  std::set<std::string> novelty;
  std::vector<std::string> suspicion_history;
  int64_t added_iteration = 0;
  int64_t selections = 0;
};

// Remembers every bucket seen so far.
class NoveltyTracker {
 public:
  // Markers of report not seen before; does not record them.
  std::set<std::string> Peek(const exec::ExecutionReport& report) const;
  // Peek, then record.
  std::set<std::string> Observe(const exec::ExecutionReport& report);
  size_t size() const { return seen_.size(); }

 private:
  std::set<std::string> seen_;
};

// Every bucket the report falls into.
std::set<std::string> Buckets(const exec::ExecutionReport& report);

class Corpus {
 public:
  Corpus(SelectionWeights weights, RetentionPolicy retention)
      : weights_(weights), retention_(retention) {}

  // Returns false when the entry was not kept.
  bool Add(CorpusEntry entry);
  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const CorpusEntry& at(size_t i) const { return entries_.at(i); }
  CorpusEntry& at(size_t i) { return entries_.at(i); }
  const std::vector<CorpusEntry>& entries() const { return entries_; }

  // Selection probabilities; each is at least floor / size().
  std::vector<double> Weights() const;
  size_t Select(Rng& rng);
  double Score(const CorpusEntry& e) const;

 private:
  SelectionWeights weights_;
  RetentionPolicy retention_;
  std::vector<CorpusEntry> entries_;
};

struct DedupOutcome {
  bool duplicate = false;
  size_t index = 0;
};

class FindingStore {
 public:
  // Equal fingerprints are duplicates; the original's counter goes up.
  DedupOutcome Add(confirm::Finding finding);
  bool Contains(uint64_t fingerprint) const;
  const std::vector<confirm::Finding>& findings() const { return findings_; }

 private:
  std::vector<confirm::Finding> findings_;
};

using Predicate = std::function<bool(const trace::TimedTrace&)>;

// Majority of k evaluations, stopping once the outcome is settled.
bool MajorityHolds(const Predicate& predicate, const trace::TimedTrace& t, int k);

struct MinimizeResult {
  trace::TimedTrace trace;
  bool refused = false;
  std::vector<nlohmann::json> log;
  int predicate_calls = 0;
};

// ddmin over events, then a single-removal pass to 1-minimality, then gap
// collapse toward zero, then 1-minimality again.
MinimizeResult Minimize(const trace::TimedTrace& t, const Predicate& predicate, int k);

// Executes on target after a reset and checks for the suspicion again: a
// crash for crash kinds, an equal fingerprint otherwise.
Predicate ReproducePredicate(exec::Target& target, const oracle::Suspicion& suspicion,
                             const oracle::Thresholds& thresholds);

struct IterationRecord {
  int64_t iteration = 0;
  std::string trace_id;
  std::string mutation;
  PressureScore pressure;
  double best_pressure = 0.0;
  size_t suspicions = 0;
  size_t novelty = 0;
  bool crashed = false;
};

struct ConfirmationRecord {
  int64_t iteration = 0;
  oracle::Suspicion suspicion;
  confirm::Disposition disposition = confirm::Disposition::kDismissed;
  std::optional<confirm::Verdict> relational;
  nlohmann::json evidence;
};

struct CampaignSummary {
  int64_t iterations = 0;
  std::vector<std::string> executed_trace_ids;
  std::vector<confirm::Finding> findings;
  std::map<uint64_t, trace::TimedTrace> finding_traces;
  std::map<uint64_t, MinimizeResult> minimized;
  std::vector<ConfirmationRecord> confirmations;
  std::map<std::string, int64_t> suspicion_counts;
  std::map<std::string, int64_t> first_finding_iteration;
  std::vector<IterationRecord> series;
  size_t corpus_size = 0;
  double baseline_p50_ms = 0.0;
  size_t baseline_samples = 0;
  double elapsed_s = 0.0;
  bool aborted = false;
  std::string abort_reason;

  size_t CountDisposition(confirm::Disposition d) const;
};

nlohmann::json ToJson(const CampaignSummary& s);

class Campaign {
 public:
  // Confirmation replays run on confirm_target so they never interleave
  // with campaign executions on one engine.
  Campaign(CampaignConfig config, exec::Target& target, exec::Target& confirm_target);

  CampaignSummary Run();
  const Corpus& corpus() const { return corpus_; }
  const oracle::BaselineStats& baseline() const { return baseline_; }

  // summary.json, pressure_series.csv, findings/ and corpus/ under dir.
  void Persist(const CampaignSummary& summary, const std::string& dir) const;

 private:
  struct Executed {
    exec::ExecutionReport report;
    oracle::CheckResult checks;
    exec::TelemetrySummary telemetry;
  };
  Executed ExecuteAndCheck(const trace::TimedTrace& t);
  trace::TimedTrace Mutate(int64_t iteration, std::string& kind_name);
  void Confirm(const trace::TimedTrace& t, const Executed& run, int64_t iteration,
               CampaignSummary& summary);
  void Consider(trace::TimedTrace t, std::vector<std::string> parents, std::string mutation,
                int64_t iteration, CampaignSummary& summary);
  void RecoverTarget();

  CampaignConfig config_;
  exec::Target& target_;
  exec::Target& confirm_target_;
  Corpus corpus_;
  NoveltyTracker novelty_;
  FindingStore findings_;
  oracle::BaselineStats baseline_;
  mutation::MutationPalette palette_;
  std::map<uint64_t, int> confirm_attempts_;
  Rng rng_;
  double best_pressure_ = 0.0;
};

}  // namespace servefuzz::campaign

#endif  // SERVEFUZZ_CAMPAIGN_CAMPAIGN_H_
