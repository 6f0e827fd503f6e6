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
#include <algorithm>
#include <cmath>
#include <numeric>

#include "servefuzz/campaign/campaign.h"

namespace servefuzz::campaign {

using nlohmann::json;

PressureScore ScorePressure(int64_t n_send, int64_t n_adapter, int64_t n_kv,
                            int64_t n_shape) {
  PressureScore p;
  p.n_send = std::max<int64_t>(n_send, 0);
  p.n_adapter = std::max<int64_t>(n_adapter, 0);
  p.n_kv = std::max<int64_t>(n_kv, 0);
  p.n_shape = std::max<int64_t>(n_shape, 0);
  p.burst = static_cast<double>(p.n_send) / 20.0;
  p.multi_adapter = static_cast<double>(p.n_adapter) / 6.0;
  p.kv_pressure = static_cast<double>(p.n_kv) / 1500.0;
  p.shape_diversity = static_cast<double>(p.n_shape) / 6.0;
  p.s_total = p.burst + p.multi_adapter + p.kv_pressure + p.shape_diversity;
  return p;
}

PressureScore ScorePressure(const exec::TelemetrySummary& t) {
  return ScorePressure(t.max_concurrent_sends, t.distinct_adapters, t.kv_peak_blocks,
                       t.distinct_prompt_lens);
}

json ToJson(const PressureScore& p) {
  return {{"s_total", p.s_total},
          {"components",
           {{"burst", p.burst},
            {"multi_adapter", p.multi_adapter},
            {"kv_pressure", p.kv_pressure},
            {"shape_diversity", p.shape_diversity}}},
          {"counters",
           {{"n_send", p.n_send},
            {"n_adapter", p.n_adapter},
            {"n_kv", p.n_kv},
            {"n_shape", p.n_shape}}}};
}

std::set<std::string> Buckets(const exec::ExecutionReport& r) {
  std::set<std::string> out;
  std::set<std::string> statuses;
  int64_t max_ttft = -1;
  for (const exec::RequestOutcome& o : r.outcomes) {
    statuses.insert(std::string(exec::OutcomeStatusName(o.status)));
    if (o.ttft_ms) max_ttft = std::max(max_ttft, *o.ttft_ms);
  }
  std::string combo;
  for (const std::string& s : statuses) combo += (combo.empty() ? "" : "+") + s;
  out.insert("status:" + combo);
  if (max_ttft >= 0) {
    // Decades: 1e1 covers 10..99 ms.
    int decade = static_cast<int>(std::floor(std::log10(std::max<int64_t>(max_ttft, 1))));
    out.insert("ttft:1e" + std::to_string(decade) + "ms");
  }
  int64_t peak = exec::PeakHeldBlocks(r.kv_events);
  out.insert("kvpeak:2^" + std::to_string(static_cast<int>(std::log2(peak + 1))));
  for (size_t i = 0; i < r.kv_events.size(); ++i) {
    std::string kind(exec::KvEventKindName(r.kv_events[i].kind));
    out.insert("kv-kind:" + kind);
    if (i + 1 < r.kv_events.size()) {
      out.insert("kv-2gram:" + kind + ">" +
                 std::string(exec::KvEventKindName(r.kv_events[i + 1].kind)));
    }
  }
  if (r.server_crashed) out.insert("crash:" + r.crash_evidence);
  return out;
}

std::set<std::string> NoveltyTracker::Peek(const exec::ExecutionReport& report) const {
  std::set<std::string> fresh;
  for (const std::string& b : Buckets(report)) {
    if (!seen_.count(b)) fresh.insert(b);
  }
  return fresh;
}

std::set<std::string> NoveltyTracker::Observe(const exec::ExecutionReport& report) {
  std::set<std::string> fresh = Peek(report);
  seen_.insert(fresh.begin(), fresh.end());
  return fresh;
}

double Corpus::Score(const CorpusEntry& e) const {
  const double age = static_cast<double>(e.selections);
  double novelty = e.novelty.empty() ? 0.0 : 1.0 / (1.0 + age / 8.0);
  double suspicion = e.suspicion_history.empty() ? 0.0 : 1.0;
  double pressure =
      weights_.pressure_in_selection ? std::min(1.0, e.pressure.s_total / 4.0) : 0.0;
  return weights_.novelty * novelty + weights_.suspicion * suspicion +
         weights_.pressure * pressure;
}

std::vector<double> Corpus::Weights() const {
  const size_t n = entries_.size();
  std::vector<double> scores;
  for (const CorpusEntry& e : entries_) scores.push_back(Score(e));
  const double total = std::accumulate(scores.begin(), scores.end(), 0.0);
  std::vector<double> w(n);
  for (size_t i = 0; i < n; ++i) {
    double share = total > 0 ? scores[i] / total : 1.0 / static_cast<double>(n);
    w[i] = weights_.floor / static_cast<double>(n) + (1.0 - weights_.floor) * share;
  }
  return w;
}

size_t Corpus::Select(Rng& rng) {
  size_t i = entries_.size() == 1 ? 0 : rng.WeightedIndex(Weights());
  ++entries_[i].selections;
  return i;
}

bool Corpus::Add(CorpusEntry entry) {
  entries_.push_back(std::move(entry));
  if (entries_.size() <= retention_.max_corpus) return true;
  std::optional<size_t> victim;
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (!entries_[i].suspicion_history.empty()) continue;
    if (!victim || Score(entries_[i]) < Score(entries_[*victim])) victim = i;
  }
  if (!victim) return true;
  const bool kept = *victim != entries_.size() - 1;
  entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(*victim));
  return kept;
}

DedupOutcome FindingStore::Add(confirm::Finding finding) {
  for (size_t i = 0; i < findings_.size(); ++i) {
    if (findings_[i].fingerprint == finding.fingerprint) {
      ++findings_[i].duplicate_count;
      return {true, i};
    }
  }
  findings_.push_back(std::move(finding));
  return {false, findings_.size() - 1};
}

bool FindingStore::Contains(uint64_t fingerprint) const {
  return std::any_of(findings_.begin(), findings_.end(),
                     [&](const confirm::Finding& f) { return f.fingerprint == fingerprint; });
}

mutation::SeedProfile NamedProfile(const std::string& name) {
  mutation::SeedProfile p;
  if (name == "default") return p;
  if (name == "lora") {
    p.n_requests = 24;
    p.shape_palette = {{0, 48}, {16, 96}, {32, 160}, {0, 256}, {64, 320}, {0, 1536}};
    p.adapter_palette = {"BASE", "lora_a", "lora_b", "lora_c", "lora_d", "lora_e", "lora_f"};
    p.burst_window_ms = 6;
    p.kv_filler_count = 6;
    p.filler_max_tokens = 64;
    p.max_tokens = 16;
    return p;
  }
  if (name == "prefix-sharing") {
    p.n_requests = 10;
    p.shape_palette = {{64, 96}, {64, 128}, {128, 160}, {0, 2048}};
    p.burst_window_ms = 6;
    p.burst_start_ms = 30;
    p.kv_filler_count = 13;
    p.filler_max_tokens = 64;
    p.family_pool = 3;
    p.max_tokens = 8;
    return p;
  }
  throw std::invalid_argument("unknown seed profile: " + name);
}

std::string CampaignConfig::Validate() const {
  if (max_iterations < 0) return "max_iterations must be non-negative";
  if (time_budget_s < 0) return "time_budget_s must be non-negative";
  std::vector<double> mw = mutation.AsVector();
  for (double w : mw) {
    if (w < 0) return "mutation weights must be non-negative";
  }
  if (std::abs(std::accumulate(mw.begin(), mw.end(), 0.0) - 1.0) > 1e-9) {
    return "mutation weights must sum to 1";
  }
  const SelectionWeights& s = selection;
  if (s.floor < 0 || s.novelty < 0 || s.suspicion < 0 || s.pressure < 0) {
    return "selection weights must be non-negative";
  }
  if (std::abs(s.floor + s.novelty + s.suspicion + s.pressure - 1.0) > 1e-9) {
    return "selection weights must sum to 1";
  }
  if (confirmation.k < 1) return "confirmation k must be at least 1";
  if (confirmation.top_n < 1) return "confirmation top_n must be at least 1";
  if (confirmation.epsilon < 0) return "confirmation epsilon must be non-negative";
  if (confirmation.retry_budget < 0) return "retry_budget must be non-negative";
  if (retention.max_corpus < 1) return "max_corpus must be at least 1";
  if (bootstrap_seeds < 1) return "bootstrap_seeds must be at least 1";
  if (!profile.Valid()) return "seed profile is invalid";
  if (jitter_intensities.empty()) return "jitter_intensities must not be empty";
  if (telemetry_window_ms <= 0) return "telemetry_window_ms must be positive";
  return "";
}

json ToJson(const CampaignConfig& c) {
  return {
      {"rng_seed", c.rng_seed},
      {"max_iterations", c.max_iterations},
      {"time_budget_s", c.time_budget_s},
      {"mutation_weights",
       {{"timing_jitter", c.mutation.timing_jitter},
        {"timing_collapse", c.mutation.timing_collapse},
        {"event", c.mutation.event},
        {"splice", c.mutation.splice},
        {"directed_splice", c.mutation.directed_splice}}},
      {"selection",
       {{"floor", c.selection.floor},
        {"novelty", c.selection.novelty},
        {"suspicion", c.selection.suspicion},
        {"pressure", c.selection.pressure},
        {"pressure_in_selection", c.selection.pressure_in_selection}}},
      {"thresholds",
       {{"ttft_factor", c.thresholds.ttft_factor},
        {"stall_window_ms", c.thresholds.stall_window_ms},
        {"kv_grace_ms", c.thresholds.kv_grace_ms},
        {"min_baseline_samples", c.thresholds.min_baseline_samples},
        {"lifecycle_grace_ms", c.thresholds.lifecycle_grace_ms}}},
      {"confirmation",
       {{"top_n", c.confirmation.top_n},
        {"epsilon", c.confirmation.epsilon},
        {"k", c.confirmation.k},
        {"retry_budget", c.confirmation.retry_budget},
        {"replay_seed", c.confirmation.replay_seed}}},
      {"endpoint",
       {{"base_url", c.endpoint.base_url},
        {"engine_kind", c.endpoint.engine_kind == exec::EngineKind::kSimulator
                            ? "simulator"
                            : "generic_openai"}}},
      {"engine_flags", c.engine_flags},
      {"max_corpus", c.retention.max_corpus},
      {"profile", c.profile_name},
      {"bootstrap_seeds", c.bootstrap_seeds},
      {"jitter_intensities", c.jitter_intensities},
      {"telemetry_window_ms", c.telemetry_window_ms},
      {"max_confirmations_per_fingerprint", c.max_confirmations_per_fingerprint},
      {"stop_on_first_finding", c.stop_on_first_finding},
      {"minimize_crashes", c.minimize_crashes},
      {"output_dir", c.output_dir},
  };
}

namespace {

template <typename T>
void Take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void RejectUnknown(const json& j, std::initializer_list<const char*> keys,
                   const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* x) { return k == x; }) ==
        keys.end()) {
      throw std::invalid_argument("unknown config key: " + where + k);
    }
  }
}

}  // namespace

CampaignConfig CampaignConfigFromJson(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("campaign config must be an object");
  RejectUnknown(j,
                {"rng_seed", "max_iterations", "time_budget_s", "mutation_weights",
                 "selection", "thresholds", "confirmation", "endpoint", "engine_flags",
                 "max_corpus", "profile", "bootstrap_seeds", "jitter_intensities",
                 "telemetry_window_ms", "max_confirmations_per_fingerprint",
                 "stop_on_first_finding", "minimize_crashes", "output_dir"},
                "");
  CampaignConfig c;
  Take(j, "rng_seed", c.rng_seed);
  Take(j, "max_iterations", c.max_iterations);
  Take(j, "time_budget_s", c.time_budget_s);
  if (j.contains("mutation_weights")) {
    const json& m = j["mutation_weights"];
    RejectUnknown(m, {"timing_jitter", "timing_collapse", "event", "splice", "directed_splice"},
                  "mutation_weights.");
    Take(m, "timing_jitter", c.mutation.timing_jitter);
    Take(m, "timing_collapse", c.mutation.timing_collapse);
    Take(m, "event", c.mutation.event);
    Take(m, "splice", c.mutation.splice);
    Take(m, "directed_splice", c.mutation.directed_splice);
  }
  if (j.contains("selection")) {
    const json& s = j["selection"];
    RejectUnknown(s, {"floor", "novelty", "suspicion", "pressure", "pressure_in_selection"},
                  "selection.");
    Take(s, "floor", c.selection.floor);
    Take(s, "novelty", c.selection.novelty);
    Take(s, "suspicion", c.selection.suspicion);
    Take(s, "pressure", c.selection.pressure);
    Take(s, "pressure_in_selection", c.selection.pressure_in_selection);
  }
  if (j.contains("thresholds")) {
    const json& t = j["thresholds"];
    RejectUnknown(t, {"ttft_factor", "stall_window_ms", "kv_grace_ms", "min_baseline_samples",
                      "lifecycle_grace_ms"},
                  "thresholds.");
    Take(t, "ttft_factor", c.thresholds.ttft_factor);
    Take(t, "stall_window_ms", c.thresholds.stall_window_ms);
    Take(t, "kv_grace_ms", c.thresholds.kv_grace_ms);
    Take(t, "min_baseline_samples", c.thresholds.min_baseline_samples);
    Take(t, "lifecycle_grace_ms", c.thresholds.lifecycle_grace_ms);
  }
  if (j.contains("confirmation")) {
    const json& f = j["confirmation"];
    RejectUnknown(f, {"top_n", "epsilon", "k", "retry_budget", "replay_seed"},
                  "confirmation.");
    Take(f, "top_n", c.confirmation.top_n);
    Take(f, "epsilon", c.confirmation.epsilon);
    Take(f, "k", c.confirmation.k);
    Take(f, "retry_budget", c.confirmation.retry_budget);
    Take(f, "replay_seed", c.confirmation.replay_seed);
  }
  if (j.contains("endpoint")) {
    const json& e = j["endpoint"];
    RejectUnknown(e, {"base_url", "engine_kind"}, "endpoint.");
    Take(e, "base_url", c.endpoint.base_url);
    std::string kind = e.value("engine_kind", "simulator");
    if (kind == "simulator") {
      c.endpoint.engine_kind = exec::EngineKind::kSimulator;
    } else if (kind == "generic_openai") {
      c.endpoint.engine_kind = exec::EngineKind::kGenericOpenAi;
    } else {
      throw std::invalid_argument("unknown engine_kind: " + kind);
    }
  }
  if (j.contains("engine_flags")) {
    for (const auto& [k, v] : j["engine_flags"].items()) {
      c.engine_flags[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
  }
  Take(j, "max_corpus", c.retention.max_corpus);
  Take(j, "profile", c.profile_name);
  c.profile = NamedProfile(c.profile_name);
  Take(j, "bootstrap_seeds", c.bootstrap_seeds);
  Take(j, "jitter_intensities", c.jitter_intensities);
  Take(j, "telemetry_window_ms", c.telemetry_window_ms);
  Take(j, "max_confirmations_per_fingerprint", c.max_confirmations_per_fingerprint);
  Take(j, "stop_on_first_finding", c.stop_on_first_finding);
  Take(j, "minimize_crashes", c.minimize_crashes);
  Take(j, "output_dir", c.output_dir);
  c.confirmation.thresholds = c.thresholds;
  return c;
}

}  // namespace servefuzz::campaign
