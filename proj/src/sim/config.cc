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
#include "servefuzz/sim/config.h"

#include <algorithm>
#include <stdexcept>

#include "servefuzz/trace/trace.h"

namespace servefuzz::sim {

std::string_view FaultFamilyName(FaultFamily family) {
  switch (family) {
    case FaultFamily::kStaleKv:
      return "F1_stale_kv";
    case FaultFamily::kEngineStall:
      return "F2_engine_stall";
    case FaultFamily::kAdapterDrift:
      return "F3_adapter_drift";
  }
  return "F1_stale_kv";
}

std::optional<FaultFamily> ParseFaultFamily(std::string_view name) {
  for (FaultFamily f : {FaultFamily::kStaleKv, FaultFamily::kEngineStall,
                        FaultFamily::kAdapterDrift}) {
    std::string_view full = FaultFamilyName(f);
    if (name == full || name == full.substr(0, 2)) return f;
  }
  return std::nullopt;
}

FaultSpec FaultSpec::Defaults(FaultFamily family) {
  FaultSpec spec;
  spec.family = family;
  if (family == FaultFamily::kAdapterDrift) spec.occupancy_threshold = 0.75;
  return spec;
}

std::string SimConfig::Validate() const {
  if (vocab_size < 16) return "vocab_size must be at least 16";
  if (block_size <= 0) return "block_size must be positive";
  if (total_kv_blocks <= 0) return "total_kv_blocks must be positive";
  if (max_batch_tokens <= 0) return "max_batch_tokens must be positive";
  if (chunked_prefill_limit <= 0) return "chunked_prefill_limit must be positive";
  if (chunked_prefill_limit > max_batch_tokens) {
    return "chunked_prefill_limit must not exceed max_batch_tokens";
  }
  if (max_loras_per_batch <= 0) return "max_loras_per_batch must be positive";
  if (max_loaded_loras < max_loras_per_batch) {
    return "max_loaded_loras must be at least max_loras_per_batch";
  }
  if (adapter_load_ticks < 0) return "adapter_load_ticks must be non-negative";
  if (tick_ms <= 0) return "tick_ms must be positive";
  if (max_running <= 0) return "max_running must be positive";
  if (max_logprobs <= 0) return "max_logprobs must be positive";
  if (near_tie_period <= 0) return "near_tie_period must be positive";
  if (near_tie_gap < 0) return "near_tie_gap must be non-negative";
  for (const std::string& a : adapters) {
    if (a.empty() || a == trace::kBaseAdapter) return "invalid adapter name";
  }
  for (const FaultSpec& f : faults) {
    if (f.occupancy_threshold < 0 || f.occupancy_threshold > 1) {
      return "fault occupancy_threshold must lie in [0, 1]";
    }
    if (f.stall_ms < 0 || f.crash_delay_ticks < 0 || f.burst_count <= 0 ||
        f.burst_window_ms < 0 || f.n_completions_threshold <= 0) {
      return "fault trigger parameters out of range";
    }
  }
  return "";
}

const FaultSpec* SimConfig::Armed(FaultFamily family) const {
  for (const FaultSpec& f : faults) {
    if (f.family == family) return &f;
  }
  return nullptr;
}

bool SimConfig::KnownAdapter(std::string_view adapter) const {
  return adapter == trace::kBaseAdapter ||
         std::find(adapters.begin(), adapters.end(), adapter) != adapters.end();
}

namespace {

nlohmann::json ToJson(const FaultSpec& f) {
  return {{"family", FaultFamilyName(f.family)},
          {"occupancy_threshold", f.occupancy_threshold},
          {"n_completions_threshold", f.n_completions_threshold},
          {"stall_ms", f.stall_ms},
          {"burst_count", f.burst_count},
          {"burst_window_ms", f.burst_window_ms},
          {"min_distinct_prompt_lens", f.min_distinct_prompt_lens},
          {"min_distinct_adapters", f.min_distinct_adapters},
          {"crash_delay_ticks", f.crash_delay_ticks}};
}

template <typename T>
void Read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument(std::string("bad value for '") + key + "'");
  }
}

FaultSpec FaultFromJson(const nlohmann::json& j) {
  std::string name;
  if (j.is_string()) {
    name = j.get<std::string>();
  } else if (j.is_object() && j.contains("family") && j["family"].is_string()) {
    name = j["family"].get<std::string>();
  }
  std::optional<FaultFamily> family = ParseFaultFamily(name);
  if (!family) throw std::invalid_argument("unknown fault family '" + name + "'");
  FaultSpec f = FaultSpec::Defaults(*family);
  if (j.is_object()) {
    Read(j, "occupancy_threshold", f.occupancy_threshold);
    Read(j, "n_completions_threshold", f.n_completions_threshold);
    Read(j, "stall_ms", f.stall_ms);
    Read(j, "burst_count", f.burst_count);
    Read(j, "burst_window_ms", f.burst_window_ms);
    Read(j, "min_distinct_prompt_lens", f.min_distinct_prompt_lens);
    Read(j, "min_distinct_adapters", f.min_distinct_adapters);
    Read(j, "crash_delay_ticks", f.crash_delay_ticks);
  }
  return f;
}

}  // namespace

nlohmann::json ToJson(const SimConfig& c) {
  nlohmann::json faults = nlohmann::json::array();
  for (const FaultSpec& f : c.faults) faults.push_back(ToJson(f));
  return {{"vocab_size", c.vocab_size},
          {"block_size", c.block_size},
          {"total_kv_blocks", c.total_kv_blocks},
          {"max_batch_tokens", c.max_batch_tokens},
          {"chunked_prefill_limit", c.chunked_prefill_limit},
          {"max_loras_per_batch", c.max_loras_per_batch},
          {"max_loaded_loras", c.max_loaded_loras},
          {"adapter_load_ticks", c.adapter_load_ticks},
          {"tick_ms", c.tick_ms},
          {"max_running", c.max_running},
          {"max_logprobs", c.max_logprobs},
          {"seed", c.seed},
          {"adapters", c.adapters},
          {"near_tie_mode", c.near_tie_mode},
          {"near_tie_gap", c.near_tie_gap},
          {"near_tie_period", c.near_tie_period},
          {"faults", faults}};
}

SimConfig SimConfigFromJson(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("sim config must be an object");
  SimConfig c;
  Read(j, "vocab_size", c.vocab_size);
  Read(j, "block_size", c.block_size);
  Read(j, "total_kv_blocks", c.total_kv_blocks);
  Read(j, "max_batch_tokens", c.max_batch_tokens);
  Read(j, "chunked_prefill_limit", c.chunked_prefill_limit);
  Read(j, "max_loras_per_batch", c.max_loras_per_batch);
  Read(j, "max_loaded_loras", c.max_loaded_loras);
  Read(j, "adapter_load_ticks", c.adapter_load_ticks);
  Read(j, "tick_ms", c.tick_ms);
  Read(j, "max_running", c.max_running);
  Read(j, "max_logprobs", c.max_logprobs);
  Read(j, "seed", c.seed);
  Read(j, "adapters", c.adapters);
  Read(j, "near_tie_mode", c.near_tie_mode);
  Read(j, "near_tie_gap", c.near_tie_gap);
  Read(j, "near_tie_period", c.near_tie_period);
  if (j.contains("faults")) {
    if (!j["faults"].is_array()) throw std::invalid_argument("faults must be a list");
    for (const nlohmann::json& f : j["faults"]) c.faults.push_back(FaultFromJson(f));
  }
  if (std::string why = c.Validate(); !why.empty()) {
    throw std::invalid_argument(why);
  }
  return c;
}

}  // namespace servefuzz::sim
