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
#ifndef SERVEFUZZ_SIM_CONFIG_H_
#define SERVEFUZZ_SIM_CONFIG_H_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace servefuzz::sim {

enum class FaultFamily { kStaleKv, kEngineStall, kAdapterDrift };

// "F1_stale_kv", "F2_engine_stall", "F3_adapter_drift".
std::string_view FaultFamilyName(FaultFamily family);
// Accepts the full name or the short "F1".."F3" form.
std::optional<FaultFamily> ParseFaultFamily(std::string_view name);

struct FaultSpec {
  FaultFamily family = FaultFamily::kStaleKv;
  // F1 and F3: held / total must exceed this.
  double occupancy_threshold = 0.85;
  // F2: any live request with at least this many completions stalls the loop.
  int n_completions_threshold = 8;
  int64_t stall_ms = 12000;
  // F3: at least burst_count same-adapter arrivals inside burst_window_ms.
  int burst_count = 6;
  int64_t burst_window_ms = 6;
  int min_distinct_prompt_lens = 3;
  int min_distinct_adapters = 3;
  int crash_delay_ticks = 30;

  static FaultSpec Defaults(FaultFamily family);
  bool operator==(const FaultSpec&) const = default;
};

struct SimConfig {
  int vocab_size = 1024;
  int block_size = 16;
  int total_kv_blocks = 2048;
  int max_batch_tokens = 8192;
  int chunked_prefill_limit = 2048;
  int max_loras_per_batch = 2;
  int max_loaded_loras = 4;
  int adapter_load_ticks = 2;
  int64_t tick_ms = 10;
  int max_running = 256;
  // Cap on the requested top-N logprobs.
  int max_logprobs = 20;
  uint64_t seed = 0x5eed;
  std::vector<std::string> adapters = {"lora_a", "lora_b", "lora_c",
                                       "lora_d", "lora_e", "lora_f"};
  // Every near_tie_period-th position carries a runner-up within
  // near_tie_gap nats; odd batch slots decode the runner-up there.
  bool near_tie_mode = false;
  double near_tie_gap = 0.01;
  int near_tie_period = 1;
  std::vector<FaultSpec> faults;

  // Empty when valid, otherwise the first violated constraint.
  std::string Validate() const;
  const FaultSpec* Armed(FaultFamily family) const;
  bool KnownAdapter(std::string_view adapter) const;
  bool operator==(const SimConfig&) const = default;
};

nlohmann::json ToJson(const SimConfig& config);
// Missing keys keep their defaults. Throws std::invalid_argument on bad
// values or unknown fault families.
SimConfig SimConfigFromJson(const nlohmann::json& j);

}  // namespace servefuzz::sim

#endif  // SERVEFUZZ_SIM_CONFIG_H_
