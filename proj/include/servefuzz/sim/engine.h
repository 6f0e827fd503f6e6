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
#ifndef SERVEFUZZ_SIM_ENGINE_H_
#define SERVEFUZZ_SIM_ENGINE_H_

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "servefuzz/exec/report.h"
#include "servefuzz/sim/block_manager.h"
#include "servefuzz/sim/config.h"
#include "servefuzz/sim/decode.h"

namespace servefuzz::sim {

struct SimRequest {
  std::string request_id;
  std::vector<Token> prompt;
  // trace::kBaseAdapter for the base model.
  std::string adapter = "BASE";
  int64_t max_tokens = 16;
  double temperature = 0.0;
  uint64_t seed = 0;
  // Top-N logprobs per position when set.
  std::optional<int> logprobs;
  int n = 1;
  int64_t arrival_ms = 0;
};

struct TokenEmission {
  std::string request_id;
  int completion = 0;
  Token token = 0;
  std::optional<exec::PositionLogprobs> logprobs;
  int64_t time_ms = 0;
};

struct Termination {
  std::string request_id;
  exec::OutcomeStatus status = exec::OutcomeStatus::kCompleted;
  std::string detail;
  int64_t time_ms = 0;
};

struct TickResult {
  int64_t start_ms = 0;
  int64_t end_ms = 0;
  std::vector<TokenEmission> tokens;
  std::vector<Termination> finished;
};

// Bits of the adapter-drift trigger, as observed on one tick.
enum F3Condition : unsigned {
  kF3Occupancy = 1u << 0,
  kF3PromptLens = 1u << 1,
  kF3Adapters = 1u << 2,
  kF3LoraBurst = 1u << 3,
};
inline constexpr unsigned kF3All = 0xF;

// Single-owner state machine; callers serialize access. Time only moves in
// Tick() and AdvanceTo().
class Engine {
 public:
  explicit Engine(SimConfig config);

  const SimConfig& config() const { return config_; }
  const PseudoDecoder& decoder() const { return decoder_; }

  // Empty on success, otherwise the rejection reason.
  std::string Submit(SimRequest request);
  // Client-initiated cancel and transport loss. False if the id is not live.
  bool Cancel(std::string_view request_id);
  bool Abort(std::string_view request_id);

  TickResult Tick();
  // Moves an idle clock forward to the first tick boundary at or after t.
  void AdvanceTo(int64_t t_ms);
  void Reset();

  bool Idle() const { return waiting_.empty() && running_.empty(); }
  int64_t now_ms() const { return now_ms_; }
  int64_t tick_index() const { return tick_; }
  bool crashed() const { return crashed_; }
  const std::string& crash_reason() const { return crash_reason_; }
  std::optional<int64_t> crash_time_ms() const { return crash_time_ms_; }

  const std::vector<exec::KvEvent>& kv_events() const { return kv_events_; }
  const BlockManager& blocks() const { return blocks_; }
  size_t waiting_count() const { return waiting_.size(); }
  size_t running_count() const { return running_.size(); }
  const std::set<std::string>& loaded_adapters() const { return loaded_; }

  // Every F3 condition mask observed since the last reset.
  const std::set<unsigned>& f3_masks_seen() const { return f3_masks_; }
  // Number of victims that received a stale block since the last reset.
  int stale_pins() const { return stale_pins_; }

 private:
  struct Live {
    SimRequest req;
    std::vector<int64_t> blocks;
    // Prompt tokens still to be computed.
    int64_t prefill_remaining = 0;
    int64_t hit_blocks = 0;
    std::vector<Token> first_block;
    // Per completion rolling digest and generated count.
    std::vector<uint64_t> digests;
    std::vector<int64_t> generated;
    int64_t admitted_tick = -1;
  };

  struct PlannedHit {
    int64_t block_id;
    uint64_t generation;
    uint64_t hash;
  };

  int64_t ReserveBlocks(const SimRequest& r) const;
  std::vector<uint64_t> PromptBlockHashes(const SimRequest& r) const;
  void StartAdapterLoads();
  bool AdapterReady(const std::string& adapter,
                    const std::set<std::string>& batch_loras) const;
  void Admit(TickResult& out);
  void ReleaseAll(Live& live);
  void Finish(std::string_view id, exec::OutcomeStatus status,
              std::string detail, int64_t time_ms, TickResult* out);
  unsigned EvaluateF3() const;
  void CrashNow(TickResult& out);

  SimConfig config_;
  PseudoDecoder decoder_;
  BlockManager blocks_;
  int64_t now_ms_ = 0;
  int64_t tick_ = 0;
  std::map<std::string, Live, std::less<>> live_;
  std::deque<std::string> waiting_;
  std::vector<std::string> running_;
  std::set<std::string> loaded_;
  std::map<std::string, int64_t> loading_;  // adapter -> ready tick
  std::map<std::string, int64_t> adapter_last_use_;
  std::vector<exec::KvEvent> kv_events_;
  std::vector<Termination> pending_;
  bool crashed_ = false;
  std::string crash_reason_;
  std::optional<int64_t> crash_time_ms_;
  std::optional<int64_t> crash_at_tick_;
  std::set<unsigned> f3_masks_;
  int stale_pins_ = 0;
};

inline constexpr std::string_view kF3CrashReason =
    "assertion failed: running_loras ⊆ loaded_loras "
    "(max_loras_per_batch invariant)";

}  // namespace servefuzz::sim

#endif  // SERVEFUZZ_SIM_ENGINE_H_
