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
#include "servefuzz/sim/engine.h"

#include <algorithm>
#include <unordered_set>
#include <utility>

#include "servefuzz/trace/trace.h"
#include "servefuzz/util/hash.h"

namespace servefuzz::sim {
namespace {

using exec::OutcomeStatus;

constexpr uint64_t kStaleSalt = 0x57a1eULL;

int64_t CeilDiv(int64_t a, int64_t b) { return (a + b - 1) / b; }

bool IsBase(std::string_view adapter) { return adapter == trace::kBaseAdapter; }

}  // namespace

Engine::Engine(SimConfig config)
    : config_(std::move(config)),
      decoder_(config_),
      blocks_(config_.total_kv_blocks) {}

void Engine::Reset() {
  blocks_.Reset();
  now_ms_ = 0;
  tick_ = 0;
  live_.clear();
  waiting_.clear();
  running_.clear();
  loaded_.clear();
  loading_.clear();
  adapter_last_use_.clear();
  kv_events_.clear();
  pending_.clear();
  crashed_ = false;
  crash_reason_.clear();
  crash_time_ms_.reset();
  crash_at_tick_.reset();
  f3_masks_.clear();
  stale_pins_ = 0;
}

int64_t Engine::ReserveBlocks(const SimRequest& r) const {
  const int64_t bs = config_.block_size;
  const int64_t prompt = static_cast<int64_t>(r.prompt.size());
  return CeilDiv(prompt + r.max_tokens, bs) +
         (r.n - 1) * CeilDiv(r.max_tokens, bs);
}

std::vector<uint64_t> Engine::PromptBlockHashes(const SimRequest& r) const {
  const size_t bs = static_cast<size_t>(config_.block_size);
  std::vector<uint64_t> hashes;
  uint64_t chain = HashCombine(HashString("kv"), HashString(r.adapter));
  for (size_t start = 0; start + bs <= r.prompt.size(); start += bs) {
    for (size_t j = start; j < start + bs; ++j) {
      chain = HashCombine(chain, static_cast<uint64_t>(r.prompt[j]));
    }
    // Zero is reserved for uncacheable blocks.
    hashes.push_back(chain == 0 ? 1 : chain);
  }
  return hashes;
}

std::string Engine::Submit(SimRequest r) {
  if (crashed_) return "connection refused";
  if (r.request_id.empty()) return "missing request id";
  if (live_.contains(r.request_id)) return "duplicate request id";
  if (!config_.KnownAdapter(r.adapter)) return "unknown adapter '" + r.adapter + "'";
  if (r.prompt.empty()) return "empty prompt";
  for (Token t : r.prompt) {
    if (t < 0 || t >= config_.vocab_size) return "prompt token out of vocabulary";
  }
  if (r.max_tokens <= 0) return "max_tokens must be positive";
  if (r.n <= 0) return "n must be positive";
  if (r.temperature < 0) return "temperature must be non-negative";
  if (r.logprobs) {
    if (*r.logprobs < 0) return "logprobs must be non-negative";
    r.logprobs = std::min(*r.logprobs, config_.max_logprobs);
  }
  if (ReserveBlocks(r) > config_.total_kv_blocks) return "request exceeds KV capacity";

  Live live;
  const size_t bs = static_cast<size_t>(config_.block_size);
  if (r.prompt.size() >= bs) {
    live.first_block.assign(r.prompt.begin(), r.prompt.begin() + static_cast<ptrdiff_t>(bs));
  }
  live.req = std::move(r);
  const std::string id = live.req.request_id;
  live_.emplace(id, std::move(live));
  waiting_.push_back(id);
  return "";
}

bool Engine::Cancel(std::string_view request_id) {
  if (crashed_ || !live_.contains(request_id)) return false;
  Finish(request_id, OutcomeStatus::kCancelled, "cancelled", now_ms_, nullptr);
  return true;
}

bool Engine::Abort(std::string_view request_id) {
  if (crashed_ || !live_.contains(request_id)) return false;
  Finish(request_id, OutcomeStatus::kDisconnected, "client disconnected", now_ms_,
         nullptr);
  return true;
}

void Engine::ReleaseAll(Live& live) {
  for (int64_t id : live.blocks) blocks_.Release(id, now_ms_, kv_events_);
  live.blocks.clear();
}

void Engine::Finish(std::string_view id, OutcomeStatus status, std::string detail,
                    int64_t time_ms, TickResult* out) {
  auto it = live_.find(id);
  if (it == live_.end()) return;
  ReleaseAll(it->second);
  std::erase(running_, it->first);
  std::erase(waiting_, it->first);
  Termination t{it->first, status, std::move(detail), time_ms};
  live_.erase(it);
  if (out != nullptr) {
    out->finished.push_back(std::move(t));
  } else {
    pending_.push_back(std::move(t));
  }
}

void Engine::StartAdapterLoads() {
  for (auto it = loading_.begin(); it != loading_.end();) {
    if (it->second <= tick_) {
      loaded_.insert(it->first);
      it = loading_.erase(it);
    } else {
      ++it;
    }
  }
  std::set<std::string> in_use;
  for (const std::string& id : running_) in_use.insert(live_.at(id).req.adapter);
  // Adapters of earlier waiting requests are claimed in FCFS order, so a
  // later request never unloads what the queue head is waiting for.
  std::set<std::string> claimed;
  for (const std::string& id : waiting_) {
    const std::string& a = live_.at(id).req.adapter;
    if (IsBase(a) || loading_.contains(a)) continue;
    if (loaded_.contains(a)) {
      claimed.insert(a);
      continue;
    }
    if (static_cast<int>(loaded_.size() + loading_.size()) >= config_.max_loaded_loras) {
      // Unload the least recently used adapter nobody ahead needs.
      std::optional<std::string> victim;
      for (const std::string& l : loaded_) {
        if (in_use.contains(l) || claimed.contains(l)) continue;
        if (!victim || adapter_last_use_[l] < adapter_last_use_[*victim]) victim = l;
      }
      if (!victim) continue;
      loaded_.erase(*victim);
    }
    loading_[a] = tick_ + config_.adapter_load_ticks;
    if (config_.adapter_load_ticks == 0) {
      loaded_.insert(a);
      loading_.erase(a);
    }
  }
}

bool Engine::AdapterReady(const std::string& adapter,
                          const std::set<std::string>& batch_loras) const {
  if (IsBase(adapter)) return true;
  if (!loaded_.contains(adapter)) return false;
  return batch_loras.contains(adapter) ||
         static_cast<int>(batch_loras.size()) < config_.max_loras_per_batch;
}

void Engine::Admit(TickResult& out) {
  (void)out;
  struct Plan {
    std::string id;
    std::vector<uint64_t> hashes;
    std::vector<PlannedHit> hits;
    std::vector<int64_t> table;
  };
  std::set<std::string> batch_loras;
  for (const std::string& id : running_) {
    const std::string& a = live_.at(id).req.adapter;
    if (!IsBase(a)) batch_loras.insert(a);
  }

  // Phase A: plan prefix hits and check capacity. Planned hits are not yet
  // pinned, so they still count as evictable here.
  const int64_t bs = config_.block_size;
  int64_t capacity = blocks_.free_count() + blocks_.evictable_count();
  int64_t committed = 0;
  std::vector<Plan> plans;
  for (const std::string& id : waiting_) {
    if (static_cast<int>(running_.size() + plans.size()) >= config_.max_running) break;
    const SimRequest& r = live_.at(id).req;
    if (!AdapterReady(r.adapter, batch_loras)) continue;
    Plan p;
    p.id = id;
    p.hashes = PromptBlockHashes(r);
    const size_t max_hits = static_cast<size_t>(
        (static_cast<int64_t>(r.prompt.size()) - 1) / bs);
    for (size_t i = 0; i < std::min(max_hits, p.hashes.size()); ++i) {
      std::optional<int64_t> b = blocks_.Lookup(p.hashes[i]);
      if (!b) break;
      p.hits.push_back({*b, blocks_.block(*b).generation, p.hashes[i]});
    }
    const int64_t need = ReserveBlocks(r) - static_cast<int64_t>(p.hits.size());
    if (committed + need > capacity) break;
    committed += need;
    if (!IsBase(r.adapter)) batch_loras.insert(r.adapter);
    plans.push_back(std::move(p));
  }
  if (plans.empty()) return;

  // Phase B: allocate the misses. This may evict blocks that another plan
  // (or this one) intends to hit.
  std::unordered_set<std::string> cohort;
  std::vector<bool> ok(plans.size(), true);
  for (size_t k = 0; k < plans.size(); ++k) {
    Plan& p = plans[k];
    const SimRequest& r = live_.at(p.id).req;
    const int64_t reserve = ReserveBlocks(r);
    p.table.assign(static_cast<size_t>(reserve), -1);
    for (int64_t i = static_cast<int64_t>(p.hits.size()); i < reserve; ++i) {
      const uint64_t h = i < static_cast<int64_t>(p.hashes.size())
                             ? p.hashes[static_cast<size_t>(i)]
                             : 0;
      std::optional<int64_t> b = blocks_.Allocate(h, p.id, r.adapter, now_ms_, kv_events_);
      if (!b) {
        ok[k] = false;
        break;
      }
      p.table[static_cast<size_t>(i)] = *b;
    }
    if (ok[k]) cohort.insert(p.id);
  }

  // Phase C: pin the planned hits, re-verifying each one.
  const FaultSpec* f1 = config_.Armed(FaultFamily::kStaleKv);
  std::set<std::string> admitted;
  for (size_t k = 0; k < plans.size(); ++k) {
    Plan& p = plans[k];
    Live& live = live_.at(p.id);
    const SimRequest& r = live.req;
    std::vector<size_t> stale;
    size_t kept = 0;
    for (size_t i = 0; ok[k] && i < p.hits.size(); ++i) {
      const PlannedHit& h = p.hits[i];
      const KvBlock& b = blocks_.block(h.block_id);
      if (b.in_use && b.generation == h.generation) {
        blocks_.Pin(h.block_id, h.hash, p.id, r.adapter, now_ms_, kv_events_);
        p.table[i] = h.block_id;
        ++kept;
        continue;
      }
      // The block was reclaimed after lookup.
      if (f1 != nullptr && blocks_.occupancy() > f1->occupancy_threshold &&
          b.in_use && b.owner_request_id != p.id &&
          cohort.contains(b.owner_request_id) && !live.first_block.empty() &&
          live_.at(b.owner_request_id).first_block == live.first_block) {
        // Planted defect: the reclaimed block is adopted unverified.
        blocks_.Pin(h.block_id, h.hash, p.id, r.adapter, now_ms_, kv_events_);
        p.table[i] = h.block_id;
        stale.push_back(i);
        ++kept;
        continue;
      }
      std::optional<int64_t> fresh =
          blocks_.Allocate(h.hash, p.id, r.adapter, now_ms_, kv_events_);
      if (!fresh) {
        ok[k] = false;
        break;
      }
      p.table[i] = *fresh;
    }
    if (!ok[k]) {
      // Roll back to waiting; keep its queue position.
      for (int64_t b : p.table) {
        if (b >= 0) blocks_.Release(b, now_ms_, kv_events_);
      }
      cohort.erase(p.id);
      continue;
    }
    live.blocks = p.table;
    live.hit_blocks = static_cast<int64_t>(kept);
    live.prefill_remaining =
        static_cast<int64_t>(r.prompt.size()) - static_cast<int64_t>(kept) * bs;

    std::vector<Token> context = r.prompt;
    for (size_t i : stale) {
      const uint64_t block_id = static_cast<uint64_t>(p.table[i]);
      for (int64_t j = 0; j < bs; ++j) {
        const uint64_t g = HashCombine(HashCombine(kStaleSalt, block_id),
                                       static_cast<uint64_t>(j));
        context[i * static_cast<size_t>(bs) + static_cast<size_t>(j)] =
            static_cast<Token>(g % static_cast<uint64_t>(config_.vocab_size));
      }
    }
    if (!stale.empty()) ++stale_pins_;
    const uint64_t digest = decoder_.DigestOf(r.adapter, context);
    live.digests.assign(static_cast<size_t>(r.n), digest);
    live.generated.assign(static_cast<size_t>(r.n), 0);
    live.admitted_tick = tick_;
    adapter_last_use_[r.adapter] = tick_;
    admitted.insert(p.id);
    running_.push_back(p.id);
  }
  std::erase_if(waiting_, [&](const std::string& id) { return admitted.contains(id); });
}

unsigned Engine::EvaluateF3() const {
  const FaultSpec* armed = config_.Armed(FaultFamily::kAdapterDrift);
  const FaultSpec spec = armed ? *armed : FaultSpec::Defaults(FaultFamily::kAdapterDrift);
  unsigned mask = 0;
  if (blocks_.occupancy() > spec.occupancy_threshold) mask |= kF3Occupancy;
  std::set<size_t> lens;
  std::set<std::string_view> adapters;
  std::map<std::string_view, std::vector<int64_t>> arrivals;
  for (const auto& [id, live] : live_) {
    lens.insert(live.req.prompt.size());
    adapters.insert(live.req.adapter);
    if (!IsBase(live.req.adapter)) arrivals[live.req.adapter].push_back(live.req.arrival_ms);
  }
  if (static_cast<int>(lens.size()) >= spec.min_distinct_prompt_lens) mask |= kF3PromptLens;
  if (static_cast<int>(adapters.size()) >= spec.min_distinct_adapters) mask |= kF3Adapters;
  if (!loading_.empty()) {
    for (auto& [adapter, times] : arrivals) {
      std::sort(times.begin(), times.end());
      const size_t need = static_cast<size_t>(spec.burst_count);
      for (size_t i = 0; i + need <= times.size(); ++i) {
        if (times[i + need - 1] - times[i] <= spec.burst_window_ms) {
          mask |= kF3LoraBurst;
          break;
        }
      }
    }
  }
  return mask;
}

void Engine::CrashNow(TickResult& out) {
  crashed_ = true;
  crash_reason_ = std::string(kF3CrashReason);
  crash_time_ms_ = now_ms_;
  for (const auto& [id, live] : live_) {
    out.finished.push_back({id, OutcomeStatus::kServerError, "connection lost", now_ms_});
  }
  live_.clear();
  waiting_.clear();
  running_.clear();
}

TickResult Engine::Tick() {
  TickResult out;
  out.start_ms = now_ms_;
  out.finished = std::move(pending_);
  pending_.clear();
  if (crashed_) {
    out.end_ms = now_ms_;
    return out;
  }

  StartAdapterLoads();
  Admit(out);

  const unsigned mask = EvaluateF3();
  f3_masks_.insert(mask);
  const FaultSpec* f3 = config_.Armed(FaultFamily::kAdapterDrift);
  if (f3 != nullptr && mask == kF3All && !crash_at_tick_) {
    crash_at_tick_ = tick_ + f3->crash_delay_ticks;
  }
  int64_t stall = 0;
  if (const FaultSpec* f2 = config_.Armed(FaultFamily::kEngineStall)) {
    for (const auto& [id, live] : live_) {
      if (live.req.n >= f2->n_completions_threshold) stall = f2->stall_ms;
    }
  }
  const int64_t end = now_ms_ + config_.tick_ms + stall;
  out.end_ms = end;

  int64_t budget = config_.max_batch_tokens;
  int slot = 0;
  auto emit = [&](Live& live, size_t c) {
    const SimRequest& r = live.req;
    const int64_t position = static_cast<int64_t>(r.prompt.size()) + live.generated[c];
    const bool flip = slot % 2 == 1;
    DecodeStep step = decoder_.Step(live.digests[c], position, r.adapter,
                                    r.logprobs.value_or(0), flip, r.temperature,
                                    HashCombine(r.seed, c));
    live.digests[c] = PseudoDecoder::Fold(live.digests[c], step.token);
    ++live.generated[c];
    TokenEmission e{r.request_id, static_cast<int>(c), step.token, std::nullopt, end};
    if (r.logprobs) e.logprobs = std::move(step.top);
    out.tokens.push_back(std::move(e));
  };

  // Decode steps for requests past prefill.
  for (const std::string& id : running_) {
    Live& live = live_.at(id);
    if (live.prefill_remaining > 0) continue;
    bool stepped = false;
    for (size_t c = 0; c < live.generated.size() && budget > 0; ++c) {
      if (live.generated[c] >= live.req.max_tokens) continue;
      emit(live, c);
      --budget;
      stepped = true;
    }
    if (stepped) ++slot;
  }
  // Chunked prefill with the remaining budget; completing it yields the
  // first token in the same tick.
  for (const std::string& id : running_) {
    Live& live = live_.at(id);
    if (live.prefill_remaining <= 0 || live.admitted_tick == -1) continue;
    const int64_t chunk = std::min({live.prefill_remaining,
                                    static_cast<int64_t>(config_.chunked_prefill_limit),
                                    budget});
    if (chunk <= 0) break;
    live.prefill_remaining -= chunk;
    budget -= chunk;
    if (live.prefill_remaining == 0) {
      for (size_t c = 0; c < live.generated.size(); ++c) emit(live, c);
      ++slot;
    }
  }

  now_ms_ = end;
  ++tick_;
  std::vector<std::string> done;
  for (const std::string& id : running_) {
    const Live& live = live_.at(id);
    if (live.prefill_remaining > 0) continue;
    if (std::all_of(live.generated.begin(), live.generated.end(),
                    [&](int64_t g) { return g >= live.req.max_tokens; })) {
      done.push_back(id);
    }
  }
  for (const std::string& id : done) {
    Finish(id, OutcomeStatus::kCompleted, "", end, &out);
  }
  if (crash_at_tick_ && tick_ >= *crash_at_tick_) CrashNow(out);
  return out;
}

void Engine::AdvanceTo(int64_t t_ms) {
  if (!Idle() || t_ms <= now_ms_) return;
  const int64_t ticks = CeilDiv(t_ms - now_ms_, config_.tick_ms);
  now_ms_ += ticks * config_.tick_ms;
}

}  // namespace servefuzz::sim
