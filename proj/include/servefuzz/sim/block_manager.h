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
#ifndef SERVEFUZZ_SIM_BLOCK_MANAGER_H_
#define SERVEFUZZ_SIM_BLOCK_MANAGER_H_

#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "servefuzz/exec/report.h"

namespace servefuzz::sim {

struct KvBlock {
  int64_t block_id = 0;
  // Zero for blocks that are not prefix-cacheable.
  uint64_t content_hash = 0;
  std::string owner_request_id;
  std::string adapter;
  int ref = 0;
  int64_t last_use_ms = 0;
  // Bumped on every allocation; a stale (id, generation) pair means the
  // block was reclaimed in between.
  uint64_t generation = 0;
  bool in_use = false;
};

// Paged KV pool with a content-hash prefix cache. A block is held from alloc
// until free or evict; cached blocks with ref 0 stay held and are evictable
// in LRU order.
class BlockManager {
 public:
  explicit BlockManager(int total_blocks);

  int total() const { return static_cast<int>(blocks_.size()); }
  int held() const { return total() - static_cast<int>(free_.size()); }
  int free_count() const { return static_cast<int>(free_.size()); }
  int evictable_count() const { return static_cast<int>(lru_.size()); }
  double occupancy() const;

  std::optional<int64_t> Lookup(uint64_t content_hash) const;
  const KvBlock& block(int64_t id) const { return blocks_[static_cast<size_t>(id)]; }

  // Free list first, then the least recently used evictable block. Nonzero
  // hashes are registered in the cache unless another block already has it.
  std::optional<int64_t> Allocate(uint64_t content_hash, const std::string& owner,
                                  const std::string& adapter, int64_t now_ms,
                                  std::vector<exec::KvEvent>& sink);

  // Adds a reference to a held block. Emits prefix_hit if it was idle in the
  // cache, reuse if it was shared. reported_hash is what the caller asked for.
  void Pin(int64_t id, uint64_t reported_hash, const std::string& owner,
           const std::string& adapter, int64_t now_ms,
           std::vector<exec::KvEvent>& sink);

  // Drops one reference. Uncacheable or shadowed blocks return to the free
  // list at ref 0; cached ones linger until evicted.
  void Release(int64_t id, int64_t now_ms, std::vector<exec::KvEvent>& sink);

  void Reset();

 private:
  std::optional<int64_t> EvictLru(int64_t now_ms, std::vector<exec::KvEvent>& sink);

  std::vector<KvBlock> blocks_;
  std::deque<int64_t> free_;
  std::unordered_map<uint64_t, int64_t> cache_;
  // Cached blocks at ref 0, keyed (last_use_ms, block_id).
  std::set<std::pair<int64_t, int64_t>> lru_;
};

}  // namespace servefuzz::sim

#endif  // SERVEFUZZ_SIM_BLOCK_MANAGER_H_
