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
#include "servefuzz/sim/block_manager.h"

namespace servefuzz::sim {

using exec::KvEvent;
using exec::KvEventKind;

BlockManager::BlockManager(int total_blocks) {
  blocks_.resize(static_cast<size_t>(total_blocks));
  Reset();
}

void BlockManager::Reset() {
  free_.clear();
  cache_.clear();
  lru_.clear();
  for (size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i] = KvBlock{};
    blocks_[i].block_id = static_cast<int64_t>(i);
    free_.push_back(static_cast<int64_t>(i));
  }
}

double BlockManager::occupancy() const {
  return static_cast<double>(held()) / static_cast<double>(total());
}

std::optional<int64_t> BlockManager::Lookup(uint64_t content_hash) const {
  if (content_hash == 0) return std::nullopt;
  auto it = cache_.find(content_hash);
  if (it == cache_.end()) return std::nullopt;
  return it->second;
}

std::optional<int64_t> BlockManager::EvictLru(int64_t now_ms,
                                              std::vector<KvEvent>& sink) {
  if (lru_.empty()) return std::nullopt;
  const std::optional<int64_t> victim = lru_.begin()->second;
  lru_.erase(lru_.begin());
  KvBlock& b = blocks_[static_cast<size_t>(*victim)];
  cache_.erase(b.content_hash);
  sink.push_back({now_ms, KvEventKind::kEvict, b.block_id, b.content_hash,
                  b.owner_request_id, b.adapter});
  b.in_use = false;
  return victim;
}

std::optional<int64_t> BlockManager::Allocate(uint64_t content_hash,
                                              const std::string& owner,
                                              const std::string& adapter,
                                              int64_t now_ms,
                                              std::vector<KvEvent>& sink) {
  std::optional<int64_t> id;
  if (!free_.empty()) {
    id = free_.front();
    free_.pop_front();
  } else {
    id = EvictLru(now_ms, sink);
  }
  if (!id) return std::nullopt;
  KvBlock& b = blocks_[static_cast<size_t>(*id)];
  b.content_hash = content_hash;
  b.owner_request_id = owner;
  b.adapter = adapter;
  b.ref = 1;
  b.last_use_ms = now_ms;
  b.in_use = true;
  ++b.generation;
  if (content_hash != 0) cache_.try_emplace(content_hash, *id);
  sink.push_back({now_ms, KvEventKind::kAlloc, *id, content_hash, owner, adapter});
  return id;
}

void BlockManager::Pin(int64_t id, uint64_t reported_hash, const std::string& owner,
                       const std::string& adapter, int64_t now_ms,
                       std::vector<KvEvent>& sink) {
  KvBlock& b = blocks_[static_cast<size_t>(id)];
  const KvEventKind kind = b.ref == 0 ? KvEventKind::kPrefixHit : KvEventKind::kReuse;
  if (b.ref == 0) lru_.erase({b.last_use_ms, id});
  ++b.ref;
  b.last_use_ms = now_ms;
  sink.push_back({now_ms, kind, id, reported_hash, owner, adapter});
}

void BlockManager::Release(int64_t id, int64_t now_ms, std::vector<KvEvent>& sink) {
  KvBlock& b = blocks_[static_cast<size_t>(id)];
  if (b.ref <= 0) return;
  --b.ref;
  b.last_use_ms = now_ms;
  if (b.ref > 0) return;
  auto it = cache_.find(b.content_hash);
  const bool cached = b.content_hash != 0 && it != cache_.end() && it->second == id;
  if (cached) {
    lru_.insert({now_ms, id});
    return;
  }
  sink.push_back({now_ms, KvEventKind::kFree, id, b.content_hash,
                  b.owner_request_id, b.adapter});
  b.in_use = false;
  free_.push_back(id);
}

}  // namespace servefuzz::sim
