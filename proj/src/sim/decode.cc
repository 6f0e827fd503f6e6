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
#include "servefuzz/sim/decode.h"

#include <algorithm>
#include <cmath>

#include "servefuzz/util/hash.h"

namespace servefuzz::sim {
namespace {

// Deepest candidate list; temperature sampling draws over all of it.
constexpr int kCandidates = 20;

double Unit(uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace

PseudoDecoder::PseudoDecoder(const SimConfig& config)
    : vocab_size_(config.vocab_size),
      model_seed_(config.seed),
      near_tie_mode_(config.near_tie_mode),
      near_tie_gap_(config.near_tie_gap),
      near_tie_period_(config.near_tie_period) {}

uint64_t PseudoDecoder::StartDigest(std::string_view adapter) const {
  return HashCombine(HashCombine(model_seed_, 0xd1e57ULL), HashString(adapter));
}

uint64_t PseudoDecoder::Fold(uint64_t digest, Token token) {
  return HashCombine(digest, static_cast<uint64_t>(static_cast<uint32_t>(token)));
}

uint64_t PseudoDecoder::DigestOf(std::string_view adapter,
                                 const std::vector<Token>& context) const {
  uint64_t d = StartDigest(adapter);
  for (Token t : context) d = Fold(d, t);
  return d;
}

bool PseudoDecoder::NearTiePosition(int64_t position) const {
  return near_tie_mode_ && position % near_tie_period_ == 0;
}

DecodeStep PseudoDecoder::Step(uint64_t digest, int64_t position,
                               std::string_view adapter, int top_n, bool flip,
                               double temperature, uint64_t sample_seed) const {
  const uint64_t base = HashCombine(
      HashCombine(HashCombine(digest, static_cast<uint64_t>(position)),
                  HashString(adapter)),
      model_seed_);

  // Distinct candidate tokens with strictly decreasing logprobs.
  exec::PositionLogprobs cand;
  uint64_t h = base;
  double lp = -(0.05 + 0.3 * Unit(Mix64(base ^ 0x1f)));
  const bool tie = NearTiePosition(position);
  // Entries are generated in order, so a shallower list is a prefix of a
  // deeper one.
  const int depth = std::min(
      temperature > 0.0 ? kCandidates : std::clamp(top_n, 2, kCandidates),
      vocab_size_);
  while (static_cast<int>(cand.size()) < depth) {
    h = Mix64(h);
    const Token t = static_cast<Token>(h % static_cast<uint64_t>(vocab_size_));
    bool dup = false;
    for (const exec::TokenLogprob& c : cand) dup = dup || c.token == t;
    if (dup) continue;
    if (!cand.empty()) {
      const double gap = (cand.size() == 1 && tie)
                             ? near_tie_gap_
                             : 0.5 + 2.0 * Unit(Mix64(h ^ 0x2f));
      lp -= gap;
    }
    cand.push_back({t, lp});
  }

  size_t chosen = 0;
  if (temperature > 0.0) {
    std::vector<double> w;
    double total = 0.0;
    for (const exec::TokenLogprob& c : cand) {
      w.push_back(std::exp(c.logprob / temperature));
      total += w.back();
    }
    double u = Unit(HashCombine(base, sample_seed)) * total;
    for (chosen = 0; chosen + 1 < w.size() && u >= w[chosen]; ++chosen) {
      u -= w[chosen];
    }
  } else if (flip && tie) {
    chosen = 1;
  }
  if (chosen != 0) {
    // The drifted run sees its own pick on top.
    std::swap(cand[0].token, cand[chosen].token);
  }

  DecodeStep step;
  step.token = cand[0].token;
  step.near_tie = tie;
  cand.resize(static_cast<size_t>(std::clamp(top_n, 0, kCandidates)));
  step.top = std::move(cand);
  return step;
}

}  // namespace servefuzz::sim
