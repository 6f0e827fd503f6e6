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
#ifndef SERVEFUZZ_SIM_DECODE_H_
#define SERVEFUZZ_SIM_DECODE_H_

#include <cstdint>
#include <string_view>
#include <vector>

#include "servefuzz/exec/report.h"
#include "servefuzz/sim/config.h"
#include "servefuzz/trace/prompt.h"

namespace servefuzz::sim {

using trace::Token;

struct DecodeStep {
  Token token = 0;
  // Top-N candidates, descending; the first entry is the returned token.
  exec::PositionLogprobs top;
  bool near_tie = false;
};

// Deterministic stand-in for the model. The rolling digest covers every
// context token, so any change to the context changes all later tokens.
class PseudoDecoder {
 public:
  explicit PseudoDecoder(const SimConfig& config);

  uint64_t StartDigest(std::string_view adapter) const;
  static uint64_t Fold(uint64_t digest, Token token);
  uint64_t DigestOf(std::string_view adapter,
                    const std::vector<Token>& context) const;

  // top_n = 0 still computes the token. flip selects the runner-up at a
  // near-tie position, which models batch-shape numerical drift.
  // Temperature > 0 samples over the candidate list by hash of sample_seed.
  DecodeStep Step(uint64_t digest, int64_t position, std::string_view adapter,
                  int top_n, bool flip = false, double temperature = 0.0,
                  uint64_t sample_seed = 0) const;

  bool NearTiePosition(int64_t position) const;

 private:
  int vocab_size_;
  uint64_t model_seed_;
  bool near_tie_mode_;
  double near_tie_gap_;
  int near_tie_period_;
};

}  // namespace servefuzz::sim

#endif  // SERVEFUZZ_SIM_DECODE_H_
