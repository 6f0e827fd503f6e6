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

#ifndef SERVEFUZZ_UTIL_RNG_H_
#define SERVEFUZZ_UTIL_RNG_H_

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace servefuzz {

// Deterministic random source. std::mt19937_64 output is fixed by the
// standard, but the std distributions are not, so all bounded draws are done
// here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t Next() { return engine_(); }

  // Uniform integer in [lo, hi]. Requires lo <= hi.
  int64_t UniformInt(int64_t lo, int64_t hi);

  // Uniform real in [0, 1).
  double UniformReal();

  bool Bernoulli(double p) { return UniformReal() < p; }

  size_t Index(size_t n) {
    return static_cast<size_t>(UniformInt(0, static_cast<int64_t>(n) - 1));
  }

  template <typename T>
  const T& Pick(const std::vector<T>& items) {
    return items[Index(items.size())];
  }

  // Index drawn proportionally to weights; falls back to uniform when all
  // weights are zero.
  size_t WeightedIndex(const std::vector<double>& weights);

 private:
  std::mt19937_64 engine_;
};

}  // namespace servefuzz

#endif  // SERVEFUZZ_UTIL_RNG_H_
