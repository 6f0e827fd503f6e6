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
#include <map>

#include "servefuzz/campaign/campaign.h"
#include "servefuzz/trace/trace_io.h"
#include "servefuzz/trace/validate.h"
#include "servefuzz/util/hash.h"

namespace servefuzz::campaign {
namespace {

using nlohmann::json;
using trace::TimedTrace;

TimedTrace Subset(const TimedTrace& t, const std::vector<size_t>& keep) {
  TimedTrace out = t;
  out.events.clear();
  for (size_t i : keep) out.events.push_back(t.events[i]);
  return trace::Repair(out);
}

std::vector<size_t> Iota(size_t n) {
  std::vector<size_t> v(n);
  for (size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Memoizes majority outcomes by trace content.
class Oracle {
 public:
  Oracle(const Predicate& predicate, int k, MinimizeResult& result)
      : predicate_(predicate), k_(k), result_(result) {}

  bool operator()(const TimedTrace& t) {
    TimedTrace key = t;
    key.trace_id.clear();
    key.metadata.clear();
    const uint64_t h = HashString(trace::Serialize(key));
    auto it = memo_.find(h);
    if (it != memo_.end()) return it->second;
    int yes = 0;
    int no = 0;
    const int need = confirm::MajorityThreshold(k_);
    while (yes < need && no <= k_ - need) {
      ++result_.predicate_calls;
      (predicate_(t) ? yes : no) += 1;
    }
    return memo_[h] = yes >= need;
  }

 private:
  const Predicate& predicate_;
  int k_;
  MinimizeResult& result_;
  std::map<uint64_t, bool> memo_;
};

TimedTrace OneMinimal(TimedTrace t, Oracle& holds, MinimizeResult& r) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (size_t i = 0; i < t.events.size() && t.events.size() > 1; ++i) {
      std::vector<size_t> keep = Iota(t.events.size());
      keep.erase(keep.begin() + static_cast<std::ptrdiff_t>(i));
      TimedTrace candidate = Subset(t, keep);
      bool ok = holds(candidate);
      r.log.push_back({{"phase", "single"}, {"remove", i}, {"events", candidate.events.size()},
                       {"accepted", ok}});
      if (ok) {
        t = std::move(candidate);
        changed = true;
        break;
      }
    }
  }
  return t;
}

}  // namespace

bool MajorityHolds(const Predicate& predicate, const TimedTrace& t, int k) {
  MinimizeResult scratch;
  Oracle holds(predicate, k, scratch);
  return holds(t);
}

MinimizeResult Minimize(const TimedTrace& input, const Predicate& predicate, int k) {
  MinimizeResult r;
  r.trace = input;
  Oracle holds(predicate, k, r);
  if (!holds(input)) {
    r.refused = true;
    r.log.push_back({{"phase", "input"}, {"accepted", false}});
    return r;
  }

  // ddmin over event indices of the input.
  std::vector<size_t> cur = Iota(input.events.size());
  size_t n = 2;
  while (cur.size() >= 2) {
    std::vector<std::vector<size_t>> chunks;
    const size_t size = cur.size();
    for (size_t c = 0; c < n; ++c) {
      size_t lo = c * size / n;
      size_t hi = (c + 1) * size / n;
      if (lo < hi) chunks.emplace_back(cur.begin() + lo, cur.begin() + hi);
    }
    bool reduced = false;
    for (const auto& chunk : chunks) {
      bool ok = holds(Subset(input, chunk));
      r.log.push_back({{"phase", "ddmin-subset"}, {"granularity", n},
                       {"events", chunk.size()}, {"accepted", ok}});
      if (ok) {
        cur = chunk;
        n = 2;
        reduced = true;
        break;
      }
    }
    if (!reduced && chunks.size() > 2) {
      for (size_t c = 0; c < chunks.size(); ++c) {
        std::vector<size_t> complement;
        for (size_t d = 0; d < chunks.size(); ++d) {
          if (d != c) complement.insert(complement.end(), chunks[d].begin(), chunks[d].end());
        }
        bool ok = holds(Subset(input, complement));
        r.log.push_back({{"phase", "ddmin-complement"}, {"granularity", n},
                         {"events", complement.size()}, {"accepted", ok}});
        if (ok) {
          cur = std::move(complement);
          n = std::max<size_t>(n - 1, 2);
          reduced = true;
          break;
        }
      }
    }
    if (!reduced) {
      if (n >= cur.size()) break;
      n = std::min(cur.size(), 2 * n);
    }
  }
  TimedTrace t = OneMinimal(Subset(input, cur), holds, r);

  // Pull each event (and everything after it) back onto its predecessor; the
  // lead-in before the first event counts as a gap from trace start.
  for (size_t i = 0; i < t.events.size(); ++i) {
    const int64_t prev = i == 0 ? 0 : t.events[i - 1].offset_ms;
    const int64_t gap = t.events[i].offset_ms - prev;
    if (gap <= 0) continue;
    for (int64_t shift : {gap, gap / 2}) {
      if (shift <= 0) continue;
      TimedTrace candidate = t;
      for (size_t j = i; j < candidate.events.size(); ++j) candidate.events[j].offset_ms -= shift;
      bool ok = holds(candidate);
      r.log.push_back({{"phase", "collapse"}, {"event", i}, {"shift_ms", shift},
                       {"accepted", ok}});
      if (ok) {
        t = std::move(candidate);
        break;
      }
    }
  }
  t = OneMinimal(std::move(t), holds, r);
  t.trace_id = input.trace_id + "-min";
  t.metadata["minimized_from"] = input.trace_id;
  r.trace = std::move(t);
  return r;
}

Predicate ReproducePredicate(exec::Target& target, const oracle::Suspicion& suspicion,
                             const oracle::Thresholds& thresholds) {
  return [&target, suspicion, thresholds](const TimedTrace& t) {
    if (target.SupportsReset()) target.Reset();
    exec::ExecutionReport r = target.Execute(t);
    if (suspicion.kind == oracle::SuspicionKind::kCrash) return r.server_crashed;
    oracle::BaselineStats none;
    oracle::CheckResult found = oracle::Evaluate(t, r, none, thresholds);
    return std::any_of(found.suspicions.begin(), found.suspicions.end(),
                       [&](const oracle::Suspicion& s) {
                         return s.fingerprint == suspicion.fingerprint;
                       });
  };
}

}  // namespace servefuzz::campaign
