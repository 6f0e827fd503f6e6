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
#ifndef SERVEFUZZ_TRACE_PROMPT_H_
#define SERVEFUZZ_TRACE_PROMPT_H_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "servefuzz/trace/trace.h"

namespace servefuzz::trace {

// Campaign-wide knobs for synthetic prompt content.
struct PromptCorpus {
  uint64_t corpus_seed = 0x5eedc0de;
  int vocab_size = 1024;
};

using Token = int32_t;

// Exactly shape.prompt_len tokens. The first prefix_len tokens depend only on
// prefix_len and the corpus seed; the rest on (family, shape).
std::vector<Token> SynthesizePrompt(const PromptShape& shape,
                                    std::string_view family,
                                    const PromptCorpus& corpus);

inline std::vector<Token> SynthesizePrompt(const RequestSpec& spec,
                                           const PromptCorpus& corpus) {
  return SynthesizePrompt(spec.shape, spec.PromptIdentity(), corpus);
}

// Synthetic vocabulary of pronounceable words. TokenText is injective over
// [0, vocab_size).
std::string TokenText(Token token);
std::optional<Token> ParseTokenText(std::string_view word, int vocab_size);

std::string RenderText(const std::vector<Token>& tokens);
// Splits on single spaces. Unknown words map to -1.
std::vector<Token> ParseText(std::string_view text, int vocab_size);

}  // namespace servefuzz::trace

#endif  // SERVEFUZZ_TRACE_PROMPT_H_
