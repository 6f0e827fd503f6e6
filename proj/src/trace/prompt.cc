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
#include "servefuzz/trace/prompt.h"

#include <array>

#include "servefuzz/util/hash.h"

namespace servefuzz::trace {
namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";
constexpr uint64_t kSyllables = 14 * 5;

constexpr uint64_t kPrefixSalt = 0x70726566ULL;  // "pref"
constexpr uint64_t kSuffixSalt = 0x73756666ULL;  // "suff"

Token ChainToken(uint64_t state, int vocab_size) {
  return static_cast<Token>(state % static_cast<uint64_t>(vocab_size));
}

}  // namespace

std::vector<Token> SynthesizePrompt(const PromptShape& shape,
                                    std::string_view family,
                                    const PromptCorpus& corpus) {
  std::vector<Token> tokens;
  tokens.reserve(static_cast<size_t>(shape.prompt_len));
  // Hash chain over the structural shape only.
  uint64_t state = HashCombine(HashCombine(corpus.corpus_seed, kPrefixSalt),
                               static_cast<uint64_t>(shape.prefix_len));
  for (int64_t i = 0; i < shape.prefix_len; ++i) {
    state = Mix64(state);
    tokens.push_back(ChainToken(state, corpus.vocab_size));
  }
  state = HashCombine(HashCombine(corpus.corpus_seed, kSuffixSalt),
                      HashString(family));
  state = HashCombine(state, static_cast<uint64_t>(shape.prefix_len));
  state = HashCombine(state, static_cast<uint64_t>(shape.prompt_len));
  for (int64_t i = shape.prefix_len; i < shape.prompt_len; ++i) {
    state = Mix64(state);
    tokens.push_back(ChainToken(state, corpus.vocab_size));
  }
  return tokens;
}

std::string TokenText(Token token) {
  // Little-endian base-70 syllables, at least two of them.
  std::string word;
  uint64_t value = static_cast<uint64_t>(token);
  int syllables = 0;
  do {
    const uint64_t s = value % kSyllables;
    word.push_back(kConsonants[s / 5]);
    word.push_back(kVowels[s % 5]);
    value /= kSyllables;
    ++syllables;
  } while (value > 0 || syllables < 2);
  return word;
}

std::optional<Token> ParseTokenText(std::string_view word, int vocab_size) {
  if (word.size() < 4 || word.size() % 2 != 0) return std::nullopt;
  uint64_t value = 0;
  uint64_t scale = 1;
  for (size_t i = 0; i < word.size(); i += 2) {
    const size_t c = kConsonants.find(word[i]);
    const size_t v = kVowels.find(word[i + 1]);
    if (c == std::string_view::npos || v == std::string_view::npos) {
      return std::nullopt;
    }
    value += (c * 5 + v) * scale;
    scale *= kSyllables;
  }
  if (value >= static_cast<uint64_t>(vocab_size)) return std::nullopt;
  // Reject non-canonical spellings with redundant high syllables.
  if (TokenText(static_cast<Token>(value)) != word) return std::nullopt;
  return static_cast<Token>(value);
}

std::string RenderText(const std::vector<Token>& tokens) {
  std::string text;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) text.push_back(' ');
    text += TokenText(tokens[i]);
  }
  return text;
}

std::vector<Token> ParseText(std::string_view text, int vocab_size) {
  std::vector<Token> tokens;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t end = text.find(' ', pos);
    if (end == std::string_view::npos) end = text.size();
    if (end > pos) {
      tokens.push_back(
          ParseTokenText(text.substr(pos, end - pos), vocab_size).value_or(-1));
    }
    pos = end + 1;
  }
  return tokens;
}

}  // namespace servefuzz::trace
