// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#pragma once

// A separable two-label sentiment task over the reference vocabulary: each
// input mixes neutral filler with words drawn from its label's word pool.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dprompt/task.hpp"

namespace dprompt {

struct SyntheticTaskOptions {
  std::size_t min_length = 4;
  std::size_t max_length = 8;
  double class_word_rate = 0.4;
  std::vector<std::string> positive_words{"good", "great", "fine", "nice", "love", "best", "fun", "happy"};
  std::vector<std::string> negative_words{"bad", "awful", "poor", "sad", "hate", "worst", "dull", "boring"};
  std::vector<std::string> filler_words{"the",  "movie", "film", "plot", "story", "acting", "was", "very",
                                        "really", "so",  "and",  "a",    "this",  "is",     "it",  "of"};
};

/// sst2's template, verbalizer and domain strings, used as the synthetic task.
inline TaskSpec synthetic_task_spec() {
  auto task = builtin_task("sst2");
  task.id = "synthetic";
  return task;
}

/// `n` examples; labels alternate positive/negative before a seeded shuffle,
/// so the two classes are exactly balanced for even n.
inline std::vector<Example> make_synthetic_examples(std::size_t n, std::uint64_t seed,
                                                    const SyntheticTaskOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> length(opt.min_length, opt.max_length);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t e = 0; e < n; ++e) {
    const std::size_t label = e % 2;
    const auto& pool = label == 0 ? opt.positive_words : opt.negative_words;
    std::uniform_int_distribution<std::size_t> pick_class(0, pool.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_filler(0, opt.filler_words.size() - 1);
    const auto len = length(rng);
    const auto forced = std::uniform_int_distribution<std::size_t>(0, len - 1)(rng);
    std::string text;
    for (std::size_t t = 0; t < len; ++t) {
      const bool class_word = t == forced || unif(rng) < opt.class_word_rate;
      if (!text.empty()) text.push_back(' ');
      text += class_word ? pool[pick_class(rng)] : opt.filler_words[pick_filler(rng)];
    }
    out.push_back({std::move(text), label});
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace dprompt
