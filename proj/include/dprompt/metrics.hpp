// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#pragma once

#include <cmath>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dprompt/core.hpp"
#include "dprompt/lm_adapter.hpp"
#include "dprompt/prompting.hpp"
#include "dprompt/task.hpp"

namespace dprompt {

/// Fraction of examples whose argmax label (first label on ties) is the gold one.
inline double accuracy(const LanguageModel& model, const Matrix& prefix, std::span<const Example> dataset,
                       const BoundTask& task) {
  if (dataset.empty()) throw UsageError("accuracy: empty dataset");
  std::size_t correct = 0;
  for (const auto& ex : dataset) {
    if (!ex.label) throw UsageError("accuracy: unlabeled example");
    if (label_word_distribution(model, prefix, ex.text, task).argmax() == *ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

/// Mean next-token NLL of tokens 2..L of `ids` under the model's own logits.
inline double mean_token_nll(const LanguageModel& model, std::span<const TokenId> ids) {
  if (ids.size() < 2) throw UsageError("token NLL needs at least two tokens");
  const Matrix logits = forward_logits(model, empty_prefix(model), ids);
  double total = 0.0;
  for (std::size_t t = 1; t < ids.size(); ++t) {
    const auto row = logits.row(static_cast<Eigen::Index>(t - 1));
    total += log_sum_exp(row) - row(ids[t]);
  }
  return total / static_cast<double>(ids.size() - 1);
}

/// exp(mean causal NLL) of the text's tokens, natural base.
inline double prompt_perplexity(const LanguageModel& model, std::string_view prompt_text) {
  const auto ids = model.tokenize(prompt_text);
  if (ids.size() < 2)
    throw UsageError("perplexity is undefined for a prompt with fewer than two tokens");
  return std::exp(mean_token_nll(model, ids));
}

inline std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(std::move(w));
  return out;
}

/// Distinct unigrams over total unigrams, whitespace-tokenized.
inline double dist1(std::span<const std::string> prompts) {
  if (prompts.empty()) throw UsageError("dist1: empty prompt list");
  std::set<std::string> distinct;
  std::size_t total = 0;
  for (const auto& p : prompts) {
    auto words = whitespace_tokens(p);
    total += words.size();
    distinct.insert(words.begin(), words.end());
  }
  if (total == 0) throw UsageError("dist1: prompts contain no unigrams");
  return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

}  // namespace dprompt
