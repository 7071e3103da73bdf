// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#pragma once

// Prompted label probabilities: a softmax over the verbalizer tokens' logits
// at the position right after the template cue.

#include <cmath>
#include <span>
#include <string_view>
#include <vector>

#include "dprompt/core.hpp"
#include "dprompt/lm_adapter.hpp"
#include "dprompt/task.hpp"

namespace dprompt {

/// Softmax restricted to `label_logits` (the normalizer runs over labels only).
inline std::vector<double> label_softmax(std::span<const double> label_logits) {
  double hi = label_logits[0];
  for (double z : label_logits) hi = std::max(hi, z);
  std::vector<double> p(label_logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] = std::exp(label_logits[i] - hi));
  for (double& x : p) x /= total;
  return p;
}

/// Verbalizer-token logits read off one hidden state.
template <typename HiddenRow>
std::vector<double> label_logits(const LanguageModel& model, const BoundTask& task, const HiddenRow& h) {
  std::vector<double> z(task.num_labels());
  for (std::size_t y = 0; y < z.size(); ++y)
    z[y] = model.output_embeddings().row(task.label_tokens[y]).dot(h);
  return z;
}

/// Label distribution after [prefix; body], read at the last body position.
inline LabelDistribution label_distribution_for_tokens(const LanguageModel& model, const Matrix& prefix,
                                                       std::span<const TokenId> body,
                                                       const BoundTask& task) {
  auto pass = checked_forward(model, join_inputs(model, prefix, body));
  const auto& h = pass->hidden();
  auto z = label_logits(model, task, h.row(h.rows() - 1));
  for (double v : z)
    if (!std::isfinite(v)) throw ModelFault("non-finite label logit");
  return LabelDistribution{task.spec.labels(), label_softmax(z)};
}

inline LabelDistribution label_word_distribution(const LanguageModel& model, const Matrix& prefix,
                                                 std::string_view input, const BoundTask& task) {
  return label_distribution_for_tokens(model, prefix, render(task.spec, input, model), task);
}

inline LabelDistribution label_word_distribution(const LanguageModel& model, const SoftPrompt& prompt,
                                                 std::string_view input, const BoundTask& task) {
  return label_word_distribution(model, prompt.entries, input, task);
}

inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

}  // namespace dprompt
