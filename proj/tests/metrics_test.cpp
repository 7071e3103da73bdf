// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#include <gtest/gtest.h>

#include "dprompt/metrics.hpp"
#include "dprompt/reference_model.hpp"
#include "dprompt/synthetic.hpp"
#include "support.hpp"

namespace dprompt {
namespace {

TEST(Accuracy, MatchesLogitLoop) {
  ReferenceModel model(0);
  const auto task = bind(synthetic_task_spec(), model);
  const auto data = make_synthetic_examples(60, 9);
  const TokenIds prompt{22, 10, 44};
  const Matrix prefix = embed(model, prompt);
  std::size_t correct = 0;
  for (const auto& ex : data) {
    TokenIds seq = prompt;
    const auto body = render(task.spec, ex.text, model);
    seq.insert(seq.end(), body.begin(), body.end());
    const Matrix logits = forward_logits(model, empty_prefix(model), seq);
    const auto last = logits.rows() - 1;
    const std::size_t pred = logits(last, task.label_tokens[1]) > logits(last, task.label_tokens[0]) ? 1 : 0;
    correct += pred == *ex.label;
  }
  EXPECT_DOUBLE_EQ(accuracy(model, prefix, data, task), static_cast<double>(correct) / 60.0);
}

TEST(Accuracy, Errors) {
  ReferenceModel model(0);
  const auto task = bind(synthetic_task_spec(), model);
  EXPECT_THROW(accuracy(model, empty_prefix(model), {}, task), UsageError);
  const std::vector<Example> unlabeled{{"good", std::nullopt}};
  EXPECT_THROW(accuracy(model, empty_prefix(model), unlabeled, task), UsageError);
}

TEST(Perplexity, UniformModelGivesVocabularySize) {
  const std::size_t v = 12;
  testing::ConstantHiddenModel model(testing::stub_words(v), Matrix::Identity(v, v), RowVector::Zero(v));
  EXPECT_NEAR(prompt_perplexity(model, "w1 w2 w3 w4"), static_cast<double>(v), 1e-12);
}

TEST(Perplexity, MatchesLogitLoopOnReferenceModel) {
  ReferenceModel model(2);
  const std::string text = "this movie was very good";
  const auto ids = model.tokenize(text);
  const Matrix logits = forward_logits(model, empty_prefix(model), ids);
  double nll = 0.0;
  for (std::size_t t = 1; t < ids.size(); ++t) {
    double z = 0.0;
    for (Eigen::Index v = 0; v < logits.cols(); ++v) z += std::exp(logits(t - 1, v));
    nll += std::log(z) - logits(t - 1, ids[t]);
  }
  EXPECT_NEAR(prompt_perplexity(model, text), std::exp(nll / 4.0), 1e-9);
}

TEST(Perplexity, UndefinedBelowTwoTokens) {
  ReferenceModel model(0);
  EXPECT_THROW(prompt_perplexity(model, "good"), UsageError);
  EXPECT_THROW(prompt_perplexity(model, ""), UsageError);
}

TEST(Dist1, Examples) {
  const std::vector<std::string> a{"a b", "a c"};
  EXPECT_DOUBLE_EQ(dist1(a), 0.75);
  const std::vector<std::string> same{"x x x"};
  EXPECT_DOUBLE_EQ(dist1(same), 1.0 / 3.0);
  const std::vector<std::string> distinct{"one two", "three"};
  EXPECT_DOUBLE_EQ(dist1(distinct), 1.0);
  EXPECT_THROW(dist1({}), UsageError);
  const std::vector<std::string> blank{"  ", ""};
  EXPECT_THROW(dist1(blank), UsageError);
}

}  // namespace
}  // namespace dprompt
