// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#include <gtest/gtest.h>

#include "dprompt/energy.hpp"
#include "dprompt/metrics.hpp"
#include "dprompt/prompting.hpp"
#include "dprompt/reference_model.hpp"
#include "dprompt/synthetic.hpp"
#include "support.hpp"

namespace dprompt {
namespace {

using testing::central_difference;
using testing::random_matrix;
using testing::relative_error;

struct Fixture {
  ReferenceModel model{0};
  BoundTask task = bind(synthetic_task_spec(), model);
  std::vector<PreparedExample> batch = prepare(make_synthetic_examples(6, 3), task, model);
};

// Oracles built from plain forward_logits calls.

double oracle_task_nll(const Fixture& f, const Matrix& prefix) {
  double total = 0.0;
  for (const auto& ex : f.batch) {
    const auto d = label_distribution_for_tokens(f.model, prefix, ex.body, f.task);
    total -= std::log(d.probs[*ex.label]);
  }
  return total / static_cast<double>(f.batch.size());
}

double oracle_entropy_loss(const Fixture& f, const Matrix& prefix) {
  std::vector<double> mean(f.task.num_labels(), 0.0);
  for (const auto& ex : f.batch) {
    const auto d = label_distribution_for_tokens(f.model, prefix, ex.body, f.task);
    for (std::size_t y = 0; y < mean.size(); ++y) mean[y] += d.probs[y] / static_cast<double>(f.batch.size());
  }
  double v = 0.0;
  for (double p : mean) v += p * std::log(p);
  return v;
}

double oracle_fluency(const LanguageModel& model, const Matrix& prefix) {
  const Matrix h = checked_forward(model, prefix)->hidden();
  const Matrix& table = model.embedding_table().entries();
  double nll = 0.0;
  for (Eigen::Index m = 1; m < prefix.rows(); ++m) {
    double z = 0.0;
    for (Eigen::Index v = 0; v < table.rows(); ++v) z += std::exp(table.row(v).dot(h.row(m - 1)));
    nll += std::log(z) - prefix.row(m).dot(h.row(m - 1));
  }
  return nll;
}

double oracle_domain(const Fixture& f, const Matrix& prefix) {
  double total = 0.0;
  for (const auto& ex : f.batch) {
    const Matrix logits = forward_logits(f.model, prefix, ex.body);
    const Matrix h = checked_forward(f.model, join_inputs(f.model, prefix, ex.body))->hidden();
    double nll = 0.0;
    const Matrix& table = f.model.embedding_table().entries();
    for (Eigen::Index m = 1; m < prefix.rows(); ++m) {
      double z = 0.0;
      for (Eigen::Index v = 0; v < table.rows(); ++v) z += std::exp(table.row(v).dot(h.row(m - 1)));
      nll += std::log(z) - prefix.row(m).dot(h.row(m - 1));
    }
    for (std::size_t j = 0; j < ex.body.size(); ++j) {
      const auto pos = prefix.rows() + static_cast<Eigen::Index>(j);
      if (pos == 0) continue;
      nll += log_sum_exp(logits.row(pos - 1)) - logits(pos - 1, ex.body[j]);
    }
    total += nll;
  }
  return total / static_cast<double>(f.batch.size());
}

TEST(Energy, ValuesMatchOracles) {
  Fixture f;
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 3; ++trial) {
    const Matrix prefix = random_matrix(5, 16, rng, 0.4);
    EXPECT_NEAR(task_nll(f.model, prefix, f.batch, f.task).value, oracle_task_nll(f, prefix), 1e-10);
    EXPECT_NEAR(entropy_loss(f.model, prefix, f.batch, f.task).value, oracle_entropy_loss(f, prefix), 1e-10);
    EXPECT_NEAR(fluency_nll(f.model, prefix).value, oracle_fluency(f.model, prefix), 1e-9);
    EXPECT_NEAR(domain_nll(f.model, prefix, f.batch).value, oracle_domain(f, prefix), 1e-9);
  }
}

TEST(Energy, GradientsMatchFiniteDifferences) {
  Fixture f;
  std::mt19937_64 rng(11);
  const Matrix prefix = random_matrix(5, 16, rng, 0.4);
  auto check = [&](auto&& energy, const char* name) {
    const Matrix analytic = energy(prefix).grad;
    const Matrix numeric = central_difference([&](const Matrix& p) { return energy(p).value; }, prefix);
    EXPECT_LT(relative_error(analytic, numeric), 1e-6) << name;
  };
  check([&](const Matrix& p) { return task_nll(f.model, p, f.batch, f.task); }, "task");
  check([&](const Matrix& p) { return fluency_nll(f.model, p); }, "fluency");
  check([&](const Matrix& p) { return entropy_loss(f.model, p, f.batch, f.task); }, "entropy");
  check([&](const Matrix& p) { return domain_nll(f.model, p, f.batch); }, "domain");
  for (const auto& cfg : {EnergyConfig::supervised(0.3), EnergyConfig::unsupervised(0.2, EnergySign::intent),
                          EnergyConfig::unsupervised(0.2, EnergySign::literal)}) {
    check(
        [&](const Matrix& p) {
          auto r = evaluate_energy(f.model, p, f.batch, f.task, cfg);
          return EnergyValue{r.breakdown.total, r.grad};
        },
        "combined");
  }
}

TEST(Energy, EntropyLossRange) {
  Fixture f;
  std::mt19937_64 rng(2);
  const double lo = -std::log(2.0);
  for (int trial = 0; trial < 5; ++trial) {
    const double v = entropy_loss(f.model, random_matrix(3, 16, rng), f.batch, f.task).value;
    EXPECT_GE(v, lo - 1e-12);
    EXPECT_LE(v, 0.0);
  }
}

TEST(Energy, MeanThenEntropyNotEntropyThenMean) {
  Fixture f;
  const Matrix prefix = Matrix::Zero(2, 16);
  const double v = entropy_loss(f.model, prefix, f.batch, f.task).value;
  double mean_of_neg_entropy = 0.0;
  for (const auto& ex : f.batch)
    mean_of_neg_entropy -= entropy(label_distribution_for_tokens(f.model, prefix, ex.body, f.task).probs);
  mean_of_neg_entropy /= static_cast<double>(f.batch.size());
  EXPECT_LE(v, mean_of_neg_entropy + 1e-12);  // Jensen: −H(mean p) ≤ mean(−H(p))
}

TEST(Energy, FluencyOfSingleRowIsZero) {
  ReferenceModel model(0);
  const auto r = fluency_nll(model, Matrix::Ones(1, 16));
  EXPECT_EQ(r.value, 0.0);
  EXPECT_TRUE(r.grad.isZero());
}

TEST(Energy, FluencyOfProjectedPromptMatchesPerplexity) {
  // tied output layer: embedding-based fluency equals token-level causal NLL
  ReferenceModel model(1);
  const TokenIds ids{3, 22, 10, 44, 4};
  const double fl = fluency_nll(model, embed(model, ids)).value / 4.0;
  EXPECT_NEAR(std::exp(fl), prompt_perplexity(model, model.detokenize(ids)), 1e-9);
}

TEST(Energy, TaskNllRequiresLabels) {
  Fixture f;
  auto batch = f.batch;
  batch[0].label.reset();
  EXPECT_THROW(task_nll(f.model, Matrix::Zero(2, 16), batch, f.task), DataError);
  EXPECT_THROW(task_nll(f.model, Matrix::Zero(2, 16), {}, f.task), UsageError);
}

TEST(Energy, DomainHandlesEmptyPrefix) {
  Fixture f;
  const auto r = domain_nll(f.model, empty_prefix(f.model), f.batch);
  EXPECT_NEAR(r.value, oracle_domain(f, empty_prefix(f.model)), 1e-9);
  EXPECT_EQ(r.grad.rows(), 0);
}

TEST(EnergyConfig, WeightsAndValidation) {
  const auto sup = EnergyConfig::supervised(0.1);
  EXPECT_DOUBLE_EQ(sup.lambda_task, 0.9);
  EXPECT_EQ(sup.term_weights().size(), 2u);
  EXPECT_TRUE(sup.term_weights().count("task"));
  const auto lit = EnergyConfig::unsupervised(0.003, EnergySign::literal);
  EXPECT_DOUBLE_EQ(lit.term_weights().at("entropy"), -0.997);
  EXPECT_DOUBLE_EQ(lit.term_weights().at("domain"), -0.003);
  EXPECT_THROW(EnergyConfig::supervised(1.5), ConfigError);
  EnergyConfig bad = sup;
  bad.lambda_task = 0.5;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(EnergyConfig, ModeMismatchIsAnError) {
  Fixture f;
  EXPECT_THROW(supervised_energy(f.model, Matrix::Zero(2, 16), f.batch, f.task, EnergyConfig::unsupervised(0.1)),
               ConfigError);
  EXPECT_THROW(unsupervised_energy(f.model, Matrix::Zero(2, 16), f.batch, f.task, EnergyConfig::supervised(0.1)),
               ConfigError);
}

TEST(Energy, BreakdownTermsPerMode) {
  Fixture f;
  const Matrix prefix = Matrix::Zero(3, 16);
  auto sup = evaluate_energy(f.model, prefix, f.batch, f.task, EnergyConfig::supervised(0.25));
  EXPECT_NEAR(sup.breakdown.total, 0.75 * sup.breakdown.per_term.at("task") + 0.25 * sup.breakdown.per_term.at("fluency"),
              1e-12);
  auto uns = evaluate_energy(f.model, prefix, f.batch, f.task, EnergyConfig::unsupervised(0.5, EnergySign::literal));
  EXPECT_NEAR(uns.breakdown.total,
              -0.5 * uns.breakdown.per_term.at("entropy") - 0.5 * uns.breakdown.per_term.at("domain"), 1e-12);
}

}  // namespace
}  // namespace dprompt
