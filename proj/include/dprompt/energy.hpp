// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#pragma once

// Scalar energies over a prompt prefix (lower is better) and their analytic
// gradients with respect to the prefix rows.
//
//   task      mean −log p(v(y) | prompt, x, t)
//   fluency   −Σ_{m≥1} log softmax_E(h_{m−1} · e_m)[e_m]
//   entropy   Σ_y p̄(y) log p̄(y), p̄ = batch mean of label distributions
//   domain    fluency + causal NLL of rendered input tokens, batch mean
//
// Batch reductions are arithmetic means.

#include <cmath>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dprompt/core.hpp"
#include "dprompt/lm_adapter.hpp"
#include "dprompt/prompting.hpp"
#include "dprompt/task.hpp"

namespace dprompt {

enum class EnergyMode { supervised, unsupervised };

/// intent: minimize λ_cal·entropy + λ_dom·domain (balanced p̄, low domain NLL).
/// literal: minimize −λ_cal·entropy − λ_dom·domain, the printed sign.
enum class EnergySign { intent, literal };

struct EnergyConfig {
  EnergyMode mode = EnergyMode::supervised;
  double lambda_task = 1.0;
  double lambda_fluency = 0.0;
  double lambda_calibration = 0.0;
  double lambda_domain = 0.0;
  EnergySign sign = EnergySign::intent;

  static EnergyConfig supervised(double lambda_fluency) {
    EnergyConfig c;
    c.mode = EnergyMode::supervised;
    c.lambda_fluency = lambda_fluency;
    c.lambda_task = 1.0 - lambda_fluency;
    c.validate();
    return c;
  }

  static EnergyConfig unsupervised(double lambda_domain, EnergySign sign = EnergySign::intent) {
    EnergyConfig c;
    c.mode = EnergyMode::unsupervised;
    c.lambda_task = 0.0;
    c.lambda_domain = lambda_domain;
    c.lambda_calibration = 1.0 - lambda_domain;
    c.sign = sign;
    c.validate();
    return c;
  }

  void validate() const {
    for (double l : {lambda_task, lambda_fluency, lambda_calibration, lambda_domain})
      if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("energy weights must lie in [0, 1]");
    constexpr double tol = 1e-12;
    if (mode == EnergyMode::supervised && std::abs(lambda_task + lambda_fluency - 1.0) > tol)
      throw ConfigError("supervised energy needs lambda_task + lambda_fluency = 1");
    if (mode == EnergyMode::unsupervised && std::abs(lambda_calibration + lambda_domain - 1.0) > tol)
      throw ConfigError("unsupervised energy needs lambda_calibration + lambda_domain = 1");
  }

  /// Signed coefficient of each logged term in the total.
  std::map<std::string, double> term_weights() const {
    if (mode == EnergyMode::supervised) return {{"task", lambda_task}, {"fluency", lambda_fluency}};
    const double s = sign == EnergySign::intent ? 1.0 : -1.0;
    return {{"entropy", s * lambda_calibration}, {"domain", s * lambda_domain}};
  }
};

struct EnergyValue {
  double value = 0.0;
  Matrix grad;  // same shape as the prefix
};

struct EnergyBreakdown {
  double total = 0.0;
  std::map<std::string, double> per_term;
};

struct EnergyResult {
  EnergyBreakdown breakdown;
  Matrix grad;
};

/// An example rendered and tokenized once, reused across steps.
struct PreparedExample {
  TokenIds body;
  std::optional<std::size_t> label;
};

inline std::vector<PreparedExample> prepare(std::span<const Example> examples, const BoundTask& task,
                                            const LanguageModel& model) {
  std::vector<PreparedExample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    if (e.label && *e.label >= task.num_labels())
      throw DataError("label index " + std::to_string(*e.label) + " outside task labels");
    out.push_back({render(task.spec, e.text, model), e.label});
  }
  return out;
}

namespace detail {

/// Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct PrefixedPass {
  Eigen::Index prefix_rows = 0;
  std::unique_ptr<ForwardPass> pass;

  const Matrix& hidden() const { return pass->hidden(); }
  Matrix prefix_grad(const Matrix& grad_hidden) const {
    return pass->backward(grad_hidden).topRows(prefix_rows);
  }
};

inline PrefixedPass run_prefixed(const LanguageModel& model, const Matrix& prefix,
                                 std::span<const TokenId> body) {
  return {prefix.rows(), checked_forward(model, join_inputs(model, prefix, body))};
}

/// Adds the embedding-based fluency NLL of the prefix rows. Only the first
/// prefix.rows() hidden states are read, so `hidden` may come from a longer
/// causal pass that starts with the prefix.
inline double accumulate_fluency(const LanguageModel& model, const Matrix& hidden, const Matrix& prefix,
                                 Matrix& grad_hidden, Matrix& grad_prefix) {
  const Matrix& table = model.embedding_table().entries();
  double nll = 0.0;
  for (Eigen::Index m = 1; m < prefix.rows(); ++m) {
    const auto h = hidden.row(m - 1);
    Vector scores = table * h.transpose();
    const double lse = log_sum_exp(scores);
    nll += lse - h.dot(prefix.row(m));
    Vector soft = (scores.array() - lse).exp();
    grad_hidden.row(m - 1) += (table.transpose() * soft).transpose() - prefix.row(m);
    grad_prefix.row(m) -= h;
  }
  return nll;
}

/// Adds the causal NLL of body tokens that have a predecessor in the sequence.
inline double accumulate_body_nll(const LanguageModel& model, const Matrix& hidden, Eigen::Index prefix_rows,
                                  std::span<const TokenId> body, Matrix& grad_hidden) {
  const Matrix& out = model.output_embeddings();
  double nll = 0.0;
  for (std::size_t j = 0; j < body.size(); ++j) {
    const Eigen::Index pos = prefix_rows + static_cast<Eigen::Index>(j);
    if (pos == 0) continue;  // nothing to condition on
    const auto h = hidden.row(pos - 1);
    Vector logits = out * h.transpose();
    const double lse = log_sum_exp(logits);
    nll += lse - logits(body[j]);
    Vector soft = (logits.array() - lse).exp();
    soft(body[j]) -= 1.0;
    grad_hidden.row(pos - 1) += (out.transpose() * soft).transpose();
  }
  return nll;
}

inline void require_batch(std::span<const PreparedExample> batch, const char* what) {
  if (batch.empty()) throw UsageError(std::string(what) + ": batch is empty");
}

}  // namespace detail

inline EnergyValue task_nll(const LanguageModel& model, const Matrix& prefix,
                            std::span<const PreparedExample> batch, const BoundTask& task) {
  detail::require_batch(batch, "task_nll");
  const Matrix& out = model.output_embeddings();
  detail::CompensatedSum total;
  Matrix grad = Matrix::Zero(prefix.rows(), prefix.cols());
  for (const auto& ex : batch) {
    if (!ex.label || *ex.label >= task.num_labels()) throw DataError("task_nll: example without a valid label");
    auto run = detail::run_prefixed(model, prefix, ex.body);
    const auto& h = run.hidden();
    const auto last = h.rows() - 1;
    auto z = label_logits(model, task, h.row(last));
    const auto p = label_softmax(z);
    const double lse = log_sum_exp(Eigen::Map<const Vector>(z.data(), static_cast<Eigen::Index>(z.size())));
    total.add(lse - z[*ex.label]);
    if (prefix.rows() > 0) {
      Matrix gh = Matrix::Zero(h.rows(), h.cols());
      for (std::size_t y = 0; y < p.size(); ++y)
        gh.row(last) += (p[y] - (y == *ex.label ? 1.0 : 0.0)) * out.row(task.label_tokens[y]);
      grad += run.prefix_grad(gh);
    }
  }
  const double n = static_cast<double>(batch.size());
  return {total.value() / n, grad / n};
}

inline EnergyValue fluency_nll(const LanguageModel& model, const Matrix& prefix) {
  if (prefix.rows() < 1) throw ConfigError("fluency_nll needs M >= 1");
  Matrix grad = Matrix::Zero(prefix.rows(), prefix.cols());
  if (prefix.rows() == 1) return {0.0, grad};
  auto run = detail::run_prefixed(model, prefix, {});
  Matrix gh = Matrix::Zero(run.hidden().rows(), run.hidden().cols());
  const double nll = detail::accumulate_fluency(model, run.hidden(), prefix, gh, grad);
  grad += run.prefix_grad(gh);
  return {nll, grad};
}

inline EnergyValue entropy_loss(const LanguageModel& model, const Matrix& prefix,
                                std::span<const PreparedExample> batch, const BoundTask& task) {
  detail::require_batch(batch, "entropy_loss");
  const auto k = task.num_labels();
  const double n = static_cast<double>(batch.size());
  std::vector<detail::PrefixedPass> runs;
  std::vector<std::vector<double>> dists;
  std::vector<detail::CompensatedSum> sums(k);
  for (const auto& ex : batch) {
    auto run = detail::run_prefixed(model, prefix, ex.body);
    const auto& h = run.hidden();
    auto p = label_softmax(label_logits(model, task, h.row(h.rows() - 1)));
    for (std::size_t y = 0; y < k; ++y) sums[y].add(p[y]);
    dists.push_back(std::move(p));
    runs.push_back(std::move(run));
  }
  std::vector<double> mean(k), dmean(k);
  double value = 0.0;
  for (std::size_t y = 0; y < k; ++y) {
    mean[y] = sums[y].value() / n;
    if (mean[y] > 0.0) value += mean[y] * std::log(mean[y]);
    dmean[y] = (std::log(std::max(mean[y], 1e-300)) + 1.0) / n;
  }

  Matrix grad = Matrix::Zero(prefix.rows(), prefix.cols());
  if (prefix.rows() > 0) {
    const Matrix& out = model.output_embeddings();
    for (std::size_t b = 0; b < runs.size(); ++b) {
      const auto& p = dists[b];
      double inner = 0.0;
      for (std::size_t y = 0; y < k; ++y) inner += p[y] * dmean[y];
      const auto& h = runs[b].hidden();
      Matrix gh = Matrix::Zero(h.rows(), h.cols());
      for (std::size_t y = 0; y < k; ++y)
        gh.row(h.rows() - 1) += p[y] * (dmean[y] - inner) * out.row(task.label_tokens[y]);
      grad += runs[b].prefix_grad(gh);
    }
  }
  return {value, grad};
}

inline EnergyValue domain_nll(const LanguageModel& model, const Matrix& prefix,
                              std::span<const PreparedExample> batch) {
  detail::require_batch(batch, "domain_nll");
  detail::CompensatedSum total;
  Matrix grad = Matrix::Zero(prefix.rows(), prefix.cols());
  for (const auto& ex : batch) {
    if (prefix.rows() + static_cast<Eigen::Index>(ex.body.size()) == 0) continue;
    auto run = detail::run_prefixed(model, prefix, ex.body);
    const auto& h = run.hidden();
    Matrix gh = Matrix::Zero(h.rows(), h.cols());
    Matrix direct = Matrix::Zero(prefix.rows(), prefix.cols());
    double nll = detail::accumulate_fluency(model, h, prefix, gh, direct);
    nll += detail::accumulate_body_nll(model, h, prefix.rows(), ex.body, gh);
    total.add(nll);
    if (prefix.rows() > 0) grad += direct + run.prefix_grad(gh);
  }
  const double n = static_cast<double>(batch.size());
  return {total.value() / n, grad / n};
}

inline EnergyResult combine(const EnergyConfig& cfg, const std::map<std::string, EnergyValue>& terms) {
  EnergyResult r;
  const auto weights = cfg.term_weights();
  detail::CompensatedSum total;
  for (const auto& [name, w] : weights) {
    const auto& t = terms.at(name);
    r.breakdown.per_term[name] = t.value;
    total.add(w * t.value);
    if (r.grad.size() == 0)
      r.grad = w * t.grad;
    else
      r.grad += w * t.grad;
  }
  r.breakdown.total = total.value();
  return r;
}

inline EnergyResult supervised_energy(const LanguageModel& model, const Matrix& prefix,
                                      std::span<const PreparedExample> batch, const BoundTask& task,
                                      const EnergyConfig& cfg) {
  if (cfg.mode != EnergyMode::supervised) throw ConfigError("supervised_energy called with unsupervised config");
  cfg.validate();
  return combine(cfg, {{"task", task_nll(model, prefix, batch, task)}, {"fluency", fluency_nll(model, prefix)}});
}

inline EnergyResult unsupervised_energy(const LanguageModel& model, const Matrix& prefix,
                                        std::span<const PreparedExample> batch, const BoundTask& task,
                                        const EnergyConfig& cfg) {
  if (cfg.mode != EnergyMode::unsupervised) throw ConfigError("unsupervised_energy called with supervised config");
  cfg.validate();
  return combine(cfg, {{"entropy", entropy_loss(model, prefix, batch, task)},
                       {"domain", domain_nll(model, prefix, batch)}});
}

inline EnergyResult evaluate_energy(const LanguageModel& model, const Matrix& prefix,
                                    std::span<const PreparedExample> batch, const BoundTask& task,
                                    const EnergyConfig& cfg) {
  return cfg.mode == EnergyMode::supervised ? supervised_energy(model, prefix, batch, task, cfg)
                                            : unsupervised_energy(model, prefix, batch, task, cfg);
}

}  // namespace dprompt
