// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#pragma once

// Projected Langevin dynamics over prompt embeddings:
//
//   e ← Proj_E[e − η·g + sqrt(2ηβ_i)·z],  z ~ N(0, I)
//
// with β_i on a geometric schedule. With β = 0 and the plain optimizer this is
// projected gradient descent, the noiseless baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dprompt/core.hpp"
#include "dprompt/energy.hpp"
#include "dprompt/lm_adapter.hpp"
#include "dprompt/projection.hpp"
#include "dprompt/task.hpp"

namespace dprompt {

struct NoiseSchedule {
  double beta_start = 1.0;
  double beta_end = 1e-4;
  std::size_t steps = 5000;

  /// β_start = β_end = 0 is accepted as the explicit no-noise ablation.
  bool noiseless() const { return beta_start == 0.0 && beta_end == 0.0; }

  void validate() const {
    if (steps < 1) throw ConfigError("noise schedule needs at least one step");
    if (noiseless()) return;
    if (!(beta_end > 0.0) || !(beta_start >= beta_end))
      throw ConfigError("noise schedule needs beta_start >= beta_end > 0 (or both 0)");
  }

  double beta_at(std::size_t i) const {
    if (i >= steps)
      throw std::out_of_range("beta_at: step " + std::to_string(i) + " outside [0, " + std::to_string(steps) + ")");
    if (noiseless()) return 0.0;
    if (i == 0) return beta_start;
    if (i == steps - 1) return beta_end;
    const double frac = static_cast<double>(i) / static_cast<double>(steps - 1);
    return beta_start * std::pow(beta_end / beta_start, frac);
  }
};

inline double beta_at(const NoiseSchedule& schedule, std::size_t i) { return schedule.beta_at(i); }

class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual double draw() = 0;
};

class GaussianNoise final : public NoiseSource {
 public:
  explicit GaussianNoise(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), 0x6e6f6973u};
    rng_.seed(seq);
  }
  double draw() override { return normal_(rng_); }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Wraps another source and keeps every draw.
class RecordingNoise final : public NoiseSource {
 public:
  explicit RecordingNoise(NoiseSource& inner) : inner_(inner) {}
  double draw() override { return draws_.emplace_back(inner_.draw()); }
  const std::vector<double>& draws() const { return draws_; }

 private:
  NoiseSource& inner_;
  std::vector<double> draws_;
};

enum class Optimizer { plain, adaptive };

/// Adaptive-moment preconditioner with decoupled weight decay. Returns the
/// direction that gets scaled by η; the Langevin noise is added separately.
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  Matrix direction(const Matrix& grad, const Matrix& params) {
    if (m_.size() == 0) {
      m_ = Matrix::Zero(grad.rows(), grad.cols());
      v_ = Matrix::Zero(grad.rows(), grad.cols());
    }
    ++t_;
    m_ = beta1 * m_ + (1.0 - beta1) * grad;
    v_ = beta2 * v_ + (1.0 - beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    Matrix step = (m_ / c1).array() / ((v_ / c2).array().sqrt() + eps);
    return step + weight_decay * params;
  }

 private:
  Matrix m_, v_;
  long t_ = 0;
};

struct SamplerConfig {
  double eta = 1.0;
  NoiseSchedule schedule;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::adaptive;
  std::size_t prompt_length = 10;
  EnergyConfig energy;
  AllowedVocab allowed_vocab = AllowedVocab::no_special;
  std::optional<std::string> init_text;

  std::size_t steps() const { return schedule.steps; }

  void validate() const {
    if (!(eta > 0.0)) throw ConfigError("eta must be > 0");
    schedule.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (prompt_length < 1) throw ConfigError("prompt length M must be >= 1");
    energy.validate();
  }
};

struct StepRecord {
  std::size_t i = 0;
  EnergyBreakdown energy;  // at the iterate the step's gradient was taken
  TokenIds token_ids;      // iterate after the step
};

struct ChainRecord {
  SamplerConfig config;
  std::string task_id;
  std::string model;
  TokenIds initial_token_ids;
  std::vector<StepRecord> steps;
  TokenIds final_token_ids;
  std::string final_prompt_text;
  std::map<std::string, double> metrics;
  std::optional<std::string> fault;
};

/// Endless batches: epoch-wise passes over the data, reshuffled each epoch
/// from a seed-derived generator.
class DataStream {
 public:
  DataStream(std::span<const PreparedExample> data, std::uint64_t seed) : data_(data) {
    if (data_.empty()) throw UsageError("data stream over an empty dataset");
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x64617461u};
    rng_.seed(seq);
    order_.resize(data_.size());
    cursor_ = order_.size();
  }

  std::vector<PreparedExample> next(std::size_t batch_size) {
    std::vector<PreparedExample> batch;
    batch.reserve(batch_size);
    while (batch.size() < batch_size) {
      if (cursor_ == order_.size()) reshuffle();
      batch.push_back(data_[order_[cursor_++]]);
    }
    return batch;
  }

 private:
  void reshuffle() {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

  std::span<const PreparedExample> data_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// One update. Noise is drawn row-major over the M×d prompt only when β > 0.
inline SoftPrompt langevin_step(const SoftPrompt& prompt, const Matrix& direction, double eta, double beta,
                                NoiseSource& noise, const EmbeddingTable& table,
                                std::span<const TokenId> allowed_ids, std::int64_t step = 0) {
  if (direction.rows() != prompt.entries.rows() || direction.cols() != prompt.entries.cols())
    throw ConfigError("gradient shape does not match the prompt");
  if (!direction.allFinite()) throw NumericalFault("non-finite gradient", step);
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  Matrix next = prompt.entries - eta * direction;
  if (beta > 0.0) {
    const double scale = std::sqrt(2.0 * eta * beta);
    for (Eigen::Index r = 0; r < next.rows(); ++r)
      for (Eigen::Index c = 0; c < next.cols(); ++c) next(r, c) += scale * noise.draw();
  }
  return project_subset(SoftPrompt{std::move(next), std::nullopt}, table, allowed_ids);
}

inline SoftPrompt langevin_step(const SoftPrompt& prompt, const Matrix& direction, double eta, double beta,
                                NoiseSource& noise, const EmbeddingTable& table) {
  const auto ids = all_token_ids(table);
  return langevin_step(prompt, direction, eta, beta, noise, table, ids);
}

/// Initial token ids: the seed text's tokens (cycled or cut to M) or M copies
/// of the model's neutral token.
inline TokenIds initial_tokens(const LanguageModel& model, const SamplerConfig& cfg) {
  TokenIds base;
  if (cfg.init_text) base = model.tokenize(*cfg.init_text);
  if (base.empty()) base = {model.default_init_token()};
  TokenIds ids(cfg.prompt_length);
  for (std::size_t m = 0; m < ids.size(); ++m) ids[m] = base[m % base.size()];
  return ids;
}

inline ChainRecord run_chain(const BoundTask& task, const LanguageModel& model, const SamplerConfig& cfg,
                             std::span<const Example> data, std::string model_name = {}) {
  cfg.validate();
  if (cfg.energy.mode == EnergyMode::supervised && !all_labeled(data))
    throw UsageError("supervised chains need labeled data");
  const auto prepared = prepare(data, task, model);
  const auto allowed = allowed_token_ids(model, cfg.allowed_vocab);
  const auto& table = model.embedding_table();

  ChainRecord rec;
  rec.config = cfg;
  rec.task_id = task.spec.id;
  rec.model = std::move(model_name);

  SoftPrompt prompt = project_subset(SoftPrompt::from_tokens(table, initial_tokens(model, cfg)), table, allowed);
  rec.initial_token_ids = *prompt.token_ids;
  rec.steps.reserve(cfg.steps());

  DataStream stream(prepared, cfg.seed);
  GaussianNoise noise(cfg.seed, 1);
  AdamW adam;

  for (std::size_t i = 0; i < cfg.steps(); ++i) {
    const auto batch = stream.next(cfg.batch_size);
    EnergyResult energy;
    try {
      energy = evaluate_energy(model, prompt.entries, batch, task, cfg.energy);
      if (!std::isfinite(energy.breakdown.total)) throw NumericalFault("non-finite energy", static_cast<std::int64_t>(i));
      const Matrix direction =
          cfg.optimizer == Optimizer::plain ? energy.grad : adam.direction(energy.grad, prompt.entries);
      prompt = langevin_step(prompt, direction, cfg.eta, cfg.schedule.beta_at(i), noise, table, allowed,
                             static_cast<std::int64_t>(i));
    } catch (const NumericalFault& e) {
      rec.fault = e.what();
      break;
    } catch (const ModelFault& e) {
      rec.fault = std::string(e.what()) + " (step " + std::to_string(i) + ")";
      break;
    }
    rec.steps.push_back({i, std::move(energy.breakdown), *prompt.token_ids});
  }

  rec.final_token_ids = *prompt.token_ids;
  rec.final_prompt_text = model.detokenize(rec.final_token_ids);
  return rec;
}

/// Highest metric wins; ties go to the lowest seed, then the earliest chain.
inline const ChainRecord& select_best(std::span<const ChainRecord> chains, const std::string& metric) {
  if (chains.empty()) throw UsageError("select_best: no chains");
  std::size_t best = chains.size();
  for (std::size_t c = 0; c < chains.size(); ++c) {
    auto it = chains[c].metrics.find(metric);
    if (it == chains[c].metrics.end())
      throw UsageError("select_best: chain " + std::to_string(c) + " lacks metric '" + metric + "'");
    if (best == chains.size()) {
      best = c;
      continue;
    }
    const double v = it->second, bv = chains[best].metrics.at(metric);
    if (v > bv || (v == bv && chains[c].config.seed < chains[best].config.seed)) best = c;
  }
  return chains[best];
}

}  // namespace dprompt
