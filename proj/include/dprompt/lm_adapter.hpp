// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#pragma once

// Uniform embedding-level interface to an autoregressive language model.
//
// Adapters take a matrix of input embeddings (one row per position) so that
// tunable prompt rows can bypass the token embedding layer. Everything above
// this layer (energies, sampler, metrics) only talks to LanguageModel.

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dprompt/core.hpp"

namespace dprompt {

/// The model's V×d token embedding matrix plus the surface form of each row.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(Matrix entries, std::vector<std::string> token_text)
      : entries_(std::move(entries)), token_text_(std::move(token_text)) {
    if (entries_.rows() < 2 || entries_.cols() < 1)
      throw ConfigError("embedding table needs V >= 2 and d >= 1");
    if (static_cast<Eigen::Index>(token_text_.size()) != entries_.rows())
      throw ConfigError("embedding table: token_text has " + std::to_string(token_text_.size()) +
                        " entries for " + std::to_string(entries_.rows()) + " rows");
    if (!entries_.allFinite()) throw ConfigError("embedding table has non-finite entries");
  }

  std::size_t rows() const { return static_cast<std::size_t>(entries_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(entries_.cols()); }
  const Matrix& entries() const { return entries_; }
  auto row(TokenId id) const { return entries_.row(id); }
  const std::string& token_text(TokenId id) const { return token_text_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& token_texts() const { return token_text_; }

 private:
  Matrix entries_;
  std::vector<std::string> token_text_;
};

/// M tunable embedding rows. When token_ids is set the prompt is projected and
/// each row is an exact copy of the corresponding table row.
struct SoftPrompt {
  Matrix entries;
  std::optional<TokenIds> token_ids;

  std::size_t length() const { return static_cast<std::size_t>(entries.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(entries.cols()); }
  bool projected() const { return token_ids.has_value(); }

  static SoftPrompt from_entries(Matrix entries) {
    if (entries.rows() < 1) throw ConfigError("soft prompt needs M >= 1");
    return SoftPrompt{std::move(entries), std::nullopt};
  }

  static SoftPrompt from_tokens(const EmbeddingTable& table, const TokenIds& ids) {
    if (ids.empty()) throw ConfigError("soft prompt needs M >= 1");
    Matrix rows(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(table.dim()));
    for (std::size_t m = 0; m < ids.size(); ++m) {
      if (ids[m] < 0 || static_cast<std::size_t>(ids[m]) >= table.rows())
        throw ConfigError("token id " + std::to_string(ids[m]) + " out of vocabulary");
      rows.row(static_cast<Eigen::Index>(m)) = table.row(ids[m]);
    }
    return SoftPrompt{std::move(rows), ids};
  }
};

struct LabelDistribution {
  std::vector<std::string> labels;
  std::vector<double> probs;

  std::size_t argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
      if (probs[i] > probs[best]) best = i;
    return best;
  }
};

/// Cached activations of one forward pass. backward() maps a gradient on the
/// final hidden states to a gradient on the input embeddings.
class ForwardPass {
 public:
  virtual ~ForwardPass() = default;
  virtual const Matrix& hidden() const = 0;
  virtual Matrix backward(const Matrix& grad_hidden) const = 0;
};

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual const EmbeddingTable& embedding_table() const = 0;
  /// Output projection (V×d); logits are hidden · output_embeddingsᵀ.
  virtual const Matrix& output_embeddings() const = 0;
  virtual std::size_t max_positions() const = 0;

  /// Runs the network on L×d input embeddings. Must not mutate the model.
  virtual std::unique_ptr<ForwardPass> forward(const Matrix& inputs) const = 0;

  virtual TokenIds tokenize(std::string_view text) const = 0;
  virtual std::string detokenize(std::span<const TokenId> ids) const = 0;
  virtual TokenIds special_tokens() const = 0;
  virtual std::optional<TokenId> eos_token() const { return std::nullopt; }
  /// Neutral token used to initialize prompts when no seed text is given.
  virtual TokenId default_init_token() const = 0;

  std::size_t dim() const { return embedding_table().dim(); }
  std::size_t vocab_size() const { return embedding_table().rows(); }
};

inline void check_tokens(const LanguageModel& model, std::span<const TokenId> ids) {
  const auto v = model.vocab_size();
  for (TokenId id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw ConfigError("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(v));
}

/// Embedding rows for a token sequence.
inline Matrix embed(const LanguageModel& model, std::span<const TokenId> ids) {
  check_tokens(model, ids);
  const auto& table = model.embedding_table();
  Matrix out(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(table.dim()));
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
  return out;
}

/// [prefix; embed(body)]. The prefix may have zero rows (no prompt).
inline Matrix join_inputs(const LanguageModel& model, const Matrix& prefix,
                          std::span<const TokenId> body) {
  const auto d = static_cast<Eigen::Index>(model.dim());
  if (prefix.rows() > 0 && prefix.cols() != d)
    throw ConfigError("prefix dim " + std::to_string(prefix.cols()) + " != model dim " +
                      std::to_string(d));
  Matrix inputs(prefix.rows() + static_cast<Eigen::Index>(body.size()), d);
  if (prefix.rows() > 0) inputs.topRows(prefix.rows()) = prefix;
  if (!body.empty()) inputs.bottomRows(static_cast<Eigen::Index>(body.size())) = embed(model, body);
  return inputs;
}

inline Matrix empty_prefix(const LanguageModel& model) {
  return Matrix(0, static_cast<Eigen::Index>(model.dim()));
}

inline std::unique_ptr<ForwardPass> checked_forward(const LanguageModel& model, const Matrix& inputs) {
  if (inputs.rows() < 1) throw ConfigError("forward pass needs at least one position");
  if (inputs.cols() != static_cast<Eigen::Index>(model.dim()))
    throw ConfigError("input dim " + std::to_string(inputs.cols()) + " != model dim " +
                      std::to_string(model.dim()));
  if (static_cast<std::size_t>(inputs.rows()) > model.max_positions())
    throw ConfigError("sequence of length " + std::to_string(inputs.rows()) +
                      " exceeds model context " + std::to_string(model.max_positions()));
  auto pass = model.forward(inputs);
  if (!pass->hidden().allFinite()) throw ModelFault("non-finite hidden states");
  return pass;
}

inline Matrix logits_from_hidden(const LanguageModel& model, const Matrix& hidden) {
  Matrix logits = hidden * model.output_embeddings().transpose();
  if (!logits.allFinite()) throw ModelFault("non-finite logits");
  return logits;
}

/// Next-token logits at every position of [prefix; body].
inline Matrix forward_logits(const LanguageModel& model, const Matrix& prefix,
                             std::span<const TokenId> body) {
  auto pass = checked_forward(model, join_inputs(model, prefix, body));
  return logits_from_hidden(model, pass->hidden());
}

inline Matrix forward_logits(const LanguageModel& model, const SoftPrompt& prefix,
                             std::span<const TokenId> body) {
  return forward_logits(model, prefix.entries, body);
}

inline Matrix last_hidden_states(const LanguageModel& model, const Matrix& embeddings) {
  return checked_forward(model, embeddings)->hidden();
}

/// Numerically stable log Σ exp over a row.
template <typename Row>
double log_sum_exp(const Row& row) {
  const double hi = row.maxCoeff();
  return hi + std::log((row.array() - hi).exp().sum());
}

}  // namespace dprompt
