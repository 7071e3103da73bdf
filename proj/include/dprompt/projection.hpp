// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#pragma once

// Nearest-neighbour projection of soft embedding rows onto the embedding table.
// Exact Euclidean scan; ties go to the lowest token id.

#include <algorithm>
#include <limits>
#include <span>
#include <vector>

#include "dprompt/core.hpp"
#include "dprompt/lm_adapter.hpp"

namespace dprompt {

template <typename RowA, typename RowB>
double squared_distance(const RowA& a, const RowB& b) {
  return (a - b).squaredNorm();
}

/// Index of the table row nearest to `row`, searched over `candidates`
/// (assumed ascending, so strict < keeps the lowest id on ties).
template <typename Row>
TokenId nearest_token(const Row& row, const EmbeddingTable& table, std::span<const TokenId> candidates) {
  TokenId best = candidates.front();
  double best_dist = std::numeric_limits<double>::infinity();
  for (TokenId id : candidates) {
    const double dist = squared_distance(row, table.row(id));
    if (dist < best_dist) {
      best_dist = dist;
      best = id;
    }
  }
  return best;
}

inline std::vector<TokenId> all_token_ids(const EmbeddingTable& table) {
  std::vector<TokenId> ids(table.rows());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<TokenId>(i);
  return ids;
}

inline SoftPrompt project_subset(const SoftPrompt& prompt, const EmbeddingTable& table,
                                 std::span<const TokenId> allowed_ids) {
  if (allowed_ids.empty()) throw ConfigError("projection: allowed token set is empty");
  if (prompt.dim() != table.dim())
    throw ConfigError("projection: prompt dim " + std::to_string(prompt.dim()) +
                      " != table dim " + std::to_string(table.dim()));
  std::vector<TokenId> sorted(allowed_ids.begin(), allowed_ids.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (sorted.front() < 0 || static_cast<std::size_t>(sorted.back()) >= table.rows())
    throw ConfigError("projection: allowed id outside vocabulary");

  TokenIds ids(prompt.length());
  for (std::size_t m = 0; m < ids.size(); ++m)
    ids[m] = nearest_token(prompt.entries.row(static_cast<Eigen::Index>(m)), table, sorted);
  return SoftPrompt::from_tokens(table, ids);
}

inline SoftPrompt project(const SoftPrompt& prompt, const EmbeddingTable& table) {
  const auto ids = all_token_ids(table);
  return project_subset(prompt, table, ids);
}

/// Which table rows a projection may land on.
enum class AllowedVocab { all, no_special };

inline std::vector<TokenId> allowed_token_ids(const LanguageModel& model, AllowedVocab mode) {
  auto ids = all_token_ids(model.embedding_table());
  if (mode == AllowedVocab::no_special) {
    const auto specials = model.special_tokens();
    std::erase_if(ids, [&](TokenId id) {
      return std::find(specials.begin(), specials.end(), id) != specials.end();
    });
  }
  if (ids.empty()) throw ConfigError("no tokens left after excluding special tokens");
  return ids;
}

}  // namespace dprompt
