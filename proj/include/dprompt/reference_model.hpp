// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#pragma once

// A tiny pre-LayerNorm causal transformer with tied input/output embeddings,
// seeded weights, a word-level toy tokenizer and hand-written backprop to the
// input embeddings. Small enough that every quantity built on top of it can be
// checked against brute force and finite differences.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dprompt/core.hpp"
#include "dprompt/lm_adapter.hpp"

namespace dprompt {

/// Toy vocabulary, roughly ordered by how common the word is. The first three
/// entries are special tokens.
inline std::vector<std::string> default_reference_vocabulary() {
  return {"<pad>",    "<eos>",    "<unk>",     "the",      ".",         ",",        "a",
          "an",       "is",       "it",        "was",      "this",      "and",      "of",
          "to",       "in",       "about",     "very",     "so",        "not",      "but",
          "i",        "movie",    "film",      "review",   "product",   "news",     "amazon",
          "book",     "story",    "plot",      "acting",   "director",  "cinima",   "cinema",
          "furniture", "topic",   "category",  "positive", "negative",  "politics", "sports",
          "business", "technology", "good",    "great",    "fine",      "nice",     "love",
          "best",     "fun",      "happy",     "bad",      "awful",     "poor",     "sad",
          "hate",     "worst",    "dull",      "boring",   "really",    "just",     "team",
          "market"};
}

/// Word groups whose embeddings share a common direction, standing in for the
/// semantic structure of a pretrained table.
inline std::vector<std::vector<std::string>> default_reference_clusters() {
  return {{"positive", "good", "great", "fine", "nice", "love", "best", "fun", "happy"},
          {"negative", "bad", "awful", "poor", "sad", "hate", "worst", "dull", "boring"},
          {"movie", "film", "review", "cinima", "cinema", "director", "acting", "plot", "story"},
          {"product", "amazon", "book", "furniture", "business", "market"},
          {"news", "politics", "sports", "technology", "team", "topic", "category"}};
}

struct ReferenceConfig {
  std::size_t dim = 16;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t max_positions = 128;
  double embedding_scale = 0.5;
  std::vector<std::string> vocabulary = default_reference_vocabulary();
  std::vector<std::vector<std::string>> clusters = default_reference_clusters();
  double cluster_strength = 1.0;  // shared-direction weight relative to the per-token part
  double copy_strength = 1.0;     // identity component of the attention value/output maps
};

struct ReferenceLayer {
  RowVector ln1_gain, ln1_bias;
  Matrix wq, wk, wv, wo;  // d×d, applied as x·W
  RowVector bq, bk, bv, bo;
  RowVector ln2_gain, ln2_bias;
  Matrix w1;  // d×4d
  RowVector b1;
  Matrix w2;  // 4d×d
  RowVector b2;
};

struct ReferenceWeights {
  Matrix token_embedding;     // V×d, also the output projection
  Matrix position_embedding;  // P×d
  std::vector<ReferenceLayer> layers;
  RowVector lnf_gain, lnf_bias;
  std::size_t heads = 1;
};

namespace detail {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

struct LayerNormCache {
  Matrix normalized;  // x̂
  Vector inv_std;
};

inline Matrix layer_norm(const Matrix& x, const RowVector& gain, const RowVector& bias,
                         LayerNormCache& cache) {
  const auto rows = x.rows();
  const auto d = static_cast<double>(x.cols());
  cache.normalized.resize(rows, x.cols());
  cache.inv_std.resize(rows);
  Matrix y(rows, x.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = x.row(r).sum() / d;
    RowVector centered = x.row(r).array() - mean;
    const double var = centered.squaredNorm() / d;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std(r) = inv;
    cache.normalized.row(r) = centered * inv;
    y.row(r) = cache.normalized.row(r).cwiseProduct(gain) + bias;
  }
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const RowVector& gain,
                                  const LayerNormCache& cache) {
  const auto d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    RowVector dxhat = dy.row(r).cwiseProduct(gain);
    const double mean_dxhat = dxhat.sum() / d;
    const double mean_dot = dxhat.dot(cache.normalized.row(r)) / d;
    dx.row(r) = cache.inv_std(r) *
                (dxhat.array() - mean_dxhat - cache.normalized.row(r).array() * mean_dot).matrix();
  }
  return dx;
}

inline double gelu(double u) {
  return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u)));
}

inline double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

struct LayerCache {
  LayerNormCache ln1, ln2;
  Matrix attn_in;                // LN1 output
  Matrix q, k, v;                // L×d
  std::vector<Matrix> probs;     // per head, L×L, zero above the diagonal
  Matrix attn_concat;            // L×d before the output projection
  Matrix mlp_in;                 // LN2 output
  Matrix pre_act;                // L×4d
  Matrix act;                    // L×4d
};

class ReferenceForwardPass final : public ForwardPass {
 public:
  ReferenceForwardPass(const ReferenceWeights& w, const Matrix& inputs) : w_(w) {
    const auto len = inputs.rows();
    const auto d = inputs.cols();
    const auto heads = static_cast<Eigen::Index>(w.heads);
    const auto hd = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Matrix x = inputs + w.position_embedding.topRows(len);
    caches_.resize(w.layers.size());
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
      const auto& p = w.layers[l];
      auto& c = caches_[l];
      c.attn_in = layer_norm(x, p.ln1_gain, p.ln1_bias, c.ln1);
      c.q = (c.attn_in * p.wq).rowwise() + p.bq;
      c.k = (c.attn_in * p.wk).rowwise() + p.bk;
      c.v = (c.attn_in * p.wv).rowwise() + p.bv;
      c.attn_concat.setZero(len, d);
      c.probs.assign(static_cast<std::size_t>(heads), Matrix::Zero(len, len));
      for (Eigen::Index h = 0; h < heads; ++h) {
        auto qh = c.q.middleCols(h * hd, hd);
        auto kh = c.k.middleCols(h * hd, hd);
        auto vh = c.v.middleCols(h * hd, hd);
        Matrix& prob = c.probs[static_cast<std::size_t>(h)];
        for (Eigen::Index i = 0; i < len; ++i) {
          RowVector s = (kh.topRows(i + 1) * qh.row(i).transpose()).transpose() * scale;
          const double hi = s.maxCoeff();
          RowVector e = (s.array() - hi).exp();
          prob.row(i).head(i + 1) = e / e.sum();
        }
        c.attn_concat.middleCols(h * hd, hd) = prob * vh;
      }
      x += (c.attn_concat * p.wo).rowwise() + p.bo;
      c.mlp_in = layer_norm(x, p.ln2_gain, p.ln2_bias, c.ln2);
      c.pre_act = (c.mlp_in * p.w1).rowwise() + p.b1;
      c.act = c.pre_act.unaryExpr([](double u) { return gelu(u); });
      x += (c.act * p.w2).rowwise() + p.b2;
    }
    hidden_ = layer_norm(x, w.lnf_gain, w.lnf_bias, final_ln_);
  }

  const Matrix& hidden() const override { return hidden_; }

  Matrix backward(const Matrix& grad_hidden) const override {
    if (grad_hidden.rows() != hidden_.rows() || grad_hidden.cols() != hidden_.cols())
      throw ConfigError("gradient shape does not match hidden states");
    const auto len = hidden_.rows();
    const auto d = hidden_.cols();
    const auto heads = static_cast<Eigen::Index>(w_.heads);
    const auto hd = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Matrix dx = layer_norm_backward(grad_hidden, w_.lnf_gain, final_ln_);
    for (std::size_t l = w_.layers.size(); l-- > 0;) {
      const auto& p = w_.layers[l];
      const auto& c = caches_[l];

      // MLP branch
      Matrix dact = dx * p.w2.transpose();
      Matrix dpre = dact.cwiseProduct(c.pre_act.unaryExpr([](double u) { return gelu_grad(u); }));
      Matrix dmlp_in = dpre * p.w1.transpose();
      dx += layer_norm_backward(dmlp_in, p.ln2_gain, c.ln2);

      // attention branch
      Matrix dconcat = dx * p.wo.transpose();
      Matrix dq = Matrix::Zero(len, d), dk = Matrix::Zero(len, d), dv = Matrix::Zero(len, d);
      for (Eigen::Index h = 0; h < heads; ++h) {
        const Matrix& prob = c.probs[static_cast<std::size_t>(h)];
        auto qh = c.q.middleCols(h * hd, hd);
        auto kh = c.k.middleCols(h * hd, hd);
        auto vh = c.v.middleCols(h * hd, hd);
        Matrix dout = dconcat.middleCols(h * hd, hd);
        Matrix dprob = dout * vh.transpose();
        dv.middleCols(h * hd, hd) = prob.transpose() * dout;
        Matrix dscore = Matrix::Zero(len, len);
        for (Eigen::Index i = 0; i < len; ++i) {
          const double inner = prob.row(i).dot(dprob.row(i));
          dscore.row(i) = prob.row(i).array() * (dprob.row(i).array() - inner);
        }
        dscore *= scale;
        dq.middleCols(h * hd, hd) = dscore * kh;
        dk.middleCols(h * hd, hd) = dscore.transpose() * qh;
      }
      Matrix dattn_in = dq * p.wq.transpose() + dk * p.wk.transpose() + dv * p.wv.transpose();
      dx += layer_norm_backward(dattn_in, p.ln1_gain, c.ln1);
    }
    return dx;  // position embeddings add with unit Jacobian
  }

 private:
  const ReferenceWeights& w_;
  std::vector<LayerCache> caches_;
  LayerNormCache final_ln_;
  Matrix hidden_;
};

}  // namespace detail

class ReferenceModel final : public LanguageModel {
 public:
  ReferenceModel(std::uint64_t seed, ReferenceConfig config = {}) : seed_(seed), config_(std::move(config)) {
    const auto& vocab = config_.vocabulary;
    if (vocab.size() < 5) throw ConfigError("reference vocabulary too small");
    if (config_.heads == 0 || config_.dim % config_.heads != 0)
      throw ConfigError("reference dim must be divisible by heads");
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      if (!index_.emplace(vocab[i], static_cast<TokenId>(i)).second)
        throw ConfigError("duplicate vocabulary entry '" + vocab[i] + "'");
    }
    for (const char* special : {"<pad>", "<eos>", "<unk>"})
      if (!index_.contains(special)) throw ConfigError(std::string("vocabulary lacks ") + special);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto draw = [&](Eigen::Index r, Eigen::Index c, double std) {
      Matrix m(r, c);
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = std * normal(rng);
      return m;
    };
    auto draw_row = [&](Eigen::Index c, double mean, double std) -> RowVector {
      return draw(1, c, std).row(0).array() + mean;
    };

    const auto v = static_cast<Eigen::Index>(vocab.size());
    const auto d = static_cast<Eigen::Index>(config_.dim);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    weights_.heads = config_.heads;
    {
      const double norm = config_.embedding_scale / std::sqrt(1.0 + config_.cluster_strength * config_.cluster_strength);
      weights_.token_embedding = draw(v, d, norm);
      for (const auto& group : config_.clusters) {
        const RowVector centre = draw(1, d, norm * config_.cluster_strength).row(0);
        for (const auto& word : group) {
          auto it = index_.find(word);
          if (it != index_.end()) weights_.token_embedding.row(it->second) += centre;
        }
      }
    }
    weights_.position_embedding = draw(static_cast<Eigen::Index>(config_.max_positions), d, 0.2);
    for (std::size_t l = 0; l < config_.layers; ++l) {
      ReferenceLayer layer;
      layer.ln1_gain = draw_row(d, 1.0, 0.1);
      layer.ln1_bias = draw_row(d, 0.0, 0.05);
      layer.wq = draw(d, d, inv_sqrt_d);
      layer.wk = draw(d, d, inv_sqrt_d);
      layer.wv = draw(d, d, inv_sqrt_d) + config_.copy_strength * Matrix::Identity(d, d);
      layer.wo = draw(d, d, inv_sqrt_d) + config_.copy_strength * Matrix::Identity(d, d);
      layer.bq = draw_row(d, 0.0, 0.02);
      layer.bk = draw_row(d, 0.0, 0.02);
      layer.bv = draw_row(d, 0.0, 0.02);
      layer.bo = draw_row(d, 0.0, 0.02);
      layer.ln2_gain = draw_row(d, 1.0, 0.1);
      layer.ln2_bias = draw_row(d, 0.0, 0.05);
      layer.w1 = draw(d, 4 * d, inv_sqrt_d);
      layer.b1 = draw_row(4 * d, 0.0, 0.02);
      layer.w2 = draw(4 * d, d, 0.5 * inv_sqrt_d);
      layer.b2 = draw_row(d, 0.0, 0.02);
      weights_.layers.push_back(std::move(layer));
    }
    weights_.lnf_gain = draw_row(d, 1.0, 0.1);
    weights_.lnf_bias = draw_row(d, 0.0, 0.05);

    table_ = EmbeddingTable(weights_.token_embedding, vocab);
  }

  std::uint64_t seed() const { return seed_; }
  const ReferenceConfig& config() const { return config_; }
  const ReferenceWeights& weights() const { return weights_; }

  const EmbeddingTable& embedding_table() const override { return table_; }
  const Matrix& output_embeddings() const override { return weights_.token_embedding; }
  std::size_t max_positions() const override { return config_.max_positions; }

  std::unique_ptr<ForwardPass> forward(const Matrix& inputs) const override {
    if (inputs.cols() != static_cast<Eigen::Index>(config_.dim))
      throw ConfigError("input dim mismatch");
    if (inputs.rows() < 1 || static_cast<std::size_t>(inputs.rows()) > config_.max_positions)
      throw ConfigError("sequence length " + std::to_string(inputs.rows()) + " outside [1, " +
                        std::to_string(config_.max_positions) + "]");
    return std::make_unique<detail::ReferenceForwardPass>(weights_, inputs);
  }

  /// Lowercases, splits on whitespace, and emits each punctuation character as
  /// its own token. Out-of-vocabulary words map to <unk>.
  TokenIds tokenize(std::string_view text) const override {
    TokenIds out;
    const TokenId unk = index_.at("<unk>");
    std::string word;
    auto flush = [&] {
      if (word.empty()) return;
      auto it = index_.find(word);
      out.push_back(it == index_.end() ? unk : it->second);
      word.clear();
    };
    for (char raw : text) {
      const auto ch = static_cast<unsigned char>(raw);
      if (std::isspace(ch)) {
        flush();
      } else if (std::isalnum(ch) || ch == '\'' || ch >= 0x80) {
        word.push_back(static_cast<char>(std::tolower(ch)));
      } else {
        flush();
        word.push_back(raw);
        flush();
      }
    }
    flush();
    return out;
  }

  std::string detokenize(std::span<const TokenId> ids) const override {
    std::string out;
    for (TokenId id : ids) {
      if (id == index_.at("<pad>")) continue;
      if (!out.empty()) out.push_back(' ');
      out += table_.token_text(id);
    }
    return out;
  }

  TokenIds special_tokens() const override {
    return {index_.at("<pad>"), index_.at("<eos>"), index_.at("<unk>")};
  }
  std::optional<TokenId> eos_token() const override { return index_.at("<eos>"); }

  TokenId default_init_token() const override {
    const auto specials = special_tokens();
    for (TokenId id = 0; id < static_cast<TokenId>(config_.vocabulary.size()); ++id)
      if (std::find(specials.begin(), specials.end(), id) == specials.end()) return id;
    throw ConfigError("vocabulary has no ordinary tokens");
  }

  std::optional<TokenId> find(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::uint64_t seed_;
  ReferenceConfig config_;
  ReferenceWeights weights_;
  EmbeddingTable table_;
  std::unordered_map<std::string, TokenId> index_;
};

inline ReferenceModel make_reference_model(std::uint64_t seed) { return ReferenceModel(seed); }

}  // namespace dprompt
