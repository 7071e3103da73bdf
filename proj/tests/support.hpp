// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#pragma once

// Shared oracles for the test suite: a scalar-loop transformer forward pass,
// central finite differences, stub language models and a scratch directory.

#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dprompt/lm_adapter.hpp"
#include "dprompt/reference_model.hpp"

namespace dprompt::testing {

// ---------------------------------------------------------------------------
// naive forward pass, written from scratch with plain loops

using Rows = std::vector<std::vector<double>>;

inline Rows to_rows(const Matrix& m) {
  Rows r(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[i][j] = m(i, j);
  return r;
}

inline std::vector<double> naive_layer_norm(const std::vector<double>& x, const RowVector& g, const RowVector& b) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * g(i) + b(i);
  return y;
}

inline std::vector<double> naive_affine(const std::vector<double>& x, const Matrix& w, const RowVector& b) {
  std::vector<double> y(static_cast<std::size_t>(w.cols()));
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    double acc = b(j);
    for (Eigen::Index i = 0; i < w.rows(); ++i) acc += x[i] * w(i, j);
    y[j] = acc;
  }
  return y;
}

/// Final hidden states of the reference transformer for `inputs` (L×d).
inline Rows naive_forward(const ReferenceWeights& w, const Matrix& inputs) {
  const std::size_t len = static_cast<std::size_t>(inputs.rows());
  const std::size_t d = static_cast<std::size_t>(inputs.cols());
  const std::size_t hd = d / w.heads;
  Rows x = to_rows(inputs);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t j = 0; j < d; ++j) x[t][j] += w.position_embedding(t, j);
  for (const auto& p : w.layers) {
    Rows q(len), k(len), v(len);
    for (std::size_t t = 0; t < len; ++t) {
      const auto a = naive_layer_norm(x[t], p.ln1_gain, p.ln1_bias);
      q[t] = naive_affine(a, p.wq, p.bq);
      k[t] = naive_affine(a, p.wk, p.bk);
      v[t] = naive_affine(a, p.wv, p.bv);
    }
    Rows attn(len, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < w.heads; ++h) {
      for (std::size_t t = 0; t < len; ++t) {
        std::vector<double> s(t + 1);
        double hi = -1e300;
        for (std::size_t u = 0; u <= t; ++u) {
          double dot = 0.0;
          for (std::size_t j = h * hd; j < (h + 1) * hd; ++j) dot += q[t][j] * k[u][j];
          s[u] = dot / std::sqrt(static_cast<double>(hd));
          hi = std::max(hi, s[u]);
        }
        double z = 0.0;
        for (auto& e : s) z += (e = std::exp(e - hi));
        for (std::size_t u = 0; u <= t; ++u)
          for (std::size_t j = h * hd; j < (h + 1) * hd; ++j) attn[t][j] += s[u] / z * v[u][j];
      }
    }
    for (std::size_t t = 0; t < len; ++t) {
      const auto o = naive_affine(attn[t], p.wo, p.bo);
      for (std::size_t j = 0; j < d; ++j) x[t][j] += o[j];
      const auto m = naive_layer_norm(x[t], p.ln2_gain, p.ln2_bias);
      auto u = naive_affine(m, p.w1, p.b1);
      for (auto& e : u) e = 0.5 * e * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (e + 0.044715 * e * e * e)));
      const auto f = naive_affine(u, p.w2, p.b2);
      for (std::size_t j = 0; j < d; ++j) x[t][j] += f[j];
    }
  }
  for (auto& row : x) row = naive_layer_norm(row, w.lnf_gain, w.lnf_bias);
  return x;
}

// ---------------------------------------------------------------------------
// finite differences

inline Matrix central_difference(const std::function<double(const Matrix&)>& f, const Matrix& at, double h = 1e-5) {
  Matrix g(at.rows(), at.cols());
  Matrix x = at;
  for (Eigen::Index i = 0; i < at.rows(); ++i)
    for (Eigen::Index j = 0; j < at.cols(); ++j) {
      const double keep = x(i, j);
      x(i, j) = keep + h;
      const double up = f(x);
      x(i, j) = keep - h;
      const double down = f(x);
      x(i, j) = keep;
      g(i, j) = (up - down) / (2.0 * h);
    }
  return g;
}

/// max |a − b| / max(1, max |b|), a scale-aware relative error.
inline double relative_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double std = 1.0) {
  std::normal_distribution<double> n(0.0, std);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

// ---------------------------------------------------------------------------
// stub models

/// Word-per-token model whose hidden state at every position is a fixed
/// vector. Zero hidden gives uniform next-token and label distributions.
class ConstantHiddenModel final : public LanguageModel {
 public:
  ConstantHiddenModel(std::vector<std::string> words, Matrix table, RowVector hidden)
      : words_(std::move(words)), table_(table, words_), hidden_(std::move(hidden)) {}

  const EmbeddingTable& embedding_table() const override { return table_; }
  const Matrix& output_embeddings() const override { return table_.entries(); }
  std::size_t max_positions() const override { return 512; }

  std::unique_ptr<ForwardPass> forward(const Matrix& inputs) const override {
    return std::make_unique<Pass>(inputs.rows(), hidden_);
  }

  TokenIds tokenize(std::string_view text) const override {
    TokenIds out;
    std::string w;
    auto flush = [&] {
      if (w.empty()) return;
      for (std::size_t i = 0; i < words_.size(); ++i)
        if (words_[i] == w) {
          out.push_back(static_cast<TokenId>(i));
          w.clear();
          return;
        }
      out.push_back(0);
      w.clear();
    };
    for (char c : text) {
      if (c == ' ') flush();
      else w.push_back(c);
    }
    flush();
    return out;
  }

  std::string detokenize(std::span<const TokenId> ids) const override {
    std::string s;
    for (auto id : ids) {
      if (!s.empty()) s += ' ';
      s += words_[static_cast<std::size_t>(id)];
    }
    return s;
  }

  TokenIds special_tokens() const override { return {0}; }
  TokenId default_init_token() const override { return 1; }

 private:
  class Pass final : public ForwardPass {
   public:
    Pass(Eigen::Index rows, const RowVector& h) : hidden_(Matrix(rows, h.size())) {
      for (Eigen::Index r = 0; r < rows; ++r) hidden_.row(r) = h;
    }
    const Matrix& hidden() const override { return hidden_; }
    Matrix backward(const Matrix& g) const override { return Matrix::Zero(g.rows(), g.cols()); }

   private:
    Matrix hidden_;
  };

  std::vector<std::string> words_;
  EmbeddingTable table_;
  RowVector hidden_;
};

/// "<unk> w1 ... w(n-1)" with a one-hot embedding per token.
inline std::vector<std::string> stub_words(std::size_t n) {
  std::vector<std::string> w{"<unk>"};
  for (std::size_t i = 1; i < n; ++i) w.push_back("w" + std::to_string(i));
  return w;
}

// ---------------------------------------------------------------------------
// filesystem

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("dprompt-" + tag + "-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace dprompt::testing
