// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#pragma once

// Diagnostics for why prompts work: label-word entropy under the domain
// string, entropy/accuracy rank correlation, domain-word frequency of prompts
// augmented with sampled continuations, and the PMI_DC baseline.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dprompt/core.hpp"
#include "dprompt/lm_adapter.hpp"
#include "dprompt/metrics.hpp"
#include "dprompt/prompting.hpp"
#include "dprompt/sampler.hpp"
#include "dprompt/stats.hpp"
#include "dprompt/task.hpp"

namespace dprompt {

/// Entropy of the label distribution when the input is the task's domain string.
inline double label_entropy(const LanguageModel& model, const Matrix& prefix, const BoundTask& task) {
  if (task.spec.domain_string.empty()) throw TaskSpecError("label_entropy: empty domain string");
  const auto dist = label_word_distribution(model, prefix, task.spec.domain_string, task);
  return entropy(dist.probs);
}

inline double label_entropy(const LanguageModel& model, std::string_view prompt_text, const BoundTask& task) {
  const auto ids = model.tokenize(prompt_text);
  return label_entropy(model, ids.empty() ? empty_prefix(model) : embed(model, ids), task);
}

// ---------------------------------------------------------------------------
// Domain words

/// Lowercased words: maximal runs of ASCII alphanumerics, '_' or non-ASCII
/// bytes (UTF-8 letters count as word characters).
inline std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char raw : text) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isalnum(ch) || ch == '_' || ch >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Case-insensitive whole-word matches of any domain word in the prompt text
/// followed by every continuation.
inline std::size_t domain_word_frequency(std::string_view prompt_text, std::span<const std::string> continuations,
                                         std::span<const std::string> domain_words) {
  if (domain_words.empty()) throw UsageError("domain_word_frequency: no domain words");
  std::set<std::string> vocab;
  for (const auto& w : domain_words) vocab.insert(to_lower(w));
  std::string text(prompt_text);
  for (const auto& c : continuations) {
    text.push_back(' ');
    text += c;
  }
  std::size_t count = 0;
  for (const auto& w : words_of(text)) count += vocab.count(w);
  return count;
}

// ---------------------------------------------------------------------------
// Continuations

/// Any autoregressive text sampler: (prompt, top_p, length, seed) -> text.
class ContinuationGenerator {
 public:
  virtual ~ContinuationGenerator() = default;
  virtual std::string sample(std::string_view prompt, double top_p, std::size_t length, std::uint64_t seed) = 0;
};

/// Indices of the smallest prefix of the probability-sorted vocabulary whose
/// mass reaches top_p (ties ordered by token id).
inline std::vector<TokenId> nucleus(std::span<const double> probs, double top_p) {
  std::vector<TokenId> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) { return probs[a] > probs[b]; });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += probs[order[keep]];
    ++keep;
    if (mass >= top_p) break;
  }
  order.resize(keep);
  return order;
}

/// Nucleus sampling from a LanguageModel. Padding and unknown tokens are
/// masked; the end-of-sequence token stops generation.
class LocalGenerator final : public ContinuationGenerator {
 public:
  struct Step {
    std::vector<double> probs;  // distribution sampled from (after masking)
    TokenId token;
  };

  explicit LocalGenerator(const LanguageModel& model) : model_(model) {}

  /// When set, every sampling step is appended here.
  std::vector<Step>* trace = nullptr;

  std::string sample(std::string_view prompt, double top_p, std::size_t length, std::uint64_t seed) override {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw UsageError("top_p must lie in (0, 1]");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    TokenIds context = model_.tokenize(prompt);
    const auto eos = model_.eos_token();
    if (context.empty()) {
      if (!eos) throw UsageError("cannot sample without a prompt or an eos token");
      context.push_back(*eos);
    }
    const auto specials = model_.special_tokens();
    TokenIds generated;
    for (std::size_t t = 0; t < length; ++t) {
      const auto window = std::min(context.size(), model_.max_positions());
      std::span<const TokenId> ctx(context.data() + context.size() - window, window);
      const Matrix logits = forward_logits(model_, empty_prefix(model_), ctx);
      const auto last = logits.row(logits.rows() - 1);
      const double lse = log_sum_exp(last);
      std::vector<double> probs(static_cast<std::size_t>(last.size()));
      double total = 0.0;
      for (std::size_t v = 0; v < probs.size(); ++v) {
        const auto id = static_cast<TokenId>(v);
        const bool masked = std::find(specials.begin(), specials.end(), id) != specials.end() && (!eos || id != *eos);
        probs[v] = masked ? 0.0 : std::exp(last(static_cast<Eigen::Index>(v)) - lse);
        total += probs[v];
      }
      for (double& p : probs) p /= total;
      const auto keep = nucleus(probs, top_p);
      double kept_mass = 0.0;
      for (TokenId id : keep) kept_mass += probs[id];
      double u = unif(rng) * kept_mass;
      TokenId pick = keep.back();
      for (TokenId id : keep) {
        u -= probs[id];
        if (u <= 0.0) {
          pick = id;
          break;
        }
      }
      if (trace) trace->push_back({probs, pick});
      if (eos && pick == *eos) break;
      generated.push_back(pick);
      context.push_back(pick);
    }
    return model_.detokenize(generated);
  }

 private:
  const LanguageModel& model_;
};

/// k continuations, kept distinct by resampling up to `max_retries` extra
/// draws per slot; after that a duplicate is accepted and a warning recorded.
inline std::vector<std::string> generate_continuations(std::string_view prompt_text, ContinuationGenerator& generator,
                                                       std::size_t k, double top_p, std::size_t length,
                                                       std::uint64_t seed, std::size_t max_retries = 8,
                                                       std::vector<std::string>* warnings = nullptr) {
  std::vector<std::string> out;
  std::uint64_t draw = 0;
  for (std::size_t slot = 0; slot < k; ++slot) {
    for (std::size_t attempt = 0;; ++attempt) {
      std::string text;
      try {
        text = generator.sample(prompt_text, top_p, length, seed * 0x9E3779B97F4A7C15ull + draw++);
      } catch (const std::exception& e) {
        throw Error("continuation generator failed on slot " + std::to_string(slot) + " after " +
                    std::to_string(attempt) + " retries: " + e.what());
      }
      const bool dup = std::find(out.begin(), out.end(), text) != out.end();
      if (!dup || attempt >= max_retries) {
        if (dup && warnings)
          warnings->push_back("continuation " + std::to_string(slot) + " duplicates an earlier one after " +
                              std::to_string(max_retries) + " retries");
        out.push_back(std::move(text));
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PMI_DC

/// argmax_y p(y | x) / p(y | domain) from the two passes' label logits; the
/// first label wins ties.
inline std::size_t pmi_dc_decide(std::span<const double> input_logits, std::span<const double> domain_logits) {
  const auto p = label_softmax(input_logits);
  const auto q = label_softmax(domain_logits);
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t y = 0; y < p.size(); ++y) {
    const double score = std::log(p[y]) - std::log(q[y]);
    if (score > best_score) {
      best_score = score;
      best = y;
    }
  }
  return best;
}

/// Label logits for an input rendered through the task template, no prompt.
inline std::vector<double> unprompted_label_logits(const LanguageModel& model, std::string_view input,
                                                   const BoundTask& task) {
  const auto body = render(task.spec, input, model);
  auto pass = checked_forward(model, embed(model, body));
  const auto& h = pass->hidden();
  return label_logits(model, task, h.row(h.rows() - 1));
}

inline std::size_t pmi_dc_predict(const LanguageModel& model, std::string_view x, const BoundTask& task) {
  return pmi_dc_decide(unprompted_label_logits(model, x, task),
                       unprompted_label_logits(model, task.spec.domain_string, task));
}

inline double pmi_dc_accuracy(const LanguageModel& model, std::span<const Example> dataset, const BoundTask& task) {
  if (dataset.empty()) throw UsageError("pmi_dc_accuracy: empty dataset");
  const auto prior = unprompted_label_logits(model, task.spec.domain_string, task);
  std::size_t correct = 0;
  for (const auto& ex : dataset) {
    if (!ex.label) throw UsageError("pmi_dc_accuracy: unlabeled example");
    if (pmi_dc_decide(unprompted_label_logits(model, ex.text, task), prior) == *ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

// ---------------------------------------------------------------------------
// Report

enum class PromptSource { tuned, human, random, empty };

inline const char* to_string(PromptSource s) {
  switch (s) {
    case PromptSource::tuned: return "tuned";
    case PromptSource::human: return "human";
    case PromptSource::random: return "random";
    case PromptSource::empty: return "empty";
  }
  return "?";
}

struct PromptCandidate {
  std::string text;
  PromptSource source = PromptSource::human;
  std::optional<TokenIds> token_ids;  // exact ids when known (tuned prompts)
};

struct PromptDiagnostics {
  std::string prompt_text;
  std::optional<double> accuracy;
  std::optional<double> perplexity;
  double label_entropy = 0.0;
  std::size_t domain_word_count = 0;
  PromptSource source = PromptSource::human;
};

struct ReportOptions {
  double effective_fraction = 0.1;  // top share of tuned prompts by accuracy
  std::size_t histogram_bins = 10;
  std::size_t continuations = 0;
  double top_p = 0.95;
  std::size_t continuation_length = 100;
  std::uint64_t seed = 0;
  ContinuationGenerator* generator = nullptr;
};

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v && std::isfinite(*v) ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const PromptDiagnostics& d) {
  return {{"prompt_text", d.prompt_text},       {"accuracy", optional_json(d.accuracy)},
          {"perplexity", optional_json(d.perplexity)}, {"label_entropy", d.label_entropy},
          {"domain_word_count", d.domain_word_count}, {"source", to_string(d.source)}};
}

inline PromptDiagnostics diagnose(const LanguageModel& model, const PromptCandidate& c, const BoundTask& task,
                                  std::span<const Example> eval_data, const ReportOptions& opt) {
  const TokenIds ids = c.token_ids ? *c.token_ids : model.tokenize(c.text);
  const Matrix prefix = ids.empty() ? empty_prefix(model) : embed(model, ids);
  PromptDiagnostics d;
  d.prompt_text = c.text;
  d.source = c.source;
  if (!eval_data.empty()) d.accuracy = accuracy(model, prefix, eval_data, task);
  if (ids.size() >= 2) d.perplexity = std::exp(mean_token_nll(model, ids));
  d.label_entropy = label_entropy(model, prefix, task);
  std::vector<std::string> conts;
  if (opt.generator && opt.continuations > 0)
    conts = generate_continuations(c.text, *opt.generator, opt.continuations, opt.top_p, opt.continuation_length,
                                   opt.seed);
  if (!task.spec.domain_words.empty()) d.domain_word_count = domain_word_frequency(c.text, conts, task.spec.domain_words);
  return d;
}

/// Candidates from chains (source "tuned") followed by baselines, deduplicated
/// by prompt text; the first occurrence wins.
inline std::vector<PromptCandidate> collect_candidates(std::span<const ChainRecord> chains,
                                                       std::span<const PromptCandidate> baselines) {
  std::vector<PromptCandidate> out;
  std::set<std::string> seen;
  for (const auto& c : chains)
    if (seen.insert(c.final_prompt_text).second)
      out.push_back({c.final_prompt_text, PromptSource::tuned, c.final_token_ids});
  for (const auto& b : baselines)
    if (seen.insert(b.text).second) out.push_back(b);
  return out;
}

/// Plot-ready JSON: per-prompt rows, entropy histogram, entropy/accuracy
/// scatter with its Spearman correlation, and the effective-vs-random
/// domain-word comparison.
inline nlohmann::json diagnostics_report(std::span<const ChainRecord> chains, std::span<const PromptCandidate> baselines,
                                         const BoundTask& task, const LanguageModel& model,
                                         std::span<const Example> eval_data, const ReportOptions& opt = {}) {
  if (!eval_data.empty() && !all_labeled(eval_data)) throw UsageError("diagnostics need a labeled eval set");
  std::vector<PromptDiagnostics> rows;
  for (const auto& c : collect_candidates(chains, baselines)) rows.push_back(diagnose(model, c, task, eval_data, opt));

  nlohmann::json report;
  report["prompts"] = nlohmann::json::array();
  for (const auto& r : rows) report["prompts"].push_back(to_json(r));

  // entropy histogram over [0, ln|Y|]
  const std::size_t bins = std::max<std::size_t>(1, opt.histogram_bins);
  const double hi = std::log(static_cast<double>(task.num_labels()));
  std::vector<double> edges(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) edges[b] = hi * static_cast<double>(b) / static_cast<double>(bins);
  auto bin_of = [&](double h) {
    const auto b = static_cast<std::size_t>(std::floor(h / hi * static_cast<double>(bins)));
    return std::min(b, bins - 1);
  };
  std::vector<std::size_t> counts(bins, 0);
  nlohmann::json by_source = nlohmann::json::object();
  for (const auto& r : rows) {
    const auto b = bin_of(r.label_entropy);
    ++counts[b];
    auto& src = by_source[to_string(r.source)];
    if (src.is_null()) src = std::vector<std::size_t>(bins, 0);
    src[b] = src[b].get<std::size_t>() + 1;
  }
  report["entropy_hist"] = {{"bins", edges}, {"counts", counts}, {"by_source", by_source}};

  std::vector<double> xs, ys;
  report["scatter"] = nlohmann::json::array();
  for (const auto& r : rows) {
    if (!r.accuracy) continue;
    xs.push_back(r.label_entropy);
    ys.push_back(*r.accuracy);
    report["scatter"].push_back({r.label_entropy, *r.accuracy});
  }
  report["spearman"] = {{"rho", nullptr}, {"p", nullptr}};
  if (xs.size() >= 3) {
    try {
      const auto c = spearman(xs, ys);
      report["spearman"] = {{"rho", c.rho}, {"p", c.p_value}};
    } catch (const UsageError&) {
      // constant column: correlation undefined
    }
  }

  std::vector<const PromptDiagnostics*> tuned, random;
  for (const auto& r : rows) {
    if (r.source == PromptSource::tuned) tuned.push_back(&r);
    if (r.source == PromptSource::random) random.push_back(&r);
  }
  std::stable_sort(tuned.begin(), tuned.end(), [](const PromptDiagnostics* a, const PromptDiagnostics* b) {
    return a->accuracy.value_or(-1.0) > b->accuracy.value_or(-1.0);
  });
  if (!tuned.empty()) {
    const auto keep = static_cast<std::size_t>(std::ceil(opt.effective_fraction * static_cast<double>(tuned.size())));
    tuned.resize(std::clamp<std::size_t>(keep, 1, tuned.size()));
  }
  auto summarize = [](const std::vector<const PromptDiagnostics*>& group) {
    nlohmann::json g = {{"n", group.size()}, {"mean_acc", nullptr}, {"mean_freq", nullptr}};
    if (group.empty()) return g;
    double acc = 0.0, freq = 0.0;
    std::size_t with_acc = 0;
    for (const auto* r : group) {
      freq += static_cast<double>(r->domain_word_count);
      if (r->accuracy) {
        acc += *r->accuracy;
        ++with_acc;
      }
    }
    g["mean_freq"] = freq / static_cast<double>(group.size());
    if (with_acc) g["mean_acc"] = acc / static_cast<double>(with_acc);
    return g;
  };
  nlohmann::json domain = {{"effective", summarize(tuned)}, {"random", summarize(random)}, {"t_test_p", nullptr}};
  const auto pairs = std::min(tuned.size(), random.size());
  if (pairs >= 2) {
    std::vector<double> a, b;
    for (std::size_t i = 0; i < pairs; ++i) {
      a.push_back(static_cast<double>(tuned[i]->domain_word_count));
      b.push_back(static_cast<double>(random[i]->domain_word_count));
    }
    domain["t_test_p"] = paired_ttest(a, b);
  }
  report["domain_freq"] = domain;
  return report;
}

}  // namespace dprompt
