// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#pragma once

// The `dprompt` command line: tune, eval, analyze, verify.
//
// Exit codes: 0 success, 1 runtime fault (artifacts may be partial),
// 2 usage error (nothing written).

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dprompt/analysis.hpp"
#include "dprompt/chain_io.hpp"
#include "dprompt/metrics.hpp"
#include "dprompt/model_registry.hpp"
#include "dprompt/sampler.hpp"
#include "dprompt/task.hpp"

namespace dprompt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kOk = 0;
inline constexpr int kFault = 1;
inline constexpr int kUsage = 2;

inline constexpr const char* kManifest = "manifest.json";

// ---------------------------------------------------------------------------
// value parsing

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw UsageError("empty item in list '" + s + "'");
    out.push_back(item.substr(b, e - b + 1));
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

inline double parse_real(const std::string& s, const std::string& flag) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || used == 0) throw UsageError(flag + ": not a number: '" + s + "'");
  return v;
}

inline std::uint64_t parse_count(const std::string& s, const std::string& flag) {
  const double v = parse_real(s, flag);
  if (v < 0 || v != std::floor(v) || v > 1e15) throw UsageError(flag + ": expected a non-negative integer, got '" + s + "'");
  return static_cast<std::uint64_t>(v);
}

inline std::vector<double> parse_reals(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(parse_real(item, flag));
  return out;
}

/// "N" means seeds 0..N-1, "a..b" an inclusive range, "a,b,c" an explicit list.
inline std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  if (const auto dots = s.find(".."); dots != std::string::npos) {
    const auto lo = parse_count(s.substr(0, dots), "--seeds");
    const auto hi = parse_count(s.substr(dots + 2), "--seeds");
    if (hi < lo) throw UsageError("--seeds: empty range '" + s + "'");
    for (auto v = lo; v <= hi; ++v) out.push_back(v);
  } else if (s.find(',') != std::string::npos) {
    for (const auto& item : split_list(s)) out.push_back(parse_count(item, "--seeds"));
  } else {
    const auto n = parse_count(s, "--seeds");
    if (n == 0) throw UsageError("--seeds must be >= 1");
    for (std::uint64_t v = 0; v < n; ++v) out.push_back(v);
  }
  return out;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

inline std::string chain_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "chain-%04zu.json", index);
  return buf;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) lines.push_back(line);
  }
  return lines;
}

// ---------------------------------------------------------------------------
// flags with an optional JSON config underneath

/// String-valued settings gathered from flags, falling back to a JSON config
/// object whose keys are the flag names without the leading dashes.
class Settings {
 public:
  void add(CLI::App& app, const std::string& name, const std::string& help) {
    auto& slot = flags_[name];
    options_[name] = app.add_option("--" + name, slot, help);
  }

  void load_config(const std::string& path) {
    json j;
    try {
      j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
      throw UsageError("--config " + path + ": " + e.what());
    }
    if (!j.is_object()) throw UsageError("--config must hold a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (!options_.count(key)) throw UsageError("--config: unknown key '" + key + "'");
      config_[key] = stringify(value, key);
    }
  }

  void add_switch(CLI::App& app, const std::string& name, const std::string& help) {
    options_[name] = app.add_flag("--" + name, help);
  }

  bool from_flag(const std::string& name) const { return options_.at(name)->count() > 0; }
  bool given(const std::string& name) const { return from_flag(name) || config_.count(name); }

  std::optional<std::string> get(const std::string& name) const {
    if (from_flag(name)) return flags_.at(name);
    if (auto it = config_.find(name); it != config_.end()) return it->second;
    return std::nullopt;
  }

  std::string get_or(const std::string& name, const std::string& fallback) const {
    return get(name).value_or(fallback);
  }

 private:
  static std::string stringify(const json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number() || v.is_boolean()) return v.dump();
    if (v.is_array()) {
      std::string out;
      for (const auto& item : v) {
        if (item.is_array() || item.is_object()) throw UsageError("--config: nested value for '" + key + "'");
        if (!out.empty()) out += ",";
        out += stringify(item, key);
      }
      return out;
    }
    throw UsageError("--config: unsupported value for '" + key + "'");
  }

  std::map<std::string, std::string> flags_;
  std::map<std::string, CLI::Option*> options_;
  std::map<std::string, std::string> config_;
};

inline TaskSpec resolve_task(const std::optional<std::string>& builtin, const std::optional<std::string>& file) {
  if (builtin && file) throw UsageError("--task and --task-file are mutually exclusive");
  if (builtin) return builtin_task(*builtin);
  if (file) return load_task_file(*file);
  throw UsageError("one of --task or --task-file is required");
}

// ---------------------------------------------------------------------------
// tune

struct TunePlan {
  TaskSpec task;
  std::string model;
  std::string data_path;
  std::optional<std::string> val_path;
  std::string out_dir;
  std::vector<SamplerConfig> grid;
  std::size_t jobs = 1;
};

inline TunePlan plan_tune(const Settings& s) {
  TunePlan plan;
  plan.task = resolve_task(s.get("task"), s.get("task-file"));
  plan.model = s.get_or("model", "reference");
  if (!s.get("data")) throw UsageError("--data is required");
  plan.data_path = *s.get("data");
  plan.val_path = s.get("val-data");
  if (!s.get("out-dir")) throw UsageError("--out-dir is required");
  plan.out_dir = *s.get("out-dir");

  const EnergyMode mode = parse_mode(s.get_or("mode", "supervised"));
  const bool supervised = mode == EnergyMode::supervised;
  if (supervised && (s.given("lambda-domain") || s.given("energy-sign")))
    throw UsageError("--lambda-domain and --energy-sign apply to --mode unsupervised only");
  if (!supervised && s.given("lambda-fluency"))
    throw UsageError("--lambda-fluency applies to --mode supervised only");

  const auto ms = parse_reals(s.get_or("m", supervised ? "5,10" : "10"), "--m");
  const auto etas = parse_reals(s.get_or("eta", supervised ? "0.3,1,3,10" : "1,3"), "--eta");
  const auto lambdas = supervised ? parse_reals(s.get_or("lambda-fluency", "0.003,0.01,0.03,0.1,0.3"), "--lambda-fluency")
                                  : parse_reals(s.get_or("lambda-domain", "0,0.0003,0.001,0.003,0.01,0.05,0.2,0.5"),
                                                "--lambda-domain");
  const EnergySign sign = parse_sign(s.get_or("energy-sign", "intent"));
  const auto seeds = parse_seeds(s.get_or("seeds", "5"));
  const auto steps = parse_count(s.get_or("steps", "5000"), "--steps");
  const auto batch = parse_count(s.get_or("batch-size", "16"), "--batch-size");
  const double beta_start = parse_real(s.get_or("beta-start", "1.0"), "--beta-start");
  const double beta_end = parse_real(s.get_or("beta-end", "0.0001"), "--beta-end");
  const Optimizer optimizer = parse_optimizer(s.get_or("optimizer", "adaptive"));
  const AllowedVocab vocab = parse_allowed_vocab(s.get_or("allowed-vocab", "no-special"));
  plan.jobs = parse_count(s.get_or("jobs", "1"), "--jobs");
  if (plan.jobs == 0) throw UsageError("--jobs must be >= 1");

  for (const double m : ms) {
    if (m < 1 || m != std::floor(m)) throw UsageError("--m: prompt lengths must be positive integers");
    for (const double eta : etas)
      for (const double lambda : lambdas)
        for (const auto seed : seeds) {
          SamplerConfig c;
          c.eta = eta;
          c.schedule = {beta_start, beta_end, static_cast<std::size_t>(steps)};
          c.batch_size = static_cast<std::size_t>(batch);
          c.seed = seed;
          c.optimizer = optimizer;
          c.prompt_length = static_cast<std::size_t>(m);
          c.energy = supervised ? EnergyConfig::supervised(lambda) : EnergyConfig::unsupervised(lambda, sign);
          c.allowed_vocab = vocab;
          c.init_text = s.get("init-text");
          c.validate();
          plan.grid.push_back(std::move(c));
        }
  }
  return plan;
}

inline json manifest_entry(const std::string& file, const ChainRecord& rec, const std::string& bytes) {
  json e = {{"file", file}, {"sha256", sha256_hex(bytes)}, {"config", to_json(rec.config)}};
  if (rec.fault) e["fault"] = *rec.fault;
  return e;
}

inline int run_tune(const TunePlan& plan, std::ostream& out, std::ostream& err) {
  const auto model = load_model(plan.model);
  const BoundTask task = bind(plan.task, *model);
  const auto data = load_dataset(plan.data_path, plan.task);
  const bool supervised = plan.grid.front().energy.mode == EnergyMode::supervised;
  if (supervised && !all_labeled(data)) throw UsageError("--mode supervised needs a labeled --data file");
  std::vector<Example> val;
  if (plan.val_path) {
    val = load_dataset(*plan.val_path, plan.task);
    if (!all_labeled(val)) throw UsageError("--val-data must be labeled");
  }
  fs::create_directories(plan.out_dir);

  const std::size_t n = plan.grid.size();
  std::vector<std::optional<ChainRecord>> records(n);
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;

  auto worker = [&] {
    for (std::size_t c = next++; c < n; c = next++) {
      try {
        ChainRecord rec = run_chain(task, *model, plan.grid[c], data, plan.model);
        if (!val.empty() && !rec.fault) {
          const Matrix prefix = embed(*model, rec.final_token_ids);
          rec.metrics["val_accuracy"] = accuracy(*model, prefix, val, task);
        }
        write_file((fs::path(plan.out_dir) / chain_file_name(c)).string(), serialize(rec));
        std::lock_guard lock(log_mu);
        out << chain_file_name(c) << "  seed " << rec.config.seed << "  M " << rec.config.prompt_length << "  eta "
            << rec.config.eta << "  ";
        if (rec.fault)
          out << "FAULT: " << *rec.fault << "\n";
        else
          out << "energy " << (rec.steps.empty() ? 0.0 : rec.steps.back().energy.total) << "  \""
              << rec.final_prompt_text << "\"\n";
        records[c] = std::move(rec);
      } catch (const std::exception& e) {
        std::lock_guard lock(log_mu);
        errors[c] = e.what();
        err << chain_file_name(c) << ": " << e.what() << "\n";
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(plan.jobs, n);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  json manifest = {{"created", utc_timestamp()},
                   {"task", to_json(plan.task)},
                   {"model", plan.model},
                   {"data", plan.data_path},
                   {"data_sha256", sha256_hex(read_file(plan.data_path))},
                   {"chains", json::array()}};
  bool faulted = false;
  std::vector<ChainRecord> done;
  std::vector<std::string> done_files;
  for (std::size_t c = 0; c < n; ++c) {
    if (!records[c]) {
      faulted = true;
      continue;
    }
    const auto file = chain_file_name(c);
    manifest["chains"].push_back(manifest_entry(file, *records[c], serialize(*records[c])));
    if (records[c]->fault) {
      faulted = true;
      continue;
    }
    done.push_back(*records[c]);
    done_files.push_back(file);
  }
  if (!val.empty() && !done.empty()) {
    const auto& best = select_best(done, "val_accuracy");
    const auto idx = static_cast<std::size_t>(&best - done.data());
    manifest["best"] = {{"file", done_files[idx]}, {"metric", "val_accuracy"}, {"value", best.metrics.at("val_accuracy")},
                        {"prompt", best.final_prompt_text}};
    out << "best: " << done_files[idx] << "  val_accuracy " << best.metrics.at("val_accuracy") << "  \""
        << best.final_prompt_text << "\"\n";
  }
  write_file((fs::path(plan.out_dir) / kManifest).string(), manifest.dump(2) + "\n");
  return faulted ? kFault : kOk;
}

// ---------------------------------------------------------------------------
// chain directories

struct ChainDir {
  fs::path dir;
  json manifest;
  std::vector<std::string> files;
  std::vector<ChainRecord> records;
};

inline ChainDir load_chain_dir(const std::string& dir) {
  ChainDir cd;
  cd.dir = dir;
  try {
    cd.manifest = json::parse(read_file((cd.dir / kManifest).string()));
  } catch (const json::parse_error& e) {
    throw DataError(std::string("bad manifest: ") + e.what());
  }
  for (const auto& e : cd.manifest.at("chains")) {
    if (e.contains("fault")) continue;
    cd.files.push_back(e.at("file").get<std::string>());
    cd.records.push_back(load_chain((cd.dir / cd.files.back()).string()));
  }
  return cd;
}

inline void save_chain_dir(ChainDir& cd) {
  std::map<std::string, const ChainRecord*> by_file;
  for (std::size_t i = 0; i < cd.files.size(); ++i) by_file[cd.files[i]] = &cd.records[i];
  for (auto& e : cd.manifest["chains"]) {
    auto it = by_file.find(e.at("file").get<std::string>());
    if (it == by_file.end()) continue;
    const auto bytes = serialize(*it->second);
    write_file((cd.dir / it->first).string(), bytes);
    e["sha256"] = sha256_hex(bytes);
  }
  write_file((cd.dir / kManifest).string(), cd.manifest.dump(2) + "\n");
}

/// Files whose bytes no longer match the manifest hash (or are missing).
inline std::vector<std::string> verify_chain_dir(const std::string& dir) {
  const auto manifest = json::parse(read_file((fs::path(dir) / kManifest).string()));
  std::vector<std::string> bad;
  for (const auto& e : manifest.at("chains")) {
    const auto file = e.at("file").get<std::string>();
    const auto path = fs::path(dir) / file;
    if (!fs::exists(path) || sha256_hex(read_file(path.string())) != e.at("sha256").get<std::string>())
      bad.push_back(file);
  }
  return bad;
}

inline TaskSpec task_for(const Settings& s, const ChainDir* cd) {
  if (s.get("task") || s.get("task-file")) return resolve_task(s.get("task"), s.get("task-file"));
  if (cd && cd->manifest.contains("task")) return task_from_json(nlohmann::ordered_json::parse(cd->manifest["task"].dump()));
  throw UsageError("one of --task or --task-file is required");
}

inline std::string model_for(const Settings& s, const ChainDir* cd) {
  if (auto m = s.get("model")) return *m;
  if (cd && cd->manifest.contains("model")) return cd->manifest["model"].get<std::string>();
  return "reference";
}

// ---------------------------------------------------------------------------
// eval

struct EvalRow {
  std::string source;
  std::string text;
  double accuracy = 0.0;
  std::optional<double> perplexity;
};

inline int run_eval(const Settings& s, std::ostream& out) {
  const auto chains_dir = s.get("chains");
  const auto prompts_file = s.get("prompts");
  if (!chains_dir && !prompts_file) throw UsageError("one of --chains or --prompts is required");
  if (!s.get("data")) throw UsageError("--data is required");

  std::optional<ChainDir> cd;
  if (chains_dir) cd = load_chain_dir(*chains_dir);
  const TaskSpec spec = task_for(s, cd ? &*cd : nullptr);
  const auto model = load_model(model_for(s, cd ? &*cd : nullptr));
  const BoundTask task = bind(spec, *model);
  const auto data = load_dataset(*s.get("data"), spec);
  if (!all_labeled(data)) throw UsageError("--data must be labeled for evaluation");

  auto score = [&](const TokenIds& ids) {
    EvalRow r;
    r.accuracy = accuracy(*model, ids.empty() ? empty_prefix(*model) : embed(*model, ids), data, task);
    if (ids.size() >= 2) r.perplexity = std::exp(mean_token_nll(*model, ids));
    return r;
  };

  std::vector<EvalRow> rows;
  std::vector<std::string> texts;
  if (cd) {
    for (std::size_t i = 0; i < cd->records.size(); ++i) {
      auto r = score(cd->records[i].final_token_ids);
      r.source = cd->files[i];
      r.text = cd->records[i].final_prompt_text;
      rows.push_back(r);
      texts.push_back(r.text);
    }
  }
  if (prompts_file) {
    for (const auto& line : read_lines(*prompts_file)) {
      auto r = score(model->tokenize(line));
      r.source = "prompt";
      r.text = line;
      rows.push_back(r);
      texts.push_back(r.text);
    }
  }
  const double d1 = texts.empty() ? 0.0 : dist1(texts);
  if (s.from_flag("include-empty")) {
    auto r = score({});
    r.source = "empty";
    rows.push_back(r);
  }

  if (cd) {
    for (std::size_t i = 0; i < cd->records.size(); ++i) {
      auto& m = cd->records[i].metrics;
      m["accuracy"] = rows[i].accuracy;
      if (rows[i].perplexity) m["perplexity"] = *rows[i].perplexity;
      m["dist1"] = d1;
    }
    save_chain_dir(*cd);
  }

  out << std::left << std::setw(18) << "source" << std::setw(10) << "acc" << std::setw(12) << "ppl" << "prompt\n";
  for (const auto& r : rows) {
    std::ostringstream ppl;
    if (r.perplexity) ppl << std::fixed << std::setprecision(2) << *r.perplexity; else ppl << "-";
    std::ostringstream acc;
    acc << std::fixed << std::setprecision(4) << r.accuracy;
    out << std::setw(18) << r.source << std::setw(10) << acc.str() << std::setw(12) << ppl.str() << '"' << r.text
        << "\"\n";
  }
  out << "dist1 " << std::fixed << std::setprecision(4) << d1 << "\n";

  if (auto path = s.get("out")) {
    json j = {{"dist1", d1}, {"rows", json::array()}};
    for (const auto& r : rows)
      j["rows"].push_back({{"source", r.source}, {"prompt_text", r.text}, {"accuracy", r.accuracy},
                           {"perplexity", r.perplexity ? json(*r.perplexity) : json(nullptr)}});
    write_file(*path, j.dump(2) + "\n");
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// analyze

/// `count` prompts of `length` tokens drawn uniformly from the non-special vocabulary.
inline std::vector<PromptCandidate> random_prompts(const LanguageModel& model, std::size_t count, std::size_t length,
                                                   std::uint64_t seed) {
  const auto ids = allowed_token_ids(model, AllowedVocab::no_special);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
  std::vector<PromptCandidate> out;
  for (std::size_t i = 0; i < count; ++i) {
    TokenIds p(length);
    for (auto& t : p) t = ids[pick(rng)];
    out.push_back({model.detokenize(p), PromptSource::random, p});
  }
  return out;
}

inline int run_analyze(const Settings& s, std::ostream& out) {
  if (!s.get("out")) throw UsageError("--out is required");
  std::optional<ChainDir> cd;
  if (auto dir = s.get("chains")) cd = load_chain_dir(*dir);
  const TaskSpec spec = task_for(s, cd ? &*cd : nullptr);
  const auto model = load_model(model_for(s, cd ? &*cd : nullptr));
  const BoundTask task = bind(spec, *model);
  std::vector<Example> data;
  if (auto path = s.get("data")) {
    data = load_dataset(*path, spec);
    if (!all_labeled(data)) throw UsageError("--data must be labeled for analysis");
  }

  ReportOptions opt;
  opt.effective_fraction = parse_real(s.get_or("effective-fraction", "0.1"), "--effective-fraction");
  if (!(opt.effective_fraction > 0.0 && opt.effective_fraction <= 1.0))
    throw UsageError("--effective-fraction must lie in (0, 1]");
  opt.histogram_bins = parse_count(s.get_or("bins", "10"), "--bins");
  opt.continuations = parse_count(s.get_or("continuations", "0"), "--continuations");
  opt.top_p = parse_real(s.get_or("top-p", "0.95"), "--top-p");
  opt.continuation_length = parse_count(s.get_or("continuation-length", "100"), "--continuation-length");
  opt.seed = parse_count(s.get_or("seed", "0"), "--seed");
  LocalGenerator generator(*model);
  opt.generator = &generator;

  std::vector<PromptCandidate> baselines;
  if (auto path = s.get("human-prompts"))
    for (const auto& line : read_lines(*path)) baselines.push_back({line, PromptSource::human, std::nullopt});
  if (auto path = s.get("random-prompts"))
    for (const auto& line : read_lines(*path)) baselines.push_back({line, PromptSource::random, std::nullopt});
  if (auto n = s.get("random")) {
    const auto len = parse_count(s.get_or("random-length", "10"), "--random-length");
    if (len == 0) throw UsageError("--random-length must be >= 1");
    for (auto& p : random_prompts(*model, parse_count(*n, "--random"), len, opt.seed)) baselines.push_back(std::move(p));
  }
  if (s.from_flag("include-empty")) baselines.push_back({"", PromptSource::empty, TokenIds{}});

  const std::vector<ChainRecord> none;
  const json report = diagnostics_report(cd ? cd->records : none, baselines, task, *model, data, opt);
  write_file(*s.get("out"), report.dump(2) + "\n");
  out << "wrote " << *s.get("out") << " (" << report["prompts"].size() << " prompts";
  if (!report["spearman"]["rho"].is_null()) out << ", spearman rho " << report["spearman"]["rho"].get<double>();
  out << ")\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// entry point

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Fluent discrete prompt tuning with projected Langevin dynamics", "dprompt"};
  app.require_subcommand(1);

  auto* tune = app.add_subcommand("tune", "run the seed x hyperparameter grid of sampler chains");
  Settings ts;
  ts.add(*tune, "task", "builtin task: sst2, amazon, agnews");
  ts.add(*tune, "task-file", "task spec JSON");
  ts.add(*tune, "data", "training JSONL");
  ts.add(*tune, "val-data", "labeled validation JSONL for best-prompt selection");
  ts.add(*tune, "out-dir", "directory for chain records and manifest");
  ts.add(*tune, "mode", "supervised | unsupervised");
  ts.add(*tune, "m", "prompt lengths, comma-separated");
  ts.add(*tune, "steps", "sampler steps per chain");
  ts.add(*tune, "batch-size", "examples per step");
  ts.add(*tune, "eta", "step sizes, comma-separated");
  ts.add(*tune, "beta-start", "initial noise variance");
  ts.add(*tune, "beta-end", "final noise variance");
  ts.add(*tune, "lambda-fluency", "fluency weights, comma-separated (supervised)");
  ts.add(*tune, "lambda-domain", "domain weights, comma-separated (unsupervised)");
  ts.add(*tune, "energy-sign", "intent | literal (unsupervised)");
  ts.add(*tune, "optimizer", "plain | adaptive");
  ts.add(*tune, "seeds", "N (seeds 0..N-1), a..b, or a comma list");
  ts.add(*tune, "model", "language model adapter, e.g. reference:0");
  ts.add(*tune, "allowed-vocab", "all | no-special");
  ts.add(*tune, "init-text", "text whose tokens seed the prompt");
  ts.add(*tune, "jobs", "worker threads");
  std::string tune_config;
  auto* tune_config_opt = tune->add_option("--config", tune_config, "JSON config; flags take precedence");

  auto* eval = app.add_subcommand("eval", "score tuned or listed prompts on a labeled set");
  Settings es;
  es.add(*eval, "chains", "chain directory from tune");
  es.add(*eval, "prompts", "file with one prompt per line");
  es.add(*eval, "data", "labeled evaluation JSONL");
  es.add(*eval, "task", "builtin task");
  es.add(*eval, "task-file", "task spec JSON");
  es.add(*eval, "model", "language model adapter");
  es.add(*eval, "out", "optional JSON summary");
  es.add_switch(*eval, "include-empty", "add the no-prompt baseline row");

  auto* analyze = app.add_subcommand("analyze", "write the prompt diagnostics report");
  Settings as;
  as.add(*analyze, "chains", "chain directory from tune");
  as.add(*analyze, "data", "labeled evaluation JSONL");
  as.add(*analyze, "task", "builtin task");
  as.add(*analyze, "task-file", "task spec JSON");
  as.add(*analyze, "model", "language model adapter");
  as.add(*analyze, "human-prompts", "file of human-written prompts");
  as.add(*analyze, "random-prompts", "file of random prompts");
  as.add(*analyze, "random", "number of random token prompts to sample");
  as.add(*analyze, "random-length", "tokens per sampled random prompt");
  as.add(*analyze, "continuations", "continuations per prompt for domain-word counts");
  as.add(*analyze, "top-p", "nucleus mass for continuations");
  as.add(*analyze, "continuation-length", "tokens per continuation");
  as.add(*analyze, "effective-fraction", "top share of tuned prompts treated as effective");
  as.add(*analyze, "bins", "entropy histogram bins");
  as.add(*analyze, "seed", "seed for sampling");
  as.add(*analyze, "out", "report path");
  as.add_switch(*analyze, "include-empty", "add the no-prompt baseline");

  auto* verify = app.add_subcommand("verify", "check chain records against manifest hashes");
  std::string verify_dir;
  verify->add_option("--out-dir", verify_dir, "chain directory")->required();

  std::reverse(args.begin(), args.end());
  try {
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (tune->parsed()) {
      if (tune_config_opt->count()) ts.load_config(tune_config);
      const auto plan = plan_tune(ts);  // usage errors surface before any work
      return run_tune(plan, out, err);
    }
    if (eval->parsed()) return run_eval(es, out);
    if (analyze->parsed()) return run_analyze(as, out);
    if (verify->parsed()) {
      const auto bad = verify_chain_dir(verify_dir);
      for (const auto& f : bad) err << "hash mismatch: " << f << "\n";
      if (bad.empty()) out << "ok\n";
      return bad.empty() ? kOk : kFault;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const TaskSpecError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFault;
  }
  return kOk;
}

}  // namespace dprompt::cli
