// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#pragma once

// ChainRecord <-> JSON, content hashing and the run manifest.
//
// Record layout:
//   {config, task_id, model, initial_token_ids,
//    steps: [{i, energy: {total, terms}, token_ids}],
//    final_token_ids, final_prompt_text, metrics, fault?}

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "dprompt/core.hpp"
#include "dprompt/energy.hpp"
#include "dprompt/projection.hpp"
#include "dprompt/sampler.hpp"

namespace dprompt {

using nlohmann::json;

inline const char* to_string(EnergyMode m) { return m == EnergyMode::supervised ? "supervised" : "unsupervised"; }
inline const char* to_string(EnergySign s) { return s == EnergySign::intent ? "intent" : "literal"; }
inline const char* to_string(Optimizer o) { return o == Optimizer::plain ? "plain" : "adaptive"; }
inline const char* to_string(AllowedVocab a) { return a == AllowedVocab::all ? "all" : "no-special"; }

inline EnergyMode parse_mode(const std::string& s) {
  if (s == "supervised") return EnergyMode::supervised;
  if (s == "unsupervised") return EnergyMode::unsupervised;
  throw ConfigError("unknown mode '" + s + "'");
}
inline EnergySign parse_sign(const std::string& s) {
  if (s == "intent") return EnergySign::intent;
  if (s == "literal") return EnergySign::literal;
  throw ConfigError("unknown energy sign '" + s + "'");
}
inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "plain") return Optimizer::plain;
  if (s == "adaptive") return Optimizer::adaptive;
  throw ConfigError("unknown optimizer '" + s + "'");
}
inline AllowedVocab parse_allowed_vocab(const std::string& s) {
  if (s == "all") return AllowedVocab::all;
  if (s == "no-special") return AllowedVocab::no_special;
  throw ConfigError("unknown allowed-vocab '" + s + "'");
}

inline json to_json(const EnergyConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"lambda_task", c.lambda_task},
          {"lambda_fluency", c.lambda_fluency},
          {"lambda_calibration", c.lambda_calibration},
          {"lambda_domain", c.lambda_domain},
          {"sign", to_string(c.sign)}};
}

inline EnergyConfig energy_config_from_json(const json& j) {
  EnergyConfig c;
  c.mode = parse_mode(j.at("mode").get<std::string>());
  c.lambda_task = j.at("lambda_task").get<double>();
  c.lambda_fluency = j.at("lambda_fluency").get<double>();
  c.lambda_calibration = j.at("lambda_calibration").get<double>();
  c.lambda_domain = j.at("lambda_domain").get<double>();
  c.sign = parse_sign(j.value("sign", std::string("intent")));
  return c;
}

inline json to_json(const SamplerConfig& c) {
  json j = {{"eta", c.eta},
            {"beta_start", c.schedule.beta_start},
            {"beta_end", c.schedule.beta_end},
            {"steps", c.schedule.steps},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"optimizer", to_string(c.optimizer)},
            {"prompt_length", c.prompt_length},
            {"energy", to_json(c.energy)},
            {"allowed_vocab", to_string(c.allowed_vocab)}};
  j["init_text"] = c.init_text ? json(*c.init_text) : json(nullptr);
  return j;
}

inline SamplerConfig sampler_config_from_json(const json& j) {
  SamplerConfig c;
  c.eta = j.at("eta").get<double>();
  c.schedule = {j.at("beta_start").get<double>(), j.at("beta_end").get<double>(), j.at("steps").get<std::size_t>()};
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  c.prompt_length = j.at("prompt_length").get<std::size_t>();
  c.energy = energy_config_from_json(j.at("energy"));
  c.allowed_vocab = parse_allowed_vocab(j.value("allowed_vocab", std::string("no-special")));
  if (j.contains("init_text") && !j["init_text"].is_null()) c.init_text = j["init_text"].get<std::string>();
  return c;
}

inline json to_json(const ChainRecord& r) {
  json steps = json::array();
  for (const auto& s : r.steps)
    steps.push_back({{"i", s.i}, {"energy", {{"total", s.energy.total}, {"terms", s.energy.per_term}}},
                     {"token_ids", s.token_ids}});
  json j = {{"config", to_json(r.config)},
            {"task_id", r.task_id},
            {"model", r.model},
            {"initial_token_ids", r.initial_token_ids},
            {"steps", std::move(steps)},
            {"final_token_ids", r.final_token_ids},
            {"final_prompt_text", r.final_prompt_text},
            {"metrics", r.metrics}};
  if (r.fault) j["fault"] = *r.fault;
  return j;
}

inline ChainRecord chain_from_json(const json& j) {
  try {
    ChainRecord r;
    r.config = sampler_config_from_json(j.at("config"));
    r.task_id = j.at("task_id").get<std::string>();
    r.model = j.value("model", std::string());
    r.initial_token_ids = j.value("initial_token_ids", TokenIds{});
    for (const auto& s : j.at("steps")) {
      StepRecord step;
      step.i = s.at("i").get<std::size_t>();
      step.energy.total = s.at("energy").at("total").is_null() ? std::nan("") : s.at("energy").at("total").get<double>();
      for (const auto& [name, v] : s.at("energy").at("terms").items())
        step.energy.per_term[name] = v.is_null() ? std::nan("") : v.get<double>();
      step.token_ids = s.at("token_ids").get<TokenIds>();
      r.steps.push_back(std::move(step));
    }
    r.final_token_ids = j.value("final_token_ids", TokenIds{});
    r.final_prompt_text = j.at("final_prompt_text").get<std::string>();
    for (const auto& [name, v] : j.at("metrics").items()) r.metrics[name] = v.is_null() ? std::nan("") : v.get<double>();
    if (j.contains("fault")) r.fault = j["fault"].get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed chain record: ") + e.what());
  }
}

/// Serialized bytes of a record: sorted keys, two-space indent, trailing newline.
inline std::string serialize(const ChainRecord& r) { return to_json(r).dump(2) + "\n"; }

inline std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << bytes;
  if (!out) throw Error("write failed for " + path);
}

inline ChainRecord load_chain(const std::string& path) {
  try {
    return chain_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace dprompt
