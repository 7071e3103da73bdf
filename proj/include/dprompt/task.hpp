// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#pragma once

// Task definitions: template, verbalizer, domain string and domain words,
// plus JSONL dataset ingestion.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dprompt/core.hpp"
#include "dprompt/lm_adapter.hpp"

namespace dprompt {

inline constexpr std::string_view kInputSlot = "{x}";

struct VerbalizerEntry {
  std::string label;
  std::string word;
};

struct TaskSpec {
  std::string id;
  std::string template_text;  // one "{x}" slot followed by the cue, e.g. "{x} It was"
  std::vector<VerbalizerEntry> verbalizer;
  std::string domain_string;
  std::vector<std::string> domain_words;

  std::size_t num_labels() const { return verbalizer.size(); }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (const auto& v : verbalizer) out.push_back(v.label);
    return out;
  }

  std::optional<std::size_t> label_index(std::string_view label) const {
    for (std::size_t i = 0; i < verbalizer.size(); ++i)
      if (verbalizer[i].label == label) return i;
    return std::nullopt;
  }
};

struct Example {
  std::string text;
  std::optional<std::size_t> label;  // index into TaskSpec::verbalizer
};

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

/// Checks the model-independent invariants.
inline void validate(const TaskSpec& task) {
  if (task.id.empty()) throw TaskSpecError("task id is empty");
  const auto slot = task.template_text.find(kInputSlot);
  if (slot == std::string::npos)
    throw TaskSpecError("task '" + task.id + "': template lacks the {x} input slot");
  if (task.template_text.find(kInputSlot, slot + 1) != std::string::npos)
    throw TaskSpecError("task '" + task.id + "': template has more than one {x} slot");
  if (task.verbalizer.size() < 2) throw TaskSpecError("task '" + task.id + "': needs >= 2 labels");
  for (std::size_t i = 0; i < task.verbalizer.size(); ++i)
    for (std::size_t j = i + 1; j < task.verbalizer.size(); ++j) {
      if (task.verbalizer[i].word == task.verbalizer[j].word)
        throw TaskSpecError("task '" + task.id + "': label word '" + task.verbalizer[i].word +
                            "' used twice");
      if (task.verbalizer[i].label == task.verbalizer[j].label)
        throw TaskSpecError("task '" + task.id + "': label '" + task.verbalizer[i].label +
                            "' defined twice");
    }
  if (task.domain_string.empty()) throw TaskSpecError("task '" + task.id + "': empty domain string");
}

/// Input text with the template applied. The template's own whitespace is kept,
/// so "{x} It was" puts a single space between input and cue.
inline std::string render_text(const TaskSpec& task, std::string_view x) {
  const auto slot = task.template_text.find(kInputSlot);
  if (slot == std::string::npos)
    throw TaskSpecError("task '" + task.id + "': template lacks the {x} input slot");
  std::string out = task.template_text.substr(0, slot);
  out += x;
  out += task.template_text.substr(slot + kInputSlot.size());
  return out;
}

inline TokenIds render(const TaskSpec& task, std::string_view x, const LanguageModel& model) {
  return model.tokenize(render_text(task, x));
}

/// A task whose verbalizer has been resolved to single tokens of one model.
struct BoundTask {
  TaskSpec spec;
  TokenIds label_tokens;

  std::size_t num_labels() const { return label_tokens.size(); }
};

inline BoundTask bind(const TaskSpec& task, const LanguageModel& model) {
  validate(task);
  const auto specials = model.special_tokens();
  BoundTask bound{task, {}};
  for (const auto& entry : task.verbalizer) {
    const auto ids = model.tokenize(entry.word);
    const bool special =
        ids.size() == 1 && std::find(specials.begin(), specials.end(), ids[0]) != specials.end();
    if (ids.size() != 1 || special)
      throw TaskSpecError("task '" + task.id + "': label word '" + entry.word +
                          "' is not a single vocabulary token");
    bound.label_tokens.push_back(ids[0]);
  }
  return bound;
}

inline std::vector<TaskSpec> builtin_tasks() {
  return {
      TaskSpec{"sst2",
               "{x} It was",
               {{"positive", "positive"}, {"negative", "negative"}},
               "This is a movie review",
               // "cinima" kept for compatibility with existing word lists; "cinema" added alongside
               {"movie", "film", "cinima", "cinema", "director", "positive", "negative"}},
      TaskSpec{"amazon",
               "{x} It was",
               {{"positive", "positive"}, {"negative", "negative"}},
               "This is an Amazon product review",
               {"book", "amazon", "product", "furniture", "positive", "negative"}},
      TaskSpec{"agnews",
               "{x} It is about",
               {{"politics", "politics"},
                {"sports", "sports"},
                {"business", "business"},
                {"technology", "technology"}},
               "This is a news",
               {"topic", "category", "politics", "sports", "business", "technology"}},
  };
}

inline TaskSpec builtin_task(std::string_view id) {
  for (auto& t : builtin_tasks())
    if (t.id == id) return t;
  throw TaskSpecError("unknown builtin task '" + std::string(id) + "'");
}

inline nlohmann::ordered_json to_json(const TaskSpec& task) {
  nlohmann::ordered_json verbalizer = nlohmann::ordered_json::array();
  for (const auto& v : task.verbalizer) verbalizer.push_back({{"label", v.label}, {"word", v.word}});
  return {{"id", task.id},
          {"template", task.template_text},
          {"verbalizer", verbalizer},
          {"domain_string", task.domain_string},
          {"domain_words", task.domain_words}};
}

/// Accepts the verbalizer either as [{"label":..,"word":..}, ...] or as an
/// object {"label": "word", ...} whose key order is the label order.
inline TaskSpec task_from_json(const nlohmann::ordered_json& j) {
  try {
    TaskSpec task;
    task.id = j.at("id").get<std::string>();
    task.template_text = j.at("template").get<std::string>();
    const auto& verbalizer = j.at("verbalizer");
    if (verbalizer.is_array()) {
      for (const auto& e : verbalizer)
        task.verbalizer.push_back({e.at("label").get<std::string>(), e.at("word").get<std::string>()});
    } else if (verbalizer.is_object()) {
      for (const auto& [label, word] : verbalizer.items())
        task.verbalizer.push_back({label, word.get<std::string>()});
    } else {
      throw TaskSpecError("verbalizer must be an array or an object");
    }
    task.domain_string = j.at("domain_string").get<std::string>();
    if (j.contains("domain_words"))
      for (const auto& w : j.at("domain_words")) task.domain_words.push_back(to_lower(w.get<std::string>()));
    validate(task);
    return task;
  } catch (const nlohmann::json::exception& e) {
    throw TaskSpecError(std::string("malformed task file: ") + e.what());
  }
}

inline TaskSpec load_task_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TaskSpecError("cannot open task file " + path);
  try {
    return task_from_json(nlohmann::ordered_json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw TaskSpecError("task file " + path + ": " + e.what());
  }
}

/// One JSON object per line with "text" and an optional "label" (label name or
/// integer index). Blank lines are skipped; line numbers count from 1.
inline std::vector<Example> parse_jsonl(std::istream& in, const TaskSpec& task) {
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(lineno);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + ": invalid JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw DataError(where + ": expected a JSON object");
    if (!obj.contains("text") || !obj["text"].is_string())
      throw DataError(where + ": missing string field 'text'");
    Example ex{obj["text"].get<std::string>(), std::nullopt};
    if (obj.contains("label") && !obj["label"].is_null()) {
      const auto& label = obj["label"];
      if (label.is_string()) {
        auto idx = task.label_index(label.get<std::string>());
        if (!idx) throw DataError(where + ": unknown label '" + label.get<std::string>() + "'");
        ex.label = *idx;
      } else if (label.is_number_integer()) {
        const auto idx = label.get<long long>();
        if (idx < 0 || static_cast<std::size_t>(idx) >= task.num_labels())
          throw DataError(where + ": label index " + std::to_string(idx) + " out of range");
        ex.label = static_cast<std::size_t>(idx);
      } else {
        throw DataError(where + ": label must be a string or an integer");
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<Example> load_dataset(const std::string& path, const TaskSpec& task) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path);
  return parse_jsonl(in, task);
}

inline bool all_labeled(std::span<const Example> data) {
  return std::all_of(data.begin(), data.end(), [](const Example& e) { return e.label.has_value(); });
}

}  // namespace dprompt
