// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#pragma once

#include <charconv>
#include <memory>
#include <string>
#include <string_view>

#include "dprompt/core.hpp"
#include "dprompt/lm_adapter.hpp"
#include "dprompt/reference_model.hpp"

namespace dprompt {

/// Resolves an adapter name such as "reference:7". Pretrained adapters plug in
/// here under their own prefix.
inline std::unique_ptr<LanguageModel> load_model(std::string_view spec) {
  constexpr std::string_view kReference = "reference";
  if (spec == kReference) return std::make_unique<ReferenceModel>(0);
  if (spec.starts_with("reference:")) {
    auto digits = spec.substr(kReference.size() + 1);
    std::uint64_t seed = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), seed);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || digits.empty())
      throw ConfigError("bad reference model seed in '" + std::string(spec) + "'");
    return std::make_unique<ReferenceModel>(seed);
  }
  throw ConfigError("unknown model adapter '" + std::string(spec) + "'");
}

}  // namespace dprompt
