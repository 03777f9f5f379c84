#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcr/error.hpp"
#include "tcr/io.hpp"

namespace tcr::config {

using nlohmann::json;

/// Every accepted key with its default. A user config may only contain keys
/// present here, with values of the same JSON type.
inline json defaults() {
  return json::parse(R"({
    "dataset": {
      "name": "",
      "kind": "synthetic",
      "path": "",
      "value": "quantity",
      "subsample": 0,
      "subsample_seed": 0,
      "synthetic": {
        "users": 60,
        "always_on_fraction": 0.5,
        "days": 546,
        "seed": 7
      }
    },
    "period_length": 7,
    "tda": {"window": 4, "stride": 1, "max_scale": 0.0},
    "cluster": {"k_min": 1, "k_max": 6, "restarts": 10, "max_iter": 300},
    "ensemble": {"methods": ["gmm_vote", "gmm_pair"], "k_max": 0, "reference": 0, "n_init": 5},
    "backends": ["trmf", "theta"],
    "all_data": true,
    "trmf": {
      "d": 8, "p": 4,
      "lambda_f": 0.5, "lambda_z": 0.5, "lambda_phi": 0.1,
      "eta_z": 0.9, "eta_f": 0.0,
      "max_sweeps": 50, "tol": 1e-5
    },
    "clusterwise": {"max_rounds": 10, "tol": 1e-6},
    "classifier": {"rounds": 200, "depth": 3, "rate": 0.1},
    "split": {"pool": 2000, "clusterwise_fraction": 0.7, "temporal_fraction": 0.7},
    "batches": [600, 3000, 7000],
    "seeds": [1],
    "threads": 0,
    "plan_only": false,
    "out": "out"
  })");
}

namespace detail {

inline bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    // Integers may not silently become fractions.
    return !(a.is_number_integer() && b.is_number_float());
  }
  return a.type() == b.type();
}

inline std::string kind_name(const json& v) {
  if (v.is_number_integer()) return "integer";
  return v.type_name();
}

inline void check(const json& schema, const json& user, const std::string& prefix) {
  if (!user.is_object()) fail(ErrorCategory::ConfigError, "`" + prefix + "` must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!schema.contains(it.key())) fail(ErrorCategory::ConfigError, "unknown key `" + key + "`");
    const json& want = schema.at(it.key());
    if (!same_kind(want, it.value())) {
      fail(ErrorCategory::ConfigError,
           "key `" + key + "` expects " + kind_name(want) + ", got " + kind_name(it.value()));
    }
    if (want.is_object()) check(want, it.value(), key);
  }
}

inline void merge(json& base, const json& user) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (it.value().is_object()) {
      merge(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

}  // namespace detail

/// Applies one `dotted.key=value` override. The value is read as JSON when it
/// parses, otherwise as a plain string.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    fail(ErrorCategory::ConfigError, "override `" + assignment + "` is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  const json schema = defaults();
  const json* node = &schema;
  json* target = &cfg;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) fail(ErrorCategory::ConfigError, "unknown key `" + key + "`");
    node = &node->at(part);
    if (dot == std::string::npos) {
      if (!detail::same_kind(*node, value)) {
        fail(ErrorCategory::ConfigError,
             "key `" + key + "` expects " + detail::kind_name(*node) + ", got " + detail::kind_name(value));
      }
      (*target)[part] = value;
      return;
    }
    target = &(*target)[part];
    start = dot + 1;
  }
}

/// Strictly validated config: defaults, then the file, then the overrides.
inline json parse(const json& user, std::span<const std::string> overrides = {}) {
  const json schema = defaults();
  detail::check(schema, user, "");
  json cfg = schema;
  detail::merge(cfg, user);
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

inline json parse_text(const std::string& text, std::span<const std::string> overrides = {}) {
  json user = json::parse(text, nullptr, false);
  if (user.is_discarded()) fail(ErrorCategory::ConfigError, "config is not valid JSON");
  return parse(user, overrides);
}

inline json parse_file(const std::filesystem::path& path, std::span<const std::string> overrides = {}) {
  if (!std::filesystem::exists(path)) fail(ErrorCategory::ConfigError, "config file " + path.string() + " not found");
  return parse_text(io::read_file(path), overrides);
}

/// Hash of the canonical (key-sorted, compact) effective config.
inline std::string config_hash(const json& cfg) { return io::hex64(io::fnv1a(cfg.dump())); }

}  // namespace tcr::config
