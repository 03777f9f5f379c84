#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "tcr/date.hpp"
#include "tcr/error.hpp"
#include "tcr/ingest.hpp"
#include "tcr/rng.hpp"
#include "tcr/series.hpp"

namespace tcr::synth {

inline std::string user_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "u%05zu", i + 1);
  return buf;
}

/// Cloud-usage style log with two user archetypes. "Always-on" users book
/// small amounts nearly every day; "bursty" users book rarely but in large
/// blocks. quantity holds booked CPU-hours, amount the price.
struct CloudConfig {
  std::size_t users = 60;
  double always_on_fraction = 0.5;
  Date start = *Date::from_ymd(2017, 1, 1);
  int days = 546;
  double always_on_daily_rate = 0.85;
  double always_on_mean_hours = 3.0;
  double bursty_daily_rate = 0.03;
  double bursty_mean_hours = 40.0;
  double price_per_hour = 0.12;
};

struct LabelledLog {
  ingest::EventLog log;
  std::vector<std::string> users;
  std::vector<int> truth;  // archetype per user
};

inline LabelledLog cloud_log(const CloudConfig& cfg, std::uint64_t seed) {
  if (cfg.users == 0 || cfg.days < 2) fail(ErrorCategory::ConfigError, "synthetic log needs users and >= 2 days");
  Rng rng(seed);
  LabelledLog out;
  std::vector<ingest::EventRecord> recs;
  const auto always_on = static_cast<std::size_t>(std::round(cfg.always_on_fraction * static_cast<double>(cfg.users)));
  for (std::size_t u = 0; u < cfg.users; ++u) {
    const bool on = u < always_on;
    const std::string id = user_name(u);
    out.users.push_back(id);
    out.truth.push_back(on ? 0 : 1);
    // Users join at a random point in the first fifth of the window.
    const int join = static_cast<int>(rng.index(static_cast<std::uint64_t>(std::max(1, cfg.days / 5))));
    bool any = false;
    for (int d = join; d < cfg.days; ++d) {
      const double rate = on ? cfg.always_on_daily_rate : cfg.bursty_daily_rate;
      if (!rng.bernoulli(rate) && !(d == cfg.days - 1 && !any)) continue;
      const double mean = on ? cfg.always_on_mean_hours : cfg.bursty_mean_hours;
      const std::int64_t hours = 1 + rng.poisson(mean - 1.0);
      const double amount = std::round(static_cast<double>(hours) * cfg.price_per_hour * 100.0) / 100.0;
      recs.push_back({id, cfg.start + d, hours, amount});
      any = true;
    }
  }
  out.log = ingest::EventLog::from_records(std::move(recs));
  return out;
}

/// Three demand archetypes on a weekly grid: periodic (an event every four
/// weeks), bursty (a few dense bursts) and constant (an event every week).
struct ArchetypeConfig {
  std::size_t users_per_archetype = 20;
  Date start = *Date::from_ymd(2020, 1, 6);
  int weeks = 52;
};

inline LabelledLog archetype_log(const ArchetypeConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  LabelledLog out;
  std::vector<ingest::EventRecord> recs;
  std::size_t next = 0;
  for (int kind = 0; kind < 3; ++kind) {
    for (std::size_t u = 0; u < cfg.users_per_archetype; ++u) {
      const std::string id = user_name(next++);
      out.users.push_back(id);
      out.truth.push_back(kind);
      auto emit = [&](int week, double amount) {
        const int day = week * 7 + static_cast<int>(rng.index(7));
        recs.push_back({id, cfg.start + day, 1, std::round(amount * 100.0) / 100.0});
      };
      if (kind == 0) {
        const int phase = static_cast<int>(rng.index(4));
        for (int w = phase; w < cfg.weeks; w += 4) emit(w, rng.uniform(15.0, 25.0));
      } else if (kind == 1) {
        const int bursts = 2 + static_cast<int>(rng.index(2));
        for (int b = 0; b < bursts; ++b) {
          const int at = static_cast<int>(rng.index(static_cast<std::uint64_t>(std::max(1, cfg.weeks - 4))));
          for (int w = at; w < std::min(cfg.weeks, at + 3); ++w) {
            const int events = 2 + static_cast<int>(rng.index(3));
            for (int e = 0; e < events; ++e) emit(w, rng.uniform(40.0, 80.0));
          }
        }
      } else {
        for (int w = 0; w < cfg.weeks; ++w) emit(w, rng.uniform(9.0, 11.0));
      }
    }
  }
  out.log = ingest::EventLog::from_records(std::move(recs));
  return out;
}

/// Two groups of series, each driven by its own AR(1) latent factor.
struct TwoRegimeConfig {
  std::size_t series_per_regime = 20;
  int periods = 60;
  double phi_a = 0.9;
  double phi_b = -0.8;
  double innovation_sd = 1.0;
  double noise_sd = 0.05;
};

struct LabelledSeries {
  SeriesMatrix y;
  std::vector<int> truth;
  Eigen::MatrixXd factors;  // periods x 2
};

inline LabelledSeries two_regime(const TwoRegimeConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const int T = cfg.periods;
  Eigen::MatrixXd z(T, 2);
  const double phis[2] = {cfg.phi_a, cfg.phi_b};
  for (int r = 0; r < 2; ++r) {
    double v = rng.normal(0.0, cfg.innovation_sd / std::sqrt(1.0 - phis[r] * phis[r]));
    for (int t = 0; t < T; ++t) {
      if (t > 0) v = phis[r] * v + rng.normal(0.0, cfg.innovation_sd);
      z(t, r) = v;
    }
  }
  const auto n = static_cast<Eigen::Index>(2 * cfg.series_per_regime);
  Eigen::MatrixXd y(T, n);
  LabelledSeries out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int r = i < static_cast<Eigen::Index>(cfg.series_per_regime) ? 0 : 1;
    out.truth.push_back(r);
    const double load = rng.uniform(0.5, 1.5) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    for (int t = 0; t < T; ++t) y(t, i) = load * z(t, r) + rng.normal(0.0, cfg.noise_sd);
  }
  out.y = SeriesMatrix::dense(std::move(y));
  out.factors = std::move(z);
  return out;
}

}  // namespace tcr::synth
