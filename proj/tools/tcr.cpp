// Command-line front end. Every subcommand reads one JSON config plus dotted
// key=value overrides and writes its outputs under --out.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tcr/config.hpp"
#include "tcr/error.hpp"
#include "tcr/experiment.hpp"
#include "tcr/io.hpp"
#include "tcr/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tcr;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
  long long seed = -1;
  bool force = false;
  int verbosity = 0;
  int horizon = 0;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "JSON config file (defaults when omitted)");
  sub->add_option("-o,--out", c.out, "output directory (overrides the out key)");
  sub->add_option("--seed", c.seed, "run seed; replaces seeds and the synthetic generator seed");
  sub->add_flag("--force", c.force, "overwrite outputs of an identical earlier run");
  sub->add_flag("-v,--verbose", c.verbosity, "log progress to stderr (repeatable)");
  sub->add_option("overrides", c.overrides, "dotted key=value overrides");
}

json load_config(const Common& c) {
  std::vector<std::string> ov = c.overrides;
  if (c.seed >= 0) {
    ov.push_back("seeds=[" + std::to_string(c.seed) + "]");
    ov.push_back("dataset.synthetic.seed=" + std::to_string(c.seed));
  }
  if (!c.out.empty()) ov.push_back("out=" + json(c.out).dump());
  return c.config.empty() ? config::parse(json::object(), ov) : config::parse_file(c.config, ov);
}

void log(const Common& c, const std::string& msg) {
  if (c.verbosity > 0) std::cerr << "[tcr] " << msg << "\n";
}

/// True when `dir` already holds the outputs of this subcommand for this
/// config hash.
bool already_done(const fs::path& dir, const std::string& sub, const std::string& hash) {
  const fs::path stamp = dir / "run.json";
  if (!fs::exists(stamp)) return false;
  const json j = json::parse(io::read_file(stamp), nullptr, false);
  return !j.is_discarded() && j.value("subcommand", "") == sub && j.value("config_hash", "") == hash;
}

void stamp(const fs::path& dir, const std::string& sub, const json& cfg) {
  io::write_atomic(dir / "effective_config.json", cfg.dump(2) + "\n");
  io::write_atomic(dir / "run.json", json{{"subcommand", sub},
                                          {"config_hash", config::config_hash(cfg)},
                                          {"seeds", cfg.at("seeds")},
                                          {"version", experiment::kVersion}}
                                             .dump(2) +
                                         "\n");
}

std::string demand_csv(const experiment::HistoryFit& h) {
  std::string out = "period,user_id,value\n";
  for (Eigen::Index t = 0; t < h.y.periods(); ++t) {
    for (Eigen::Index i = 0; i < h.y.series(); ++i) {
      if (h.y.values(t, i) != 0.0) {
        out += std::to_string(t) + "," + h.ids[static_cast<std::size_t>(i)] + "," + io::num(h.y.values(t, i)) + "\n";
      }
    }
  }
  return out;
}

void write_diagrams(const fs::path& dir, const experiment::PipelineConfig& cfg, const ingest::RFMSeriesSet& rfm) {
  const char* names[3] = {"R", "F", "M"};
  for (std::size_t u = 0; u < std::min<std::size_t>(3, rfm.series.size()); ++u) {
    for (int d = 0; d < 3; ++d) {
      const auto& s = d == 0 ? rfm.series[u].recency : d == 1 ? rfm.series[u].frequency : rfm.series[u].monetary;
      const auto cloud = tda::delay_embed(s, cfg.window, cfg.stride);
      const double r = tda::enclosing_radius(cloud);
      const auto bc = r > 0 ? tda::barcode(tda::rips_persistence(cloud, r, 1)) : tda::Barcode{};
      io::write_atomic(dir / "diagrams" / (rfm.series[u].user_id + "_" + names[d] + ".csv"), tda::diagram_csv(bc));
    }
  }
}

void write_base_labels(const fs::path& dir, const experiment::HistoryFit& h) {
  std::string out = "object_id,recency,frequency,monetary\n";
  for (std::size_t i = 0; i < h.rfm.series.size(); ++i) {
    out += h.rfm.series[i].user_id;
    for (const auto& c : h.topo.input.clusterings) out += "," + std::to_string(c.labels[i]);
    out += "\n";
  }
  io::write_atomic(dir / "base_labels.csv", out);
  json elbow = json::array();
  for (const auto& e : h.topo.elbow) {
    elbow.push_back({{"k", e.k}, {"ks", e.ks}, {"inertia", e.inertia}, {"second_difference", e.second_difference}});
  }
  io::write_atomic(dir / "elbow.json", elbow.dump(2) + "\n");
}

int run(const std::string& sub, const Common& c) {
  const json cfg_json = load_config(c);
  const auto cfg = experiment::from_json(cfg_json);
  const fs::path dir = cfg.out;
  const std::string hash = config::config_hash(cfg_json);
  log(c, "config " + hash + "\n" + cfg_json.dump(2));
  if (!c.force && already_done(dir, sub, hash)) {
    std::cerr << "[tcr] outputs for config " << hash << " already in " << dir.string()
              << "; nothing written (use --force)\n";
    return 0;
  }
  const std::uint64_t seed = cfg.seeds.front();

  if (sub == "synth") {
    const auto labelled = synth::cloud_log(cfg.synthetic, cfg.synthetic_seed);
    io::write_atomic(dir / "events.csv", ingest::to_generic_csv(labelled.log));
    std::string truth = "user_id,archetype\n";
    for (std::size_t i = 0; i < labelled.users.size(); ++i) {
      truth += labelled.users[i] + "," + std::to_string(labelled.truth[i]) + "\n";
    }
    io::write_atomic(dir / "truth.csv", truth);
  } else if (sub == "experiment") {
    const auto report = experiment::run_pipeline(cfg);
    experiment::write_report(report, dir);
    log(c, std::to_string(report.rows.size()) + " report rows");
  } else {
    const ingest::EventLog full = experiment::load_dataset(cfg);
    log(c, std::to_string(full.records.size()) + " events");
    if (sub == "ingest") {
      const ingest::EventLog log_used = experiment::subsample_log(cfg, full, seed);
      experiment::HistoryFit h;
      h.grid = ingest::PeriodGrid::covering(log_used, cfg.period_length);
      auto demand = ingest::aggregate_demand(log_used, h.grid, cfg.value);
      h.ids = demand.user_ids;
      h.y = demand.series;
      io::write_atomic(dir / "demand.csv", demand_csv(h));
      const auto scoring = ingest::rfm_scores(log_used, log_used.last);
      std::string scores = "user_id,r,f,m\n";
      for (const auto& [id, s] : scoring.scores) {
        scores += id + "," + std::to_string(s.r) + "," + std::to_string(s.f) + "," + std::to_string(s.m) + "\n";
      }
      io::write_atomic(dir / "rfm_scores.csv", scores);
      io::write_atomic(dir / "rfm_hist.csv", experiment::rfm_histogram_csv(log_used));
      io::write_atomic(dir / "summary.json", json{{"records", log_used.records.size()},
                                                  {"users", h.ids.size()},
                                                  {"malformed_lines", full.malformed_lines},
                                                  {"first", log_used.first.iso()},
                                                  {"last", log_used.last.iso()},
                                                  {"periods", h.grid.num_periods}}
                                                     .dump(2) +
                                                 "\n");
    } else {
      const auto stage = sub == "cluster"    ? experiment::Stage::topology
                         : sub == "ensemble" ? experiment::Stage::consensus
                                             : experiment::Stage::clusterwise;
      const auto h = experiment::fit_history(cfg, full, seed, stage);
      write_base_labels(dir, h);
      write_diagrams(dir, cfg, h.rfm);
      if (h.consensus) io::write_atomic(dir / "labels.csv", ensemble::consensus_csv(*h.consensus, h.ids));
      if (h.model) {
        io::write_atomic(dir / "model.json", experiment::model_json(*h.model, h.ids).dump() + "\n");
        io::write_atomic(dir / "clusterwise_labels.csv", labels_csv(h.model->partition, h.ids));
      }
      if (sub == "forecast") {
        const int horizon =
            c.horizon > 0 ? c.horizon
                          : h.grid.num_periods - static_cast<int>(std::floor(cfg.temporal_fraction * h.grid.num_periods));
        io::write_atomic(dir / "forecasts.csv",
                         experiment::forecasts_csv(experiment::forecast_history(h, horizon), h.ids, h.grid.num_periods));
      }
    }
  }
  stamp(dir, sub, cfg_json);
  log(c, "wrote " + dir.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Topological RFM clustering and clusterwise forecasting"};
  app.require_subcommand(1);
  Common common;
  std::string chosen;
  const std::vector<std::pair<std::string, std::string>> subs = {
      {"ingest", "parse an event log; write demand, RFM scores and histogram data"},
      {"cluster", "per-dimension topological clusterings of every user"},
      {"ensemble", "consensus partition of the topological clusterings"},
      {"fit", "clusterwise model over the full history"},
      {"forecast", "fit, then forecast past the end of the history"},
      {"experiment", "the full evaluation protocol; writes the report"},
      {"synth", "generate a synthetic cloud-usage event log"},
  };
  for (const auto& [name, help] : subs) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, common);
    if (name == "forecast") sub->add_option("--horizon", common.horizon, "periods to forecast");
    sub->callback([&chosen, n = name] { chosen = n; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc != 0) {
      std::cerr << "error: " << to_string(ErrorCategory::ConfigError) << "\n";
      return exit_code(ErrorCategory::ConfigError);
    }
    return 0;
  }
  try {
    return run(chosen, common);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << to_string(ErrorCategory::ConfigError) << ": " << e.what() << "\n";
    return exit_code(ErrorCategory::ConfigError);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << to_string(ErrorCategory::IoError) << ": " << e.what() << "\n";
    return exit_code(ErrorCategory::IoError);
  }
}
