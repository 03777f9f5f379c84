#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcr/cluster.hpp"
#include "tcr/clustering.hpp"
#include "tcr/clusterwise.hpp"
#include "tcr/config.hpp"
#include "tcr/ensemble.hpp"
#include "tcr/error.hpp"
#include "tcr/gbdt.hpp"
#include "tcr/ingest.hpp"
#include "tcr/io.hpp"
#include "tcr/metrics.hpp"
#include "tcr/parallel.hpp"
#include "tcr/synth.hpp"
#include "tcr/tda.hpp"
#include "tcr/theta.hpp"
#include "tcr/trmf.hpp"

namespace tcr::experiment {

using nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

enum class Method { gmm_vote, gmm_pair };

inline std::string method_name(Method m) { return m == Method::gmm_vote ? "GMM_Vote" : "GMM_Pair"; }
inline std::string model_name(clusterwise::Backend b) { return b == clusterwise::Backend::trmf ? "MF" : "Theta"; }

struct PipelineConfig {
  std::string dataset_name;
  std::string dataset_kind = "synthetic";  // cdnow | generic_csv | synthetic
  std::string dataset_path;
  ingest::DemandValue value = ingest::DemandValue::quantity;
  std::size_t subsample = 0;
  std::uint64_t subsample_seed = 0;
  synth::CloudConfig synthetic{};
  std::uint64_t synthetic_seed = 7;

  int period_length = 7;
  std::size_t window = 4;
  std::size_t stride = 1;
  double max_scale = 0.0;  // 0: enclosing radius of each cloud
  int k_min = 1;
  int k_max = 6;
  int kmeans_restarts = 10;
  int kmeans_max_iter = 300;

  std::vector<Method> methods{Method::gmm_vote, Method::gmm_pair};
  int ensemble_k_max = 0;
  std::size_t reference = 0;
  int gmm_n_init = 5;
  std::vector<clusterwise::Backend> backends{clusterwise::Backend::trmf, clusterwise::Backend::theta};
  bool all_data = true;
  trmf::Hyper hyper{};
  int clusterwise_max_rounds = 10;
  double clusterwise_tol = 1e-6;
  gbdt::Options classifier{};

  std::size_t pool = 2000;
  double clusterwise_fraction = 0.7;
  double temporal_fraction = 0.7;
  std::vector<std::size_t> batches{600, 3000, 7000};
  std::vector<std::uint64_t> seeds{1};
  int threads = 0;
  bool plan_only = false;
  std::string out = "out";

  json effective;  // the validated config this was built from

  int thread_count() const { return threads > 0 ? threads : default_threads(); }
};

inline PipelineConfig from_json(const json& cfg) {
  PipelineConfig p;
  p.effective = cfg;
  const json& ds = cfg.at("dataset");
  p.dataset_kind = ds.at("kind").get<std::string>();
  if (p.dataset_kind != "cdnow" && p.dataset_kind != "generic_csv" && p.dataset_kind != "synthetic") {
    fail(ErrorCategory::ConfigError, "dataset.kind must be cdnow, generic_csv or synthetic");
  }
  p.dataset_path = ds.at("path").get<std::string>();
  p.dataset_name = ds.at("name").get<std::string>();
  if (p.dataset_name.empty()) p.dataset_name = p.dataset_kind == "cdnow" ? "CDNow" : p.dataset_kind;
  const std::string value = ds.at("value").get<std::string>();
  if (value == "quantity") {
    p.value = ingest::DemandValue::quantity;
  } else if (value == "amount") {
    p.value = ingest::DemandValue::amount;
  } else {
    fail(ErrorCategory::ConfigError, "dataset.value must be quantity or amount");
  }
  p.subsample = ds.at("subsample").get<std::size_t>();
  p.subsample_seed = ds.at("subsample_seed").get<std::uint64_t>();
  const json& sy = ds.at("synthetic");
  p.synthetic.users = sy.at("users").get<std::size_t>();
  p.synthetic.always_on_fraction = sy.at("always_on_fraction").get<double>();
  p.synthetic.days = sy.at("days").get<int>();
  p.synthetic_seed = sy.at("seed").get<std::uint64_t>();

  p.period_length = cfg.at("period_length").get<int>();
  p.window = cfg.at("tda").at("window").get<std::size_t>();
  p.stride = cfg.at("tda").at("stride").get<std::size_t>();
  p.max_scale = cfg.at("tda").at("max_scale").get<double>();
  p.k_min = cfg.at("cluster").at("k_min").get<int>();
  p.k_max = cfg.at("cluster").at("k_max").get<int>();
  p.kmeans_restarts = cfg.at("cluster").at("restarts").get<int>();
  p.kmeans_max_iter = cfg.at("cluster").at("max_iter").get<int>();

  p.methods.clear();
  for (const auto& m : cfg.at("ensemble").at("methods")) {
    const auto s = m.get<std::string>();
    if (s == "gmm_vote") {
      p.methods.push_back(Method::gmm_vote);
    } else if (s == "gmm_pair") {
      p.methods.push_back(Method::gmm_pair);
    } else {
      fail(ErrorCategory::ConfigError, "unknown ensemble method `" + s + "`");
    }
  }
  p.ensemble_k_max = cfg.at("ensemble").at("k_max").get<int>();
  p.reference = cfg.at("ensemble").at("reference").get<std::size_t>();
  p.gmm_n_init = cfg.at("ensemble").at("n_init").get<int>();
  p.backends.clear();
  for (const auto& b : cfg.at("backends")) {
    const auto s = b.get<std::string>();
    if (s == "trmf") {
      p.backends.push_back(clusterwise::Backend::trmf);
    } else if (s == "theta") {
      p.backends.push_back(clusterwise::Backend::theta);
    } else {
      fail(ErrorCategory::ConfigError, "unknown backend `" + s + "`");
    }
  }
  p.all_data = cfg.at("all_data").get<bool>();
  p.hyper = trmf::hyper_from_json(cfg.at("trmf"));
  p.clusterwise_max_rounds = cfg.at("clusterwise").at("max_rounds").get<int>();
  p.clusterwise_tol = cfg.at("clusterwise").at("tol").get<double>();
  p.classifier.rounds = cfg.at("classifier").at("rounds").get<int>();
  p.classifier.max_depth = cfg.at("classifier").at("depth").get<int>();
  p.classifier.learning_rate = cfg.at("classifier").at("rate").get<double>();
  p.pool = cfg.at("split").at("pool").get<std::size_t>();
  p.clusterwise_fraction = cfg.at("split").at("clusterwise_fraction").get<double>();
  p.temporal_fraction = cfg.at("split").at("temporal_fraction").get<double>();
  p.batches = cfg.at("batches").get<std::vector<std::size_t>>();
  p.seeds = cfg.at("seeds").get<std::vector<std::uint64_t>>();
  p.threads = cfg.at("threads").get<int>();
  p.plan_only = cfg.at("plan_only").get<bool>();
  p.out = cfg.at("out").get<std::string>();

  auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!in_unit(p.clusterwise_fraction) || !in_unit(p.temporal_fraction)) {
    fail(ErrorCategory::ConfigError, "split fractions must lie in (0, 1)");
  }
  if (p.batches.empty() || std::find(p.batches.begin(), p.batches.end(), 0u) != p.batches.end()) {
    fail(ErrorCategory::ConfigError, "batch sizes must be positive");
  }
  if (p.seeds.empty()) fail(ErrorCategory::ConfigError, "at least one seed is required");
  if (p.period_length < 1) fail(ErrorCategory::ConfigError, "period_length must be positive");
  if (p.window < 1 || p.stride < 1) fail(ErrorCategory::ConfigError, "tda window and stride must be positive");
  if (p.k_min < 1 || p.k_max < p.k_min) fail(ErrorCategory::ConfigError, "cluster k range is empty");
  if (p.pool < 10 * static_cast<std::size_t>(p.k_max)) {
    fail(ErrorCategory::ConfigError, "pool of " + std::to_string(p.pool) + " is smaller than 10 x k_max");
  }
  return p;
}

inline ingest::EventLog load_dataset(const PipelineConfig& cfg) {
  if (cfg.dataset_kind == "synthetic") return synth::cloud_log(cfg.synthetic, cfg.synthetic_seed).log;
  if (cfg.dataset_path.empty() || !std::filesystem::exists(cfg.dataset_path)) {
    fail(ErrorCategory::DataError, "dataset path `" + cfg.dataset_path + "` does not exist");
  }
  return ingest::read_event_log(
      cfg.dataset_path, cfg.dataset_kind == "cdnow" ? ingest::LogFormat::cdnow : ingest::LogFormat::generic_csv);
}

// ---------------------------------------------------------------------------
// Topological RFM

struct TopoOptions {
  std::size_t window = 4;
  std::size_t stride = 1;
  double max_scale = 0.0;
  int k_min = 1;
  int k_max = 6;
  cluster::ElbowOptions elbow{};
  int threads = 1;
};

struct TopoResult {
  ensemble::EnsembleInput input;            // R, F, M clusterings
  std::array<Eigen::MatrixXd, 3> features;  // raw N x 10 per dimension
  std::array<cluster::ElbowResult, 3> elbow;
};

/// Barcode features of one series under the configured scale cap.
inline tda::TopoFeatureVector topo_features(std::span<const double> s, const TopoOptions& opt) {
  if (opt.max_scale <= 0.0) return tda::series_topo_features(s, opt.window, opt.stride);
  const auto cloud = tda::delay_embed(s, opt.window, opt.stride);
  return tda::barcode_features(tda::barcode(tda::rips_persistence(cloud, opt.max_scale, 1)), opt.max_scale);
}

/// For each of recency, frequency and monetary: embed every user's series,
/// summarize its barcode, standardize, pick k by the elbow and cluster.
inline TopoResult topological_rfm_clusters(const ingest::RFMSeriesSet& users, const TopoOptions& opt,
                                           std::uint64_t seed) {
  const std::size_t n = users.series.size();
  if (n < 10) fail(ErrorCategory::CardinalityError, "topological RFM needs at least 10 users");
  TopoResult out;
  for (int dim = 0; dim < 3; ++dim) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(tda::TopoFeatureVector::kSize));
    parallel_for(n, opt.threads, [&](std::size_t i) {
      const auto& u = users.series[i];
      const auto& s = dim == 0 ? u.recency : dim == 1 ? u.frequency : u.monetary;
      const auto f = topo_features(s, opt);
      for (std::size_t k = 0; k < f.values.size(); ++k) {
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = f.values[k];
      }
    });
    const Eigen::MatrixXd z = cluster::standardize(x);
    const std::uint64_t s = derive_seed(seed, 0x52464d00ULL + static_cast<std::uint64_t>(dim));
    const int k_max = std::min<int>(opt.k_max, static_cast<int>(n));
    auto elbow = cluster::elbow_select(z, std::min(opt.k_min, k_max), k_max, s, opt.elbow);
    auto fit = cluster::kmeans_best_of(z, elbow.k, derive_seed(s, static_cast<std::uint64_t>(elbow.k)),
                                       opt.elbow.restarts, opt.elbow.max_iter, opt.elbow.tol);
    out.input.clusterings.push_back(std::move(fit.clustering));
    out.features[static_cast<std::size_t>(dim)] = std::move(x);
    out.elbow[static_cast<std::size_t>(dim)] = std::move(elbow);
  }
  return out;
}

/// Folds every cluster smaller than `min_size` into the largest cluster and
/// renumbers.
inline Clustering merge_small_clusters(const Clustering& c, int min_size) {
  Clustering out = Clustering::compact(c.labels);
  while (out.k > 1) {
    const auto sizes = out.cluster_sizes();
    const auto largest = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    int small = -1;
    for (int l = 0; l < out.k; ++l) {
      if (static_cast<int>(sizes[static_cast<std::size_t>(l)]) < min_size) {
        small = l;
        break;
      }
    }
    if (small < 0) break;
    for (int& l : out.labels) {
      if (l == small) l = largest;
    }
    out = Clustering::compact(out.labels);
  }
  return out;
}

inline TopoOptions topo_options(const PipelineConfig& cfg) {
  TopoOptions t;
  t.window = cfg.window;
  t.stride = cfg.stride;
  t.max_scale = cfg.max_scale;
  t.k_min = cfg.k_min;
  t.k_max = cfg.k_max;
  t.elbow.restarts = cfg.kmeans_restarts;
  t.elbow.max_iter = cfg.kmeans_max_iter;
  t.threads = cfg.thread_count();
  return t;
}

inline ensemble::Consensus run_consensus(const PipelineConfig& cfg, Method method, const ensemble::EnsembleInput& in,
                                         std::uint64_t seed) {
  ensemble::ConsensusOptions copt;
  copt.k_max = cfg.ensemble_k_max;
  copt.reference = cfg.reference;
  copt.gmm.n_init = cfg.gmm_n_init;
  return method == Method::gmm_vote ? ensemble::gmm_voting(in, seed, copt) : ensemble::gmm_pair(in, seed, copt);
}

inline clusterwise::Options clusterwise_options(const PipelineConfig& cfg, clusterwise::Backend backend) {
  clusterwise::Options opt;
  opt.backend = backend;
  opt.hyper = cfg.hyper;
  opt.max_rounds = cfg.clusterwise_max_rounds;
  opt.tol = cfg.clusterwise_tol;
  opt.threads = cfg.thread_count();
  return opt;
}

// ---------------------------------------------------------------------------
// Splits

struct Plan {
  int periods = 0;
  int train_periods = 0;
  ingest::PeriodGrid grid;
  double scale = 1.0;
  std::size_t eligible = 0;
  std::size_t no_history = 0;
  std::size_t pool = 0;
  std::size_t clusterwise = 0;
  std::size_t classifier_test = 0;
  std::vector<std::size_t> batches;         // scaled
  std::vector<std::size_t> nominal_batches;   // as configured
};

/// Scales pool and batches by min(1, eligible / (pool + largest batch)).
inline Plan make_plan(const PipelineConfig& cfg, const ingest::PeriodGrid& grid, std::size_t eligible,
                      std::size_t no_history) {
  Plan p;
  p.grid = grid;
  p.periods = grid.num_periods;
  p.train_periods = static_cast<int>(std::floor(cfg.temporal_fraction * grid.num_periods));
  p.train_periods = std::clamp(p.train_periods, 1, grid.num_periods - 1);
  p.eligible = eligible;
  p.no_history = no_history;
  const std::size_t largest = *std::max_element(cfg.batches.begin(), cfg.batches.end());
  const double need = static_cast<double>(cfg.pool + largest);
  p.scale = std::min(1.0, static_cast<double>(eligible) / need);
  auto scaled = [&](std::size_t v) { return static_cast<std::size_t>(std::floor(static_cast<double>(v) * p.scale + 1e-9)); };
  p.pool = scaled(cfg.pool);
  p.clusterwise = static_cast<std::size_t>(std::llround(cfg.clusterwise_fraction * static_cast<double>(p.pool)));
  p.classifier_test = p.pool - p.clusterwise;
  p.nominal_batches = cfg.batches;
  for (auto b : cfg.batches) p.batches.push_back(std::max<std::size_t>(1, scaled(b)));
  if (p.pool < 10 * static_cast<std::size_t>(cfg.k_max)) {
    fail(ErrorCategory::ConfigError, "scaled pool of " + std::to_string(p.pool) + " is smaller than 10 x k_max");
  }
  return p;
}

struct CellSplit {
  std::vector<std::string> clusterwise, classifier_test;
  std::vector<std::string> order;  // eligible users, shuffled; batches follow the pool
  std::vector<std::string> batch(std::size_t pool, std::size_t size) const {
    return {order.begin() + static_cast<std::ptrdiff_t>(pool),
            order.begin() + static_cast<std::ptrdiff_t>(pool + size)};
  }
};

inline CellSplit split_users(const Plan& plan, std::vector<std::string> eligible, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x73706c6974ULL));
  rng.shuffle(std::span<std::string>(eligible));
  CellSplit s;
  s.order = std::move(eligible);
  s.clusterwise.assign(s.order.begin(), s.order.begin() + static_cast<std::ptrdiff_t>(plan.clusterwise));
  s.classifier_test.assign(s.order.begin() + static_cast<std::ptrdiff_t>(plan.clusterwise),
                           s.order.begin() + static_cast<std::ptrdiff_t>(plan.pool));
  return s;
}

/// Throws unless every training period precedes every evaluation period and
/// no training event falls on or after the evaluation start.
inline void assert_no_leak(const Plan& plan, Eigen::Index train_rows, Eigen::Index eval_first_row,
                           const ingest::EventLog& train_log) {
  const Date eval_start = plan.grid.period_start(plan.train_periods);
  if (train_rows != plan.train_periods || eval_first_row != plan.train_periods) {
    fail(ErrorCategory::DataError, "temporal split leak: training rows overlap the evaluation window");
  }
  for (const auto& r : train_log.records) {
    if (!(r.date < eval_start)) fail(ErrorCategory::DataError, "temporal split leak: training event on " + r.date.iso());
  }
}

// ---------------------------------------------------------------------------
// Report

struct Row {
  std::string dataset, model, method;
  std::size_t batch = 0;      // series in the cell (pool + unlabeled batch)
  std::size_t unlabeled = 0;  // scaled unlabeled batch size
  std::size_t nominal_batch = 0;
  std::uint64_t seed = 0;
  double mean_rmse = 0.0;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;
  std::string status = "ok";
  double runtime_s = 0.0;
  std::vector<std::string> series_ids;
  std::vector<double> series_rmse;
  json details = json::object();

  std::string key() const {
    std::string m = method;
    std::replace(m.begin(), m.end(), ' ', '_');
    return dataset + "_" + model + "_" + m + "_" + std::to_string(batch) + "_seed" + std::to_string(seed);
  }
};

struct Report {
  std::vector<Row> rows;
  json provenance = json::object();
  json manifests = json::array();
  /// Extra artifacts: relative path -> content.
  std::map<std::string, std::string> artifacts;

  void append(Report other) {
    for (auto& r : other.rows) rows.push_back(std::move(r));
    for (auto& m : other.manifests) manifests.push_back(std::move(m));
    for (auto& [k, v] : other.artifacts) artifacts[k] = std::move(v);
  }
};

inline std::string report_csv(const Report& r) {
  std::string out = "dataset,model,method,batch,unlabeled,seed,rmse,evaluated,excluded,status\n";
  for (const auto& row : r.rows) {
    out += row.dataset + "," + row.model + "," + row.method + "," + std::to_string(row.batch) + "," +
           std::to_string(row.unlabeled) + "," + std::to_string(row.seed) + "," + io::num(row.mean_rmse) + "," +
           std::to_string(row.evaluated) + "," + std::to_string(row.excluded) + "," + row.status + "\n";
  }
  return out;
}

inline std::string series_rmse_csv(const Row& row) {
  std::string out = "user_id,rmse\n";
  for (std::size_t i = 0; i < row.series_ids.size(); ++i) out += row.series_ids[i] + "," + io::num(row.series_rmse[i]) + "\n";
  return out;
}

inline json report_json(const Report& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"dataset", row.dataset},
                    {"model", row.model},
                    {"method", row.method},
                    {"batch", row.batch},
                    {"unlabeled", row.unlabeled},
                    {"nominal_batch", row.nominal_batch},
                    {"seed", row.seed},
                    {"mean_rmse", row.mean_rmse},
                    {"evaluated", row.evaluated},
                    {"excluded", row.excluded},
                    {"status", row.status},
                    {"runtime_s", row.runtime_s},
                    {"series_rmse_file", "series_rmse/" + row.key() + ".csv"},
                    {"details", row.details}});
  }
  return {{"provenance", r.provenance}, {"rows", rows}};
}

inline void write_report(const Report& r, const std::filesystem::path& dir) {
  io::write_atomic(dir / "report.csv", report_csv(r));
  io::write_atomic(dir / "report.json", report_json(r).dump(2) + "\n");
  std::string timings = "key,runtime_s\n";
  for (const auto& row : r.rows) {
    timings += row.key() + "," + io::num(row.runtime_s) + "\n";
    io::write_atomic(dir / "series_rmse" / (row.key() + ".csv"), series_rmse_csv(row));
  }
  io::write_atomic(dir / "timings.csv", timings);
  for (const auto& m : r.manifests) {
    io::write_atomic(dir / "splits" / (m.at("name").get<std::string>() + ".json"), m.dump(1) + "\n");
  }
  for (const auto& [rel, content] : r.artifacts) io::write_atomic(dir / rel, content);
}

/// Long format `period,user_id,value`; `first_period` numbers the first row.
inline std::string forecasts_csv(const Eigen::MatrixXd& fc, std::span<const std::string> ids, int first_period) {
  std::string out = "period,user_id,value\n";
  for (Eigen::Index t = 0; t < fc.rows(); ++t) {
    for (Eigen::Index i = 0; i < fc.cols(); ++i) {
      out += std::to_string(first_period + t) + "," + ids[static_cast<std::size_t>(i)] + "," + io::num(fc(t, i)) + "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

/// The configured user subsample. A zero subsample_seed draws a different
/// subsample for each run seed.
inline ingest::EventLog subsample_log(const PipelineConfig& cfg, const ingest::EventLog& full, std::uint64_t seed) {
  if (cfg.subsample == 0) return full;
  auto users = full.users();
  if (cfg.subsample >= users.size()) return full;
  Rng rng(cfg.subsample_seed != 0 ? cfg.subsample_seed : derive_seed(seed, 0x737562ULL));
  rng.shuffle(std::span<std::string>(users));
  users.resize(cfg.subsample);
  std::sort(users.begin(), users.end());
  return ingest::filter_users(full, users);
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Prepared {
  ingest::EventLog log;
  ingest::EventLog train_log;
  ingest::DemandMatrix demand;
  std::map<std::string, Eigen::Index> column;
  std::vector<std::string> eligible;
  Plan plan;
};

inline Prepared prepare(const PipelineConfig& cfg, const ingest::EventLog& full, std::uint64_t seed) {
  Prepared p;
  p.log = subsample_log(cfg, full, seed);
  const auto grid = ingest::PeriodGrid::covering(p.log, cfg.period_length);
  p.demand = ingest::aggregate_demand(p.log, grid, cfg.value);
  for (std::size_t i = 0; i < p.demand.user_ids.size(); ++i) {
    p.column.emplace(p.demand.user_ids[i], static_cast<Eigen::Index>(i));
  }
  const int t_train = std::clamp(static_cast<int>(std::floor(cfg.temporal_fraction * grid.num_periods)), 1,
                                 grid.num_periods - 1);
  p.train_log = ingest::filter_before(p.log, grid.period_start(t_train));
  const auto with_history = p.train_log.users();
  p.eligible = with_history;
  p.plan = make_plan(cfg, grid, with_history.size(), p.demand.user_ids.size() - with_history.size());
  return p;
}

inline std::vector<int> columns_of(const Prepared& p, const std::vector<std::string>& ids) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(static_cast<int>(p.column.at(id)));
  return out;
}

/// Per-series RMSE of forecasts (h x n) against the evaluation tails.
inline void score_rows(Row& row, const std::vector<std::string>& ids, const SeriesMatrix& tails,
                       const Eigen::MatrixXd& forecasts) {
  row.series_ids.clear();
  row.series_rmse.clear();
  for (Eigen::Index i = 0; i < tails.series(); ++i) {
    std::vector<double> actual, predicted;
    for (Eigen::Index t = 0; t < tails.periods(); ++t) {
      if (!tails.observed(t, i)) continue;
      actual.push_back(tails.values(t, i));
      predicted.push_back(forecasts(t, i));
    }
    if (actual.empty()) {
      ++row.excluded;
      continue;
    }
    row.series_ids.push_back(ids[static_cast<std::size_t>(i)]);
    row.series_rmse.push_back(rmse(actual, predicted));
  }
  row.evaluated = row.series_rmse.size();
  double s = 0.0;
  for (double v : row.series_rmse) s += v;
  row.mean_rmse = row.evaluated ? s / static_cast<double>(row.evaluated) : 0.0;
}

inline Eigen::MatrixXd theta_forecasts(const SeriesMatrix& heads, int h, int threads) {
  Eigen::MatrixXd out(h, heads.series());
  parallel_for(static_cast<std::size_t>(heads.series()), threads, [&](std::size_t i) {
    const auto fc = theta::forecast(heads.column(static_cast<Eigen::Index>(i)), h);
    for (int t = 0; t < h; ++t) out(t, static_cast<Eigen::Index>(i)) = fc[static_cast<std::size_t>(t)];
  });
  return out;
}

inline json manifest(const PipelineConfig& cfg, const Prepared& p, const CellSplit& s, std::uint64_t seed) {
  json batches = json::array();
  for (std::size_t b = 0; b < p.plan.batches.size(); ++b) {
    batches.push_back({{"nominal_size", p.plan.nominal_batches[b]},
                       {"size", p.plan.batches[b]},
                       {"users", s.batch(p.plan.pool, p.plan.batches[b])}});
  }
  return {{"name", cfg.dataset_name + "_seed" + std::to_string(seed)},
          {"dataset", cfg.dataset_name},
          {"seed", seed},
          {"periods", p.plan.periods},
          {"train_periods", p.plan.train_periods},
          {"train_end", p.plan.grid.period_start(p.plan.train_periods).iso()},
          {"eval_start", p.plan.grid.period_start(p.plan.train_periods).iso()},
          {"scale", p.plan.scale},
          {"eligible", p.plan.eligible},
          {"no_history", p.plan.no_history},
          {"nominal_pool", cfg.pool},
          {"pool", p.plan.pool},
          {"clusterwise_size", p.plan.clusterwise},
          {"classifier_test_size", p.plan.classifier_test},
          {"clusterwise", s.clusterwise},
          {"classifier_test", s.classifier_test},
          {"batches", batches}};
}

}  // namespace detail

/// Runs every row of the protocol for one seed.
inline Report run_cell(const PipelineConfig& cfg, const ingest::EventLog& full, std::uint64_t seed) {
  const auto t_cell = detail::Clock::now();
  const int threads = cfg.thread_count();
  Report rep;
  const detail::Prepared prep = detail::prepare(cfg, full, seed);
  const Plan& plan = prep.plan;
  if (plan.pool + *std::max_element(plan.batches.begin(), plan.batches.end()) > prep.eligible.size()) {
    fail(ErrorCategory::ConfigError, "not enough series with history for the pool and batches");
  }
  const CellSplit split = split_users(plan, prep.eligible, seed);
  rep.manifests.push_back(detail::manifest(cfg, prep, split, seed));
  if (cfg.plan_only) return rep;

  const int T_train = plan.train_periods;
  const int h = plan.periods - T_train;
  const SeriesMatrix& all = prep.demand.series;
  assert_no_leak(plan, all.head(T_train).periods(), T_train, prep.train_log);

  auto base_row = [&](const std::string& model, const std::string& method, std::size_t b) {
    Row r;
    r.dataset = cfg.dataset_name;
    r.model = model;
    r.method = method;
    r.unlabeled = plan.batches[b];
    r.batch = plan.pool + plan.batches[b];
    r.nominal_batch = cfg.pool + plan.nominal_batches[b];
    r.seed = seed;
    return r;
  };

  // Settings (1) and (2): one model over every series in the cell.
  if (cfg.all_data) {
    for (std::size_t b = 0; b < plan.batches.size(); ++b) {
      std::vector<std::string> ids(split.order.begin(),
                                   split.order.begin() + static_cast<std::ptrdiff_t>(plan.pool + plan.batches[b]));
      const auto cols = detail::columns_of(prep, ids);
      const SeriesMatrix y = all.columns(cols);
      const SeriesMatrix heads = y.head(T_train), tails = y.tail_from(T_train);
      for (auto backend : cfg.backends) {
        const auto t0 = detail::Clock::now();
        Row row = base_row(model_name(backend), "All data", b);
        try {
          Eigen::MatrixXd fc;
          if (backend == clusterwise::Backend::trmf) {
            const auto m = trmf::fit(heads, cfg.hyper, derive_seed(seed, 0x616c6cULL), {}, threads);
            fc = trmf::forecast(m, h);
            row.details["sweeps"] = m.sweeps;
          } else {
            fc = detail::theta_forecasts(heads, h, threads);
          }
          detail::score_rows(row, ids, tails, fc);
        } catch (const Error& e) {
          row.status = std::string("error:") + std::string(to_string(e.category()));
        }
        row.runtime_s = detail::seconds_since(t0);
        rep.rows.push_back(std::move(row));
      }
    }
  }

  if (cfg.methods.empty() || cfg.backends.empty()) return rep;

  // Settings (3)-(6): topological RFM on the clusterwise users, consensus,
  // clusterwise fit, classifier, then the unlabeled batches.
  const auto t_topo = detail::Clock::now();
  const auto train_grid = plan.grid.head(T_train);
  const auto rfm = ingest::rfm_series(prep.train_log, train_grid, split.clusterwise);
  const TopoResult topo = topological_rfm_clusters(rfm, topo_options(cfg), derive_seed(seed, 0x746f706fULL));
  const double topo_s = detail::seconds_since(t_topo);
  if (seed == cfg.seeds.front()) {
    for (std::size_t u = 0; u < std::min<std::size_t>(3, rfm.series.size()); ++u) {
      const char* names[3] = {"R", "F", "M"};
      for (int dim = 0; dim < 3; ++dim) {
        const auto& s = dim == 0 ? rfm.series[u].recency : dim == 1 ? rfm.series[u].frequency : rfm.series[u].monetary;
        const auto cloud = tda::delay_embed(s, cfg.window, cfg.stride);
        const double radius = tda::enclosing_radius(cloud);
        const auto bc = radius > 0 ? tda::barcode(tda::rips_persistence(cloud, radius, 1)) : tda::Barcode{};
        rep.artifacts["diagrams/" + cfg.dataset_name + "_" + rfm.series[u].user_id + "_" + names[dim] + ".csv"] =
            tda::diagram_csv(bc);
      }
    }
  }

  const auto cw_cols = detail::columns_of(prep, split.clusterwise);
  const SeriesMatrix cw_heads = all.columns(cw_cols).head(T_train);
  const auto test_cols = detail::columns_of(prep, split.classifier_test);
  const SeriesMatrix test_heads = all.columns(test_cols).head(T_train);
  const auto recipe = clusterwise::make_recipe(cw_heads, cfg.window, cfg.stride);
  const Eigen::MatrixXd cw_features = clusterwise::feature_matrix(recipe, cw_heads, threads);
  const Eigen::MatrixXd test_features = clusterwise::feature_matrix(recipe, test_heads, threads);

  for (Method method : cfg.methods) {
    const auto t_ens = detail::Clock::now();
    const std::uint64_t eseed = derive_seed(seed, method == Method::gmm_vote ? 0x766f7465ULL : 0x70616972ULL);
    const auto consensus = run_consensus(cfg, method, topo.input, eseed);
    const double ens_s = detail::seconds_since(t_ens);
    if (seed == cfg.seeds.front()) {
      rep.artifacts["labels_" + method_name(method) + ".csv"] = ensemble::consensus_csv(consensus, split.clusterwise);
      if (!rep.artifacts.count("labels.csv")) {
        rep.artifacts["labels.csv"] = ensemble::consensus_csv(consensus, split.clusterwise);
      }
    }

    for (auto backend : cfg.backends) {
      const auto t_fit = detail::Clock::now();
      std::vector<Row> rows;
      for (std::size_t b = 0; b < plan.batches.size(); ++b) rows.push_back(base_row(model_name(backend), method_name(method), b));
      try {
        const clusterwise::Options opt = clusterwise_options(cfg, backend);
        const Clustering init =
            merge_small_clusters(consensus.clustering, clusterwise::min_cluster_size(backend, cfg.hyper));
        const std::uint64_t fseed = derive_seed(eseed, static_cast<std::uint64_t>(backend));
        const auto model = clusterwise::fit(cw_heads, init, opt, fseed);

        std::optional<gbdt::Classifier> clf;
        double test_acc = 1.0;
        if (model.clusters() > 1) {
          clf = clusterwise::train_label_classifier(cw_features, model.partition, recipe, fseed, cfg.classifier);
          // Held-out series are scored against their best-fitting cluster.
          int correct = 0;
          for (Eigen::Index i = 0; i < test_heads.series(); ++i) {
            const auto col = test_heads.column(i);
            const auto mask = test_heads.column_mask(i);
            std::unique_ptr<bool[]> m(new bool[mask.size()]);
            for (std::size_t t = 0; t < mask.size(); ++t) m[t] = mask[t];
            int best = 0;
            double best_err = 0.0;
            for (int c = 0; c < model.clusters(); ++c) {
              const double e = clusterwise::score_series_under_cluster(model, c, col, {m.get(), mask.size()});
              if (c == 0 || e < best_err) {
                best_err = e;
                best = c;
              }
            }
            correct += clf->predict(test_features.row(i)) == best;
          }
          test_acc = test_heads.series() ? static_cast<double>(correct) / static_cast<double>(test_heads.series()) : 1.0;
        }
        const double fit_s = detail::seconds_since(t_fit);
        for (std::size_t b = 0; b < plan.batches.size(); ++b) {
          const auto t_eval = detail::Clock::now();
          const auto ids = split.batch(plan.pool, plan.batches[b]);
          const SeriesMatrix y = all.columns(detail::columns_of(prep, ids));
          const auto assigned =
              clusterwise::assign_and_forecast(model, clf ? &*clf : nullptr, recipe, y.head(T_train), h, threads);
          Row& row = rows[b];
          detail::score_rows(row, ids, y.tail_from(T_train), assigned.forecasts);
          row.runtime_s = topo_s + ens_s + fit_s + detail::seconds_since(t_eval);
          std::vector<int> sizes;
          for (auto s : model.partition.cluster_sizes()) sizes.push_back(static_cast<int>(s));
          row.details = {{"consensus_k", consensus.clustering.k},
                         {"clusters", model.clusters()},
                         {"cluster_sizes", sizes},
                         {"base_k", {topo.input.clusterings[0].k, topo.input.clusterings[1].k,
                                     topo.input.clusterings[2].k}},
                         {"clusterwise_rounds", model.objective_trace.size() - 1},
                         {"stop_reason", model.stop_reason},
                         {"vetoed_moves", model.vetoed_moves},
                         {"objective_trace", model.objective_trace},
                         {"classifier_train_accuracy", clf ? clf->training_accuracy : 1.0},
                         {"classifier_test_accuracy", test_acc}};
          if (seed == cfg.seeds.front() && b + 1 == plan.batches.size()) {
            rep.artifacts["assignments/" + row.key() + ".csv"] = clusterwise::assignment_csv(assigned, ids);
            if (!rep.artifacts.count("forecasts.csv")) {
              rep.artifacts["forecasts.csv"] = forecasts_csv(assigned.forecasts, ids, T_train);
            }
          }
        }
      } catch (const Error& e) {
        for (auto& row : rows) row.status = std::string("error:") + std::string(to_string(e.category()));
      }
      for (auto& row : rows) rep.rows.push_back(std::move(row));
    }
  }
  (void)t_cell;
  return rep;
}

/// Clustering and model fitting over the whole history of every user, used by
/// the stand-alone subcommands. Stages run up to `upto`.
enum class Stage { topology, consensus, clusterwise };

struct HistoryFit {
  ingest::PeriodGrid grid;
  std::vector<std::string> ids;
  SeriesMatrix y;
  ingest::RFMSeriesSet rfm;
  TopoResult topo;
  std::optional<ensemble::Consensus> consensus;
  std::optional<clusterwise::Model> model;
};

inline HistoryFit fit_history(const PipelineConfig& cfg, const ingest::EventLog& full, std::uint64_t seed,
                              Stage upto) {
  HistoryFit h;
  const ingest::EventLog log = subsample_log(cfg, full, seed);
  h.grid = ingest::PeriodGrid::covering(log, cfg.period_length);
  auto demand = ingest::aggregate_demand(log, h.grid, cfg.value);
  h.ids = std::move(demand.user_ids);
  h.y = std::move(demand.series);
  h.rfm = ingest::rfm_series(log, h.grid, h.ids);
  h.topo = topological_rfm_clusters(h.rfm, topo_options(cfg), derive_seed(seed, 0x746f706fULL));
  if (upto == Stage::topology) return h;
  const Method method = cfg.methods.empty() ? Method::gmm_vote : cfg.methods.front();
  const std::uint64_t eseed = derive_seed(seed, method == Method::gmm_vote ? 0x766f7465ULL : 0x70616972ULL);
  h.consensus = run_consensus(cfg, method, h.topo.input, eseed);
  if (upto == Stage::consensus) return h;
  const auto backend = cfg.backends.empty() ? clusterwise::Backend::trmf : cfg.backends.front();
  const Clustering init = merge_small_clusters(h.consensus->clustering, clusterwise::min_cluster_size(backend, cfg.hyper));
  h.model = clusterwise::fit(h.y, init, clusterwise_options(cfg, backend), derive_seed(eseed, static_cast<std::uint64_t>(backend)));
  return h;
}

/// Forecasts `horizon` periods past the history, each series with the model
/// of its own cluster.
inline Eigen::MatrixXd forecast_history(const HistoryFit& h, int horizon) {
  if (!h.model) fail(ErrorCategory::FitError, "no clusterwise model");
  const auto& m = *h.model;
  Eigen::MatrixXd out(horizon, h.y.series());
  if (m.backend == clusterwise::Backend::theta) {
    return detail::theta_forecasts(h.y, horizon, 1);
  }
  for (int c = 0; c < m.clusters(); ++c) {
    const auto members = m.partition.members(c);
    const Eigen::MatrixXd fc = trmf::forecast(m.cluster_models[static_cast<std::size_t>(c)], horizon);
    for (std::size_t j = 0; j < members.size(); ++j) out.col(members[j]) = fc.col(static_cast<Eigen::Index>(j));
  }
  return out;
}

inline json model_json(const clusterwise::Model& m, std::span<const std::string> ids) {
  json clusters = json::array();
  for (const auto& cm : m.cluster_models) clusters.push_back(trmf::to_json(cm));
  return {{"kind", "clusterwise"},
          {"backend", clusterwise::to_string(m.backend)},
          {"seed", m.seed},
          {"series", std::vector<std::string>(ids.begin(), ids.end())},
          {"labels", m.partition.labels},
          {"objective_trace", m.objective_trace},
          {"stop_reason", m.stop_reason},
          {"cluster_models", clusters}};
}

inline json provenance(const PipelineConfig& cfg) {
  return {{"config_hash", config::config_hash(cfg.effective)},
          {"version", kVersion},
          {"compiler", __VERSION__},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"config", cfg.effective}};
}

/// The protocol for every configured seed. A failing seed is recorded as an
/// error row and the remaining seeds still run.
inline Report run_pipeline(const PipelineConfig& cfg) {
  Report rep;
  rep.provenance = provenance(cfg);
  const ingest::EventLog full = load_dataset(cfg);
  for (auto seed : cfg.seeds) {
    try {
      rep.append(run_cell(cfg, full, seed));
    } catch (const Error& e) {
      Row r;
      r.dataset = cfg.dataset_name;
      r.model = "-";
      r.method = "-";
      r.seed = seed;
      r.status = std::string("error:") + std::string(to_string(e.category()));
      rep.rows.push_back(std::move(r));
    }
  }
  return rep;
}

inline Report experiment_grid(const std::vector<PipelineConfig>& cfgs) {
  Report rep;
  json prov = json::array();
  for (const auto& c : cfgs) {
    Report r = run_pipeline(c);
    prov.push_back(r.provenance);
    rep.append(std::move(r));
  }
  rep.provenance = {{"cells", prov}};
  return rep;
}

/// Plot data: RFM score histograms as of the last event date.
inline std::string rfm_histogram_csv(const ingest::EventLog& log) {
  const auto scoring = ingest::rfm_scores(log, log.last);
  std::array<std::array<int, 5>, 3> counts{};
  for (const auto& [id, s] : scoring.scores) {
    ++counts[0][static_cast<std::size_t>(s.r - 1)];
    ++counts[1][static_cast<std::size_t>(s.f - 1)];
    ++counts[2][static_cast<std::size_t>(s.m - 1)];
  }
  std::string out = "dimension,score,count\n";
  const char* names[3] = {"recency", "frequency", "monetary"};
  for (int d = 0; d < 3; ++d) {
    for (int s = 0; s < 5; ++s) out += std::string(names[d]) + "," + std::to_string(s + 1) + "," + std::to_string(counts[d][s]) + "\n";
  }
  return out;
}

}  // namespace tcr::experiment
