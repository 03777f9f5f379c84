#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tcr/config.hpp"
#include "tcr/experiment.hpp"
#include "tcr/metrics.hpp"

using namespace tcr;
using namespace tcr::experiment;

namespace {

const std::string kCdnow = std::string(TCR_DATA_DIR) + "/cdnow/CDNOW_master.txt";

PipelineConfig small_synthetic(std::vector<std::string> extra = {}) {
  std::vector<std::string> o{"split.pool=40", "batches=[20]", "cluster.k_max=4", "threads=1", "classifier.rounds=40"};
  o.insert(o.end(), extra.begin(), extra.end());
  return from_json(config::parse_text("{}", o));
}

/// Mean of the rmse column of a per-series CSV.
double csv_mean(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  double s = 0.0;
  int n = 0;
  while (std::getline(in, line)) {
    s += std::stod(line.substr(line.find(',') + 1));
    ++n;
  }
  return s / n;
}

}  // namespace

TEST(Topology, ArchetypesSeparated) {
  int separated = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto lab = synth::archetype_log({}, seed);
    const auto grid = ingest::PeriodGrid::covering(lab.log, 7);
    const auto rfm = ingest::rfm_series(lab.log, grid, lab.users);
    const auto topo = topological_rfm_clusters(rfm, {}, seed);
    ASSERT_EQ(topo.input.clusterings.size(), 3u);
    bool all = true;
    for (const auto& c : topo.input.clusterings) all = all && adjusted_rand_index(c.labels, lab.truth) >= 0.3;
    separated += all;
  }
  EXPECT_GE(separated, 8);
}

TEST(Topology, IdenticalUsersGiveOneCluster) {
  std::vector<ingest::EventRecord> recs;
  const Date start = *Date::from_ymd(2020, 1, 6);
  for (int u = 0; u < 15; ++u) {
    for (int w = 0; w < 30; w += 3) recs.push_back({"u" + std::to_string(u), start + 7 * w, 1, 5.0});
  }
  const auto log = ingest::EventLog::from_records(recs);
  const auto grid = ingest::PeriodGrid::covering(log, 7);
  const auto topo = topological_rfm_clusters(ingest::rfm_series(log, grid, log.users()), {}, 2);
  ASSERT_EQ(topo.input.clusterings.size(), 3u);
  for (const auto& c : topo.input.clusterings) EXPECT_EQ(c.k, 1);
}

TEST(Topology, TooFewUsers) {
  const auto log = ingest::EventLog::from_records({{"a", *Date::from_ymd(2020, 1, 1), 1, 1.0}});
  const auto grid = ingest::PeriodGrid::covering(log, 7);
  EXPECT_THROW(topological_rfm_clusters(ingest::rfm_series(log, grid, log.users()), {}, 1), Error);
}

TEST(Merge, SmallClustersFolded) {
  const auto c = merge_small_clusters(Clustering::compact(std::vector<int>{0, 0, 0, 1, 2, 2, 2, 2}), 2);
  EXPECT_EQ(c.k, 2);
  EXPECT_EQ(c.labels[3], c.labels[4]);
}

TEST(Plan, FullScaleSplits) {
  const auto cfg = from_json(config::parse_text("{}"));
  const auto grid = ingest::PeriodGrid::covering(*Date::from_ymd(1997, 1, 1), *Date::from_ymd(1998, 6, 30), 7);
  const Plan p = make_plan(cfg, grid, 23570, 0);
  EXPECT_EQ(p.scale, 1.0);
  EXPECT_EQ(p.pool, 2000u);
  EXPECT_EQ(p.clusterwise, 1400u);
  EXPECT_EQ(p.classifier_test, 600u);
  EXPECT_EQ(p.batches, (std::vector<std::size_t>{600, 3000, 7000}));
  EXPECT_EQ(p.train_periods, static_cast<int>(0.7 * grid.num_periods));
}

TEST(Plan, ScaledDown) {
  const auto cfg = from_json(config::parse_text("{}", std::vector<std::string>{"batches=[3000]"}));
  const auto grid = ingest::PeriodGrid::covering(*Date::from_ymd(1997, 1, 1), *Date::from_ymd(1998, 6, 30), 7);
  const Plan p = make_plan(cfg, grid, 1000, 0);
  EXPECT_DOUBLE_EQ(p.scale, 0.2);
  EXPECT_EQ(p.pool, 400u);
  EXPECT_EQ(p.clusterwise, 280u);
  EXPECT_EQ(p.batches, (std::vector<std::size_t>{600}));
  EXPECT_THROW(make_plan(cfg, grid, 100, 0), Error);
}

TEST(Split, DisjointAndSeeded) {
  const auto cfg = from_json(config::parse_text("{}"));
  const auto grid = ingest::PeriodGrid::covering(*Date::from_ymd(2020, 1, 1), *Date::from_ymd(2021, 1, 1), 7);
  const Plan p = make_plan(cfg, grid, 9000, 0);
  std::vector<std::string> ids;
  for (int i = 0; i < 9000; ++i) ids.push_back(synth::user_name(static_cast<std::size_t>(i)));
  const auto a = split_users(p, ids, 4), b = split_users(p, ids, 4), c = split_users(p, ids, 5);
  EXPECT_EQ(a.order, b.order);
  EXPECT_NE(a.order, c.order);
  std::set<std::string> seen(a.clusterwise.begin(), a.clusterwise.end());
  for (const auto& id : a.classifier_test) EXPECT_TRUE(seen.insert(id).second);
  for (const auto& id : a.batch(p.pool, 7000)) EXPECT_TRUE(seen.insert(id).second);
  EXPECT_EQ(seen.size(), 9000u);
}

TEST(Split, LeakDetected) {
  const auto cfg = from_json(config::parse_text("{}"));
  const auto grid = ingest::PeriodGrid::covering(*Date::from_ymd(2020, 1, 6), *Date::from_ymd(2020, 12, 28), 7);
  const Plan p = make_plan(cfg, grid, 9000, 0);
  const Date eval = grid.period_start(p.train_periods);
  const auto clean = ingest::EventLog::from_records({{"a", eval + (-1), 1, 1.0}});
  EXPECT_NO_THROW(assert_no_leak(p, p.train_periods, p.train_periods, clean));
  const auto dirty = ingest::EventLog::from_records({{"a", eval, 1, 1.0}});
  EXPECT_THROW(assert_no_leak(p, p.train_periods, p.train_periods, dirty), Error);
  EXPECT_THROW(assert_no_leak(p, p.train_periods + 1, p.train_periods, clean), Error);
}

TEST(Pipeline, SyntheticGridArity) {
  const auto rep = run_pipeline(small_synthetic());
  ASSERT_EQ(rep.rows.size(), 6u);
  int all_data = 0;
  for (const auto& r : rep.rows) {
    EXPECT_EQ(r.status, "ok") << r.key();
    EXPECT_GT(r.evaluated, 0u);
    all_data += r.method == "All data";
  }
  EXPECT_EQ(all_data, 2);
  EXPECT_TRUE(rep.artifacts.count("labels.csv"));
  EXPECT_TRUE(rep.artifacts.count("forecasts.csv"));
}

TEST(Pipeline, RowsPerBatch) {
  const auto cfg = small_synthetic({"dataset.synthetic.users=160", "batches=[20,40,60]"});
  const auto rep = run_pipeline(cfg);
  int all_data = 0, clusterwise = 0;
  for (const auto& r : rep.rows) (r.method == "All data" ? all_data : clusterwise) += 1;
  EXPECT_EQ(clusterwise, 12);
  EXPECT_EQ(all_data, 6);
}

TEST(Pipeline, DeterministicAndMeansMatchFiles) {
  const auto cfg = small_synthetic({"seeds=[3]"});
  const auto a = run_pipeline(cfg), b = run_pipeline(cfg);
  EXPECT_EQ(report_csv(a), report_csv(b));
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(series_rmse_csv(a.rows[i]), series_rmse_csv(b.rows[i]));
    EXPECT_NEAR(a.rows[i].mean_rmse, csv_mean(series_rmse_csv(a.rows[i])), 1e-12);
  }
}

TEST(Pipeline, EmptyGrid) { EXPECT_TRUE(experiment_grid({}).rows.empty()); }

TEST(Pipeline, OnlyGlobalTrmf) {
  const auto rep = run_pipeline(small_synthetic({"backends=[\"trmf\"]", "ensemble.methods=[]"}));
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_EQ(rep.rows[0].model, "MF");
  EXPECT_EQ(rep.rows[0].method, "All data");
}

TEST(Pipeline, MissingDatasetIsDataError) {
  auto cfg = small_synthetic({"dataset.kind=\"cdnow\"", "dataset.path=\"/nonexistent/file.txt\""});
  try {
    run_pipeline(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::DataError);
  }
}

TEST(Pipeline, WritesReportFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "tcr_experiment_test";
  std::filesystem::remove_all(dir);
  const auto rep = run_pipeline(small_synthetic());
  write_report(rep, dir);
  for (const char* f : {"report.csv", "report.json", "timings.csv", "labels.csv", "forecasts.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "splits"));
  EXPECT_TRUE(std::filesystem::exists(dir / "diagrams"));
  EXPECT_EQ(io::read_file(dir / "report.csv").substr(0, 8), "dataset,");
  std::filesystem::remove_all(dir);
}

TEST(Pipeline, CdnowFullScaleManifest) {
  if (!std::filesystem::exists(kCdnow)) GTEST_SKIP() << "CDNow file not present";
  const auto cfg = from_json(config::parse_text(
      "{}", std::vector<std::string>{"dataset.kind=\"cdnow\"", "dataset.path=\"" + kCdnow + "\"", "plan_only=true"}));
  const auto rep = run_pipeline(cfg);
  EXPECT_TRUE(rep.rows.empty());
  ASSERT_EQ(rep.manifests.size(), 1u);
  const auto& m = rep.manifests[0];
  EXPECT_EQ(m["pool"], 2000);
  EXPECT_EQ(m["clusterwise"].size(), 1400u);
  EXPECT_EQ(m["classifier_test"].size(), 600u);
  EXPECT_EQ(m["batches"][0]["users"].size(), 600u);
  EXPECT_EQ(m["batches"][1]["users"].size(), 3000u);
  EXPECT_EQ(m["batches"][2]["users"].size(), 7000u);
}
