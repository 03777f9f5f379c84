#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "tcr/config.hpp"
#include "tcr/experiment.hpp"

using namespace tcr;

namespace {

std::string config_error(const std::string& text, std::vector<std::string> overrides = {}) {
  try {
    config::parse_text(text, overrides);
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::ConfigError);
    return e.what();
  }
  ADD_FAILURE() << "no error for " << text;
  return {};
}

}  // namespace

TEST(Config, MinimalGetsDefaults) {
  const auto cfg = config::parse_text(R"({"dataset": {"kind": "cdnow", "path": "x.txt"}})");
  EXPECT_EQ(cfg["tda"]["window"], 4);
  EXPECT_EQ(cfg["trmf"]["d"], 8);
  EXPECT_EQ(cfg["split"]["pool"], 2000);
  EXPECT_EQ(cfg["batches"], (std::vector<int>{600, 3000, 7000}));
  EXPECT_EQ(cfg["dataset"]["synthetic"]["users"], 60);
  const auto p = experiment::from_json(cfg);
  EXPECT_EQ(p.dataset_name, "CDNow");
  EXPECT_EQ(p.hyper.p, 4);
  EXPECT_EQ(p.classifier.rounds, 200);
  EXPECT_EQ(p.methods.size(), 2u);
}

TEST(Config, OverrideApplies) {
  const std::vector<std::string> o{"tda.window=6", "dataset.name=demo", "seeds=[3,4]"};
  const auto cfg = config::parse_text("{}", o);
  EXPECT_EQ(cfg["tda"]["window"], 6);
  EXPECT_EQ(cfg["dataset"]["name"], "demo");
  EXPECT_EQ(experiment::from_json(cfg).seeds, (std::vector<std::uint64_t>{3, 4}));
}

TEST(Config, UnknownKeyNamed) {
  EXPECT_NE(config_error(R"({"tda": {"windw": 5}})").find("`tda.windw`"), std::string::npos);
  EXPECT_NE(config_error("{}", {"tda.windw=5"}).find("`tda.windw`"), std::string::npos);
  EXPECT_NE(config_error(R"({"bogus": 1})").find("`bogus`"), std::string::npos);
}

TEST(Config, TypeMismatch) {
  EXPECT_NE(config_error(R"({"tda": {"window": "six"}})").find("tda.window"), std::string::npos);
  config_error(R"({"period_length": 1.5})");
  config_error("{}", {"all_data=3"});
  config_error("not json");
  config_error("{}", {"noequals"});
  // Integers are accepted where reals are expected.
  EXPECT_EQ(config::parse_text(R"({"trmf": {"lambda_f": 1}})")["trmf"]["lambda_f"], 1);
}

TEST(Config, SemanticChecks) {
  auto bad = [](const std::string& text) {
    try {
      experiment::from_json(config::parse_text(text));
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.category(), ErrorCategory::ConfigError) << text;
    }
  };
  bad(R"({"split": {"pool": 50}})");
  bad(R"({"split": {"clusterwise_fraction": 1.0}})");
  bad(R"({"batches": []})");
  bad(R"({"seeds": []})");
  bad(R"({"ensemble": {"methods": ["kmeans"]}})");
  bad(R"({"backends": ["arima"]})");
  bad(R"({"dataset": {"kind": "parquet"}})");
  bad(R"({"cluster": {"k_min": 4, "k_max": 2}})");
}

TEST(Config, HashIsStable) {
  const auto a = config::parse_text(R"({"seeds": [1]})");
  const auto b = config::parse_text("{}");
  EXPECT_EQ(config::config_hash(a), config::config_hash(b));
  const auto c = config::parse_text("{}", std::vector<std::string>{"seeds=[2]"});
  EXPECT_NE(config::config_hash(a), config::config_hash(c));
}
