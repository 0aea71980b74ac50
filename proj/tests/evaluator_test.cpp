#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "support/temp_dir.hpp"
#include "wdae/config.hpp"
#include "wdae/errors.hpp"
#include "wdae/evaluator.hpp"
#include "wdae/trainer.hpp"

using namespace wdae;

namespace {

struct Fixture {
  FeatureDataset data;
  ClassifierWeights weights;
  WdaeModel model;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    SyntheticConfig sc;
    sc.seed = 8;
    sc.cluster_spread = 0.25;
    FeatureDataset ds = generate_synthetic(sc);
    PretrainConfig pc;
    pc.epochs = 5;
    ClassifierWeights w = pretrain_base(ds, pc);
    ModelConfig mc;
    mc.dim = ds.dim;
    mc.hidden_width = 32;
    TrainConfig tc;
    tc.epochs = 2;
    tc.episodes_per_epoch = 20;
    TrainResult r = train(ds, w, mc, {}, tc);
    return Fixture{std::move(ds), std::move(w), std::move(r.model)};
  }();
  return f;
}

EvalConfig small_eval() {
  EvalConfig ec;
  ec.ways = 5;
  ec.episodes = 20;
  ec.queries_per_class = 5;
  ec.seed = 3;
  return ec;
}

void expect_same_metrics(const EvalReport& a, const EvalReport& b) {
  ASSERT_EQ(a.episodes.size(), b.episodes.size());
  for (std::size_t i = 0; i < a.episodes.size(); ++i) EXPECT_EQ(a.episodes[i], b.episodes[i]) << "episode " << i;
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (const auto& [key, m] : a.metrics) {
    EXPECT_EQ(m.mean, b.metrics.at(key).mean) << key;
    EXPECT_EQ(m.halfwidth, b.metrics.at(key).halfwidth) << key;
  }
}

}  // namespace

TEST(AggregateMetrics, HandComputedHalfWidths) {
  const std::vector<double> two{0.0, 1.0};
  const MetricSummary m = aggregate_metrics(two);
  EXPECT_EQ(m.mean, 0.5);
  EXPECT_NEAR(m.halfwidth, 1.96 * std::sqrt(0.5) / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(m.halfwidth, 0.980, 1e-3);
  const std::vector<double> flat{0.5, 0.5, 0.5};
  EXPECT_EQ(aggregate_metrics(flat).halfwidth, 0.0);
  EXPECT_EQ(aggregate_metrics(flat).mean, 0.5);
  const std::vector<double> one{0.7};
  EXPECT_EQ(aggregate_metrics(one).halfwidth, 0.0);
  EXPECT_EQ(aggregate_metrics(one).count, 1u);
  EXPECT_THROW((void)aggregate_metrics(std::span<const double>{}), ConfigError);
}

TEST(AggregateMetrics, PermutationInvariant) {
  Rng rng(1);
  std::vector<double> v(50);
  for (double& x : v) x = static_cast<double>(rng.index(16)) / 15.0;
  const MetricSummary ref = aggregate_metrics(v);
  for (int t = 0; t < 10; ++t) {
    rng.shuffle(v);
    const MetricSummary m = aggregate_metrics(v);
    EXPECT_NEAR(m.mean, ref.mean, 1e-15);
    EXPECT_NEAR(m.halfwidth, ref.halfwidth, 1e-15);
  }
}

TEST(RunEval, ZeroStepMatchesAClosedGateModel) {
  const Fixture& f = fixture();
  EvalConfig zero = small_eval();
  zero.epsilon = 0.0;
  WdaeModel closed = f.model.clone();
  auto bias = closed.final_layer().update.bias.mutable_data();
  for (std::size_t k = f.data.dim; k < 2 * f.data.dim; ++k) bias[k] = -100.0;
  expect_same_metrics(run_eval(f.data, f.weights, f.model, zero), run_eval(f.data, f.weights, closed, small_eval()));
  const EvalReport r = run_eval(f.data, f.weights, f.model, zero);
  EXPECT_EQ(r.metrics.at("novel_top1").mean, r.metrics.at("novel_top1_initial").mean);
  EXPECT_EQ(r.metrics.at("novel_top1_gain").mean, 0.0);
}

TEST(RunEval, SingleWayWithEveryShotIsPerfect) {
  const Fixture& f = fixture();
  EvalConfig ec;
  ec.ways = 1;
  ec.shots = 45;
  ec.queries_per_class = 15;
  ec.episodes = 1;
  const EvalReport r = run_eval(f.data, f.weights, f.model, ec);
  EXPECT_EQ(r.metrics.at("novel_top1").mean, 1.0);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(RunEval, IndependentOfScheduleAndOrder) {
  const Fixture& f = fixture();
  EvalConfig one = small_eval();
  EvalConfig many = one;
  many.jobs = 4;
  const EvalReport a = run_eval(f.data, f.weights, f.model, one);
  expect_same_metrics(a, run_eval(f.data, f.weights, f.model, many));
  for (std::size_t i = a.episodes.size(); i-- > 0;) {
    EXPECT_EQ(run_episode(f.data, f.weights, f.model, one, i), a.episodes[i]);
  }
  EXPECT_EQ(a.config_digest, run_eval(f.data, f.weights, f.model, many).config_digest);
}

TEST(RunEval, SeedChangesEpisodes) {
  const Fixture& f = fixture();
  EvalConfig other = small_eval();
  other.seed = 4;
  EXPECT_NE(run_eval(f.data, f.weights, f.model, small_eval()).episodes,
            run_eval(f.data, f.weights, f.model, other).episodes);
}

TEST(RunEval, MetricsStayInRange) {
  const Fixture& f = fixture();
  EvalConfig ec = small_eval();
  ec.topk = {1, 3};
  ec.shots = 2;
  const EvalReport r = run_eval(f.data, f.weights, f.model, ec);
  for (const char* key : {"novel_top1", "novel_top3", "novel_top1_initial", "novel_top3_initial"}) {
    ASSERT_TRUE(r.metrics.count(key)) << key;
    EXPECT_GE(r.metrics.at(key).mean, 0.0);
    EXPECT_LE(r.metrics.at(key).mean, 1.0);
    EXPECT_EQ(r.metrics.at(key).count, 20u);
  }
  EXPECT_GE(r.metrics.at("novel_top3").mean, r.metrics.at("novel_top1").mean);
}

TEST(RunEval, UnifiedBaseAndNovelEvaluation) {
  const Fixture& f = fixture();
  EvalConfig ec = small_eval();
  ec.include_base = true;
  const EvalReport r = run_eval(f.data, f.weights, f.model, ec);
  for (const char* key : {"all_top1", "all_top1_initial", "all_top1_gain", "novel_top1"}) {
    EXPECT_TRUE(r.metrics.count(key)) << key;
  }
  EXPECT_GT(r.metrics.at("all_top1").mean, 0.0);
}

TEST(RunEval, AllWaysUsesTheWholeSplit) {
  const Fixture& f = fixture();
  EvalConfig ec = small_eval();
  ec.ways.reset();
  ec.episodes = 2;
  EXPECT_NO_THROW((void)run_eval(f.data, f.weights, f.model, ec));
}

TEST(RunEval, BadRequestsAreRejected) {
  const Fixture& f = fixture();
  EvalConfig ec = small_eval();
  ec.topk = {6};
  EXPECT_THROW((void)run_eval(f.data, f.weights, f.model, ec), ConfigError);
  ec = small_eval();
  ec.ways = 31;
  EXPECT_THROW((void)run_eval(f.data, f.weights, f.model, ec), SamplingError);
  ec = small_eval();
  ec.shots = 60;
  EXPECT_THROW((void)run_eval(f.data, f.weights, f.model, ec), SamplingError);
  ec = small_eval();
  ec.episodes = 0;
  EXPECT_THROW((void)run_eval(f.data, f.weights, f.model, ec), ConfigError);
}

TEST(Reports, TableKeyValueAndCsv) {
  const Fixture& f = fixture();
  const EvalReport r = run_eval(f.data, f.weights, f.model, small_eval());
  std::ostringstream table, kv;
  write_report_table(table, r);
  write_report_kv(kv, r);
  EXPECT_NE(table.str().find("novel_top1"), std::string::npos);
  EXPECT_NE(kv.str().find("novel_top1.mean="), std::string::npos);
  EXPECT_NE(kv.str().find("novel_top1.ci95="), std::string::npos);
  EXPECT_NE(kv.str().find("novel_top1.episodes=20"), std::string::npos);
  EXPECT_NE(kv.str().find("config_digest=" + r.config_digest), std::string::npos);

  testing_support::TempDir dir;
  write_episode_csv(dir / "e.csv", r);
  const std::string csv = testing_support::read_file(dir / "e.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 21);
  EXPECT_EQ(csv.rfind("episode,novel_top1,novel_top1_initial\n", 0), 0u) << csv.substr(0, 60);
}

TEST(RunEval, RefinedAtLeastInitialOnSynthetic20Way1Shot) {
  RunConfig c = RunConfig::preset("synthetic");  // spread 0.1, 20-way 1-shot, 500 episodes
  c.set("seed", "1");
  const FeatureDataset ds = generate_synthetic(c.synthetic());
  const ClassifierWeights w = pretrain_base(ds, c.pretrain());
  const TrainResult trained = train(ds, w, c.model(ds.dim), c.episode(), c.train());
  const EvalReport r = run_eval(ds, w, trained.model, c.eval());
  EXPECT_GE(r.metrics.at("novel_top1").mean, r.metrics.at("novel_top1_initial").mean)
      << "refined " << r.metrics.at("novel_top1").mean << " initial " << r.metrics.at("novel_top1_initial").mean;
}
