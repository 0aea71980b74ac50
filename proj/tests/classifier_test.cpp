#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "support/oracles.hpp"
#include "support/temp_dir.hpp"
#include "wdae/classifier.hpp"
#include "wdae/errors.hpp"

using namespace wdae;
using oracle::Vec;

namespace {

ClassifierWeights unit_weights(const Vec& rows, std::size_t dim, double scale = 1.0) {
  ClassifierWeights w;
  w.dim = dim;
  w.rows = rows;
  w.scale = scale;
  for (std::size_t i = 0; i < rows.size() / dim; ++i) w.class_ids.push_back(static_cast<std::uint32_t>(100 + i));
  return w;
}

double training_accuracy(const FeatureDataset& ds, const ClassifierWeights& w, double holdout) {
  Vec feats;
  std::vector<std::size_t> labels;
  for (std::size_t r = 0; r < w.num_classes(); ++r) {
    const std::size_t ci = ds.index_of(w.class_ids[r]);
    for (std::size_t e = 0; e < training_count(ds.num_examples(ci), holdout); ++e) {
      auto v = ds.example(ci, e);
      feats.insert(feats.end(), v.begin(), v.end());
      labels.push_back(r);
    }
  }
  return topk_accuracy(score(Tensor::from({labels.size(), ds.dim}, feats), w), labels, 1);
}

FeatureDataset synthetic_base(std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.num_base = 20;
  cfg.num_novel_val = 1;
  cfg.num_novel_test = 1;
  cfg.seed = seed;
  return generate_synthetic(cfg);
}

}  // namespace

TEST(Score, OrthonormalAndAntipodal) {
  const ClassifierWeights w = unit_weights({1, 0, 0, 0, 1, 0}, 3);
  const Tensor s = score(Tensor::from({2, 3}, {2, 0, 0, -1, 0, 0}), w);
  EXPECT_EQ(s.at(0, 0), 1.0);
  EXPECT_EQ(s.at(0, 1), 0.0);
  EXPECT_EQ(s.at(1, 0), -1.0);
}

TEST(Score, ScaleMultipliesCosine) {
  const ClassifierWeights w = unit_weights({0.6, 0.8}, 2, 10.0);
  EXPECT_NEAR(score(Tensor::from({1, 2}, {3, 4}), w).item(), 10.0, 1e-12);
}

TEST(Score, InvariantToPositiveFeatureRescaling) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 2 + rng.index(10), n = 1 + rng.index(6), m = 1 + rng.index(5);
    const ClassifierWeights w = unit_weights(oracle::unit_rows(rng, n, d), d, 10.0);
    const Vec z = oracle::random_vec(rng, m * d);
    Vec z7 = z;
    for (double& v : z7) v *= 7.3;
    const Tensor a = score(Tensor::from({m, d}, z), w), b = score(Tensor::from({m, d}, z7), w);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-9);
    // Direct recomputation.
    for (std::size_t r = 0; r < m; ++r) {
      const Vec zn = oracle::normalized(Vec(z.begin() + r * d, z.begin() + (r + 1) * d));
      for (std::size_t c = 0; c < n; ++c) {
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += zn[k] * w.rows[c * d + k];
        EXPECT_NEAR(a.at(r, c), 10.0 * dot, 1e-9);
      }
    }
  }
}

TEST(Score, DimensionMismatchThrows) {
  EXPECT_THROW((void)score(Tensor::zeros({1, 3}), unit_weights({1, 0}, 2)), ShapeError);
}

TEST(Score, GradientsReachFeaturesAndWeights) {
  const ClassifierWeights w = unit_weights({1, 0, 0, 1}, 2);
  Tensor z = Tensor::from({1, 2}, {0.3, 0.9}, true);
  Tensor wt = w.as_tensor(true);
  sum(cosine_scores(z, wt, 1.0)).backward();
  EXPECT_GT(std::abs(z.grad()[0]) + std::abs(z.grad()[1]), 0.0);
  EXPECT_GT(std::abs(wt.grad()[0]) + std::abs(wt.grad()[1]), 0.0);
}

TEST(InitialEstimate, SingleExampleIsNormalized) {
  const ClassifierWeights base = unit_weights({1, 0, 0}, 3);
  const std::vector<NovelExamples> novel{{9, {0, 3, 4}}};
  const ClassifierWeights w = initial_estimate(novel, base);
  ASSERT_EQ(w.num_classes(), 2u);
  EXPECT_EQ(w.class_ids[1], 9u);
  EXPECT_NEAR(w.rows[4], 0.6, 1e-15);
  EXPECT_NEAR(w.rows[5], 0.8, 1e-15);
}

TEST(InitialEstimate, TwoOrthogonalExamplesAverage) {
  const ClassifierWeights base = unit_weights({0, 0, 1, 0}, 4);
  const std::vector<NovelExamples> novel{{9, {5, 0, 0, 0, 0, 0.5, 0, 0}}};
  const ClassifierWeights w = initial_estimate(novel, base);
  EXPECT_NEAR(w.rows[4], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(w.rows[5], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(w.rows[6], 0.0);
  EXPECT_EQ(w.rows[7], 0.0);
}

TEST(InitialEstimate, BaseRowsBitIdenticalAndNovelRowsUnit) {
  Rng rng(4);
  const std::size_t d = 16;
  const ClassifierWeights base = unit_weights(oracle::unit_rows(rng, 8, d), d, 10.0);
  std::vector<NovelExamples> novel;
  for (std::uint32_t c = 0; c < 5; ++c) novel.push_back({1000 + c, oracle::random_vec(rng, (1 + c) * d)});
  const ClassifierWeights w = initial_estimate(novel, base);
  ASSERT_EQ(w.num_classes(), 13u);
  EXPECT_EQ(std::memcmp(w.rows.data(), base.rows.data(), base.rows.size() * sizeof(double)), 0);
  EXPECT_EQ(w.scale, base.scale);
  for (std::size_t r = 8; r < 13; ++r) {
    double ss = 0.0;
    for (double v : w.row(r)) ss += v * v;
    EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-6);
  }
}

TEST(InitialEstimate, EmptyNovelClassIsConfigError) {
  const ClassifierWeights base = unit_weights({1, 0}, 2);
  const std::vector<NovelExamples> novel{{5, {}}};
  EXPECT_THROW((void)initial_estimate(novel, base), ConfigError);
}

TEST(Pretrain, SyntheticTrainingAccuracyAbove95) {
  const FeatureDataset ds = synthetic_base(1);
  const PretrainConfig cfg;
  const ClassifierWeights w = pretrain_base(ds, cfg);
  EXPECT_EQ(w.num_classes(), 20u);
  EXPECT_NO_THROW(w.validate());
  EXPECT_GT(training_accuracy(ds, w, cfg.holdout_fraction), 0.95);
}

TEST(Pretrain, AntipodalSingletonsSeparateAfterOneEpoch) {
  FeatureDataset ds;
  ds.dim = 3;
  ds.classes.push_back({0, Split::base, {0.6, 0.8, 0}});
  ds.classes.push_back({1, Split::base, {-0.6, -0.8, 0}});
  PretrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_EQ(training_accuracy(ds, pretrain_base(ds, cfg), cfg.holdout_fraction), 1.0);
}

TEST(Pretrain, DeterministicForSeed) {
  const FeatureDataset ds = synthetic_base(2);
  PretrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 17;
  EXPECT_EQ(pretrain_base(ds, cfg).rows, pretrain_base(ds, cfg).rows);
}

TEST(Pretrain, NeedsTwoBaseClasses) {
  FeatureDataset ds;
  ds.dim = 2;
  ds.classes.push_back({0, Split::base, {1, 0}});
  ds.classes.push_back({1, Split::novel_test, {0, 1}});
  EXPECT_THROW((void)pretrain_base(ds, {}), SamplingError);
}

TEST(TopK, HandRankedExamples) {
  // True labels rank 1st, 2nd and 6th among 8 classes.
  const Tensor s = Tensor::from({3, 8}, {9, 1, 2, 3, 4, 5, 6, 7,  //
                                         1, 9, 8, 0, 0, 0, 0, 0,  //
                                         9, 8, 7, 6, 5, 4, 3, 2});
  const std::vector<std::size_t> labels{0, 2, 5};
  EXPECT_NEAR(topk_accuracy(s, labels, 5), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(topk_accuracy(s, labels, 1), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(topk_accuracy(s, labels, 8), 1.0);
  EXPECT_THROW((void)topk_accuracy(s, labels, 9), ConfigError);
}

TEST(TopK, OneHotScoresAndTies) {
  const Tensor one_hot = Tensor::from({2, 3}, {0, 0, 1, 1, 0, 0});
  EXPECT_EQ(topk_accuracy(one_hot, std::vector<std::size_t>{2, 0}, 1), 1.0);
  // All-tied row: only the lowest index counts at k=1.
  const Tensor tied = Tensor::zeros({2, 3});
  EXPECT_EQ(topk_accuracy(tied, std::vector<std::size_t>{0, 1}, 1), 0.5);
}

TEST(TopK, InvariantUnderMonotoneTransforms) {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 1 + rng.index(10), n = 2 + rng.index(10);
    const Vec s = oracle::random_vec(rng, m * n, -3.0, 3.0);
    Vec t = s;
    for (double& v : t) v = std::exp(2.0 * v) + 5.0;
    std::vector<std::size_t> labels(m);
    for (auto& y : labels) y = rng.index(n);
    for (std::size_t k = 1; k <= n; ++k) {
      EXPECT_EQ(topk_accuracy(Tensor::from({m, n}, s), labels, k), topk_accuracy(Tensor::from({m, n}, t), labels, k));
    }
  }
}

TEST(Weights, SaveLoadRoundTrip) {
  testing_support::TempDir dir;
  Rng rng(6);
  ClassifierWeights w = unit_weights(oracle::unit_rows(rng, 4, 5), 5, 10.0);
  for (double& v : w.rows) v = static_cast<float>(v);
  save_weights(w, dir.path(), {{"note", "x"}});
  const ClassifierWeights back = load_weights(dir.path());
  EXPECT_EQ(back.rows, w.rows);
  EXPECT_EQ(back.class_ids, w.class_ids);
  EXPECT_EQ(back.scale, 10.0);
}
