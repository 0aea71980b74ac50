#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support/oracles.hpp"
#include "support/temp_dir.hpp"
#include "wdae/errors.hpp"
#include "wdae/wdae_model.hpp"

using namespace wdae;
using oracle::Vec;

namespace {

ModelConfig small_config(Variant variant, double dropout = 0.0) {
  ModelConfig c;
  c.variant = variant;
  c.dim = 8;
  c.hidden_width = 6;
  c.dropout = dropout;
  c.neighbors = 3;
  return c;
}

Vec values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Moves BatchNorm parameters and running statistics away from the identity so
// the eval path is exercised non-trivially.
void perturb_norms(WdaeModel& model, std::uint64_t seed) {
  Rng rng(seed);
  for (GnnLayerParams* layer : {&model.hidden_layer(), &model.final_layer()}) {
    for (auto* bn : {&layer->message_norm, &layer->update_norm}) {
      if (!*bn) continue;
      for (double& v : (*bn)->gamma.mutable_data()) v = rng.uniform(0.5, 1.5);
      for (double& v : (*bn)->beta.mutable_data()) v = rng.uniform(-0.3, 0.3);
      for (double& v : (*bn)->running->mean) v = rng.uniform(-0.2, 0.2);
      for (double& v : (*bn)->running->var) v = rng.uniform(0.5, 2.0);
    }
  }
  for (double& v : model.hidden_layer().update.bias.mutable_data()) v = rng.uniform(-0.1, 0.1);
  for (double& v : model.final_layer().update.bias.mutable_data()) v = rng.uniform(-0.1, 0.1);
  if (model.hidden_layer().message.defined())
    for (double& v : model.hidden_layer().message.bias.mutable_data()) v = rng.uniform(-0.1, 0.1);
}

struct Instance {
  Vec rows;
  ClassGraph graph;
};

Instance random_instance(Rng& rng, std::size_t n, std::size_t d, std::size_t j) {
  Instance in{oracle::unit_rows(rng, n, d), {}};
  in.graph = build_graph(in.rows, d, j, 5.0);
  return in;
}

ForwardContext eval_ctx() { return {Mode::eval, nullptr, 0.0, 0.2}; }

}  // namespace

TEST(RelationMessage, ZeroInputsGiveZeroMessage) {
  WdaeModel model(small_config(Variant::gnn), 1);
  const Tensor h = Tensor::zeros({2, 8});
  const std::vector<std::size_t> r{0}, s{1};
  const Tensor m = relation_messages(model.hidden_layer(), h, r, s, eval_ctx());
  for (double v : m.data()) EXPECT_EQ(v, 0.0);
}

TEST(RelationMessage, SymmetricInItsArguments) {
  WdaeModel model(small_config(Variant::gnn), 2);
  perturb_norms(model, 3);
  Rng rng(4);
  const Tensor h = Tensor::from({2, 8}, oracle::random_vec(rng, 16));
  const std::vector<std::size_t> a{0}, b{1};
  EXPECT_EQ(values(relation_messages(model.hidden_layer(), h, a, b, eval_ctx())),
            values(relation_messages(model.hidden_layer(), h, b, a, eval_ctx())));
}

TEST(RelationMessage, SymmetricUnderASharedTrainingMask) {
  WdaeModel model(small_config(Variant::gnn, 0.5), 2);
  Rng rng(4);
  const Tensor h = Tensor::from({3, 8}, oracle::random_vec(rng, 24));
  const std::vector<std::size_t> r{0, 1, 2, 0}, s{1, 0, 0, 2};
  Rng drop(9);
  const Vec m = values(relation_messages(model.hidden_layer(), h, r, s, {Mode::train, &drop, 0.5, 0.2}));
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_EQ(m[k], m[6 + k]);
    EXPECT_EQ(m[3 * 6 + k], m[2 * 6 + k]);
  }
}

TEST(RelationMessage, MatchesHandComposedChain) {
  WdaeModel model(small_config(Variant::gnn), 5);
  perturb_norms(model, 6);
  const GnnLayerParams& layer = model.hidden_layer();
  Rng rng(7);
  const Vec hi = oracle::random_vec(rng, 8), hj = oracle::random_vec(rng, 8);
  Vec sum(8);
  for (std::size_t k = 0; k < 8; ++k) sum[k] = hi[k] + hj[k];
  const Vec pre = oracle::linear(sum, layer.message);
  const Vec bn = oracle::batch_norm_rows({pre}, *layer.message_norm, false)[0];
  const std::vector<std::size_t> r{0}, s{1};
  const Vec got =
      values(relation_messages(layer, Tensor::from({2, 8}, oracle::concat(hi, hj)), r, s, eval_ctx()));
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(got[k], oracle::leaky(bn[k], 0.2), 1e-12);
}

TEST(RelationMessage, WidthMismatchIsShapeError) {
  WdaeModel model(small_config(Variant::gnn), 1);
  const std::vector<std::size_t> r{0}, s{1};
  EXPECT_THROW((void)relation_messages(model.hidden_layer(), Tensor::zeros({2, 7}), r, s, eval_ctx()), ShapeError);
}

TEST(Aggregate, SingleNeighbourEqualsItsMessage) {
  WdaeModel model(small_config(Variant::gnn), 8);
  perturb_norms(model, 9);
  Rng rng(10);
  const Tensor h = Tensor::from({2, 8}, oracle::random_vec(rng, 16));
  ClassGraph g;
  g.num_nodes = 2;
  g.neighbors = {{1}, {0}};
  g.strengths = {{1.0}, {1.0}};
  const std::vector<std::size_t> r{0}, s{1};
  const Vec agg = values(aggregate(model.hidden_layer(), h, g, eval_ctx()));
  const Vec msg = values(relation_messages(model.hidden_layer(), h, r, s, eval_ctx()));
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(agg[k], msg[k]);
}

TEST(Aggregate, IdenticalNeighboursGiveTheSharedMessage) {
  WdaeModel model(small_config(Variant::gnn), 8);
  perturb_norms(model, 11);
  Rng rng(12);
  const Vec a = oracle::random_vec(rng, 8), b = oracle::random_vec(rng, 8);
  const Tensor h = Tensor::from({3, 8}, oracle::concat(oracle::concat(a, b), b));
  ClassGraph g;
  g.num_nodes = 3;
  g.neighbors = {{1, 2}, {0, 2}, {0, 1}};
  g.strengths = {{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}};
  const std::vector<std::size_t> r{0}, s{1};
  const Vec agg = values(aggregate(model.hidden_layer(), h, g, eval_ctx()));
  const Vec msg = values(relation_messages(model.hidden_layer(), h, r, s, eval_ctx()));
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(agg[k], msg[k], 1e-15);
}

TEST(Aggregate, MatchesIndependentSummation) {
  WdaeModel model(small_config(Variant::gnn), 13);
  perturb_norms(model, 14);
  Rng rng(15);
  const Instance in = random_instance(rng, 5, 8, 3);
  const Tensor h = Tensor::from({5, 8}, in.rows);
  const Vec agg = values(aggregate(model.hidden_layer(), h, in.graph, eval_ctx()));
  for (std::size_t i = 0; i < 5; ++i) {
    Vec expected(6, 0.0);
    for (std::size_t k = 0; k < in.graph.neighbors[i].size(); ++k) {
      const std::vector<std::size_t> r{i}, s{in.graph.neighbors[i][k]};
      const Vec m = values(relation_messages(model.hidden_layer(), h, r, s, eval_ctx()));
      for (std::size_t c = 0; c < 6; ++c) expected[c] += in.graph.strengths[i][k] * m[c];
    }
    for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(agg[i * 6 + c], expected[c], 1e-12);
  }
}

TEST(UpdateHidden, SkipPrefixAndUnitSuffix) {
  WdaeModel model(small_config(Variant::gnn), 16);
  perturb_norms(model, 17);
  Rng rng(18);
  const Instance in = random_instance(rng, 6, 8, 3);
  const Tensor w = Tensor::from({6, 8}, in.rows);
  const Tensor h1 = update_hidden(model.hidden_layer(), w, aggregate(model.hidden_layer(), w, in.graph, eval_ctx()),
                                  eval_ctx());
  ASSERT_EQ(h1.shape(), (Shape{6, 8 + 6}));
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(h1.at(i, k), in.rows[i * 8 + k]);
    double ss = 0.0;
    for (std::size_t k = 8; k < 14; ++k) ss += h1.at(i, k) * h1.at(i, k);
    EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-9);
  }
}

TEST(PredictFinal, ZeroParametersGiveHalfGateAndGuardedDelta) {
  WdaeModel model(small_config(Variant::mlp), 19);
  for (double& v : model.final_layer().update.weight.mutable_data()) v = 0.0;
  Rng rng(20);
  const Tensor h = Tensor::from({3, 14}, oracle::random_vec(rng, 42));
  const FinalPrediction p = predict_final(model.final_layer(), h, Tensor());
  for (double v : p.gate.data()) EXPECT_EQ(v, 0.5);
  for (double v : p.delta.data()) EXPECT_EQ(v, 0.0);
}

TEST(PredictFinal, UnitDeltaAndOpenGateRange) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    WdaeModel model(small_config(Variant::gnn), seed);
    perturb_norms(model, seed + 100);
    Rng rng(seed);
    const Instance in = random_instance(rng, 7, 8, 3);
    const Reconstruction r = model.reconstruct(Tensor::from({7, 8}, in.rows), &in.graph, Mode::eval, nullptr);
    for (std::size_t i = 0; i < 7; ++i) {
      double ss = 0.0;
      for (std::size_t k = 0; k < 8; ++k) {
        ss += r.delta.at(i, k) * r.delta.at(i, k);
        EXPECT_GT(r.gate.at(i, k), 0.0);
        EXPECT_LT(r.gate.at(i, k), 1.0);
      }
      EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-9);
    }
  }
}

TEST(Reconstruct, ClosedGateReturnsTheInput) {
  WdaeModel model(small_config(Variant::gnn), 21);
  auto bias = model.final_layer().update.bias.mutable_data();
  for (std::size_t k = 8; k < 16; ++k) bias[k] = -100.0;
  Rng rng(22);
  const Instance in = random_instance(rng, 6, 8, 3);
  const Vec out = values(model.reconstruct(Tensor::from({6, 8}, in.rows), &in.graph, Mode::eval, nullptr).weights);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], in.rows[i], 1e-9);
}

TEST(Reconstruct, PermutationEquivariant) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    WdaeModel model(small_config(Variant::gnn), seed);
    perturb_norms(model, seed + 50);
    Rng rng(seed + 1);
    const std::size_t n = 4 + rng.index(10);
    const Instance in = random_instance(rng, n, 8, 3);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Vec moved(in.rows.size());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < 8; ++k) moved[perm[i] * 8 + k] = in.rows[i * 8 + k];
    const ClassGraph pg = in.graph.permuted(perm);
    const Vec a = values(model.reconstruct(Tensor::from({n, 8}, in.rows), &in.graph, Mode::eval, nullptr).weights);
    const Vec b = values(model.reconstruct(Tensor::from({n, 8}, moved), &pg, Mode::eval, nullptr).weights);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(b[perm[i] * 8 + k], a[i * 8 + k]);
  }
}

TEST(Reconstruct, MatchesScalarReferenceInEvalMode) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    WdaeModel model(small_config(Variant::gnn), seed + 200);
    perturb_norms(model, seed + 300);
    Rng rng(seed + 400);
    const Instance in = random_instance(rng, 6, 8, 3);
    const auto expected = oracle::reconstruct(model, oracle::split_rows(in.rows, 8), &in.graph, false);
    const Reconstruction got = model.reconstruct(Tensor::from({6, 8}, in.rows), &in.graph, Mode::eval, nullptr);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t k = 0; k < 8; ++k) {
        EXPECT_NEAR(got.weights.at(i, k), expected.weights[i][k], 1e-10);
        EXPECT_NEAR(got.gate.at(i, k), expected.gate[i][k], 1e-10);
      }
  }
}

TEST(Reconstruct, MatchesScalarReferenceInTrainModeWithoutDropout) {
  WdaeModel model(small_config(Variant::gnn), 500);
  perturb_norms(model, 501);
  Rng rng(502);
  const Instance in = random_instance(rng, 6, 8, 3);
  const auto expected = oracle::reconstruct(model, oracle::split_rows(in.rows, 8), &in.graph, true);
  const Reconstruction got = model.reconstruct(Tensor::from({6, 8}, in.rows), &in.graph, Mode::train, nullptr);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(got.weights.at(i, k), expected.weights[i][k], 1e-10);
}

TEST(Reconstruct, MlpMatchesScalarReferenceAndIgnoresTheGraph) {
  WdaeModel model(small_config(Variant::mlp), 600);
  perturb_norms(model, 601);
  Rng rng(602);
  const Instance a = random_instance(rng, 6, 8, 3);
  ClassGraph other = build_graph(oracle::unit_rows(rng, 6, 8), 8, 5, 0.5);
  const Tensor w = Tensor::from({6, 8}, a.rows);
  const Vec with_a = values(model.reconstruct(w, &a.graph, Mode::eval, nullptr).weights);
  EXPECT_EQ(with_a, values(model.reconstruct(w, &other, Mode::eval, nullptr).weights));
  EXPECT_EQ(with_a, values(model.reconstruct(w, nullptr, Mode::eval, nullptr).weights));
  const auto expected = oracle::reconstruct(model, oracle::split_rows(a.rows, 8), nullptr, false);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(with_a[i * 8 + k], expected.weights[i][k], 1e-10);
}

TEST(Reconstruct, GraphErrors) {
  WdaeModel model(small_config(Variant::gnn), 1);
  Rng rng(2);
  const Instance in = random_instance(rng, 5, 8, 3);
  EXPECT_THROW((void)model.reconstruct(Tensor::from({5, 8}, in.rows), nullptr, Mode::eval, nullptr), GraphError);
  EXPECT_THROW((void)model.reconstruct(Tensor::zeros({4, 8}), &in.graph, Mode::eval, nullptr), GraphError);
}

TEST(Model, ParameterCountFollowsTheArchitecture) {
  const std::size_t d = 8, c = 6;
  const std::size_t gnn = (d * c + c + 2 * c) + ((d + c) * c + c + 2 * c) + ((d + c) * c + c + 2 * c) +
                          ((2 * c + d) * 2 * d + 2 * d);
  const std::size_t mlp = (d * c + c + 2 * c) + ((d + c) * 2 * d + 2 * d);
  EXPECT_EQ(WdaeModel(small_config(Variant::gnn), 1).parameter_count(), gnn);
  EXPECT_EQ(WdaeModel(small_config(Variant::gnn), 2).parameter_count(), gnn);
  EXPECT_EQ(WdaeModel(small_config(Variant::mlp), 1).parameter_count(), mlp);
  EXPECT_EQ(WdaeModel(small_config(Variant::gnn), 3).final_layer().update.out(), 2 * d);
}

TEST(Model, SameSeedSameParametersAndCloneIsIndependent) {
  const WdaeModel a(small_config(Variant::gnn), 42), b(small_config(Variant::gnn), 42);
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(values(pa[i]), values(pb[i]));
  WdaeModel c = a.clone();
  c.parameters()[0].mutable_data()[0] += 1.0;
  c.running_stats()[0]->mean[0] = 3.0;
  EXPECT_EQ(values(a.parameters()[0]), values(pb[0]));
  EXPECT_EQ(a.running_stats()[0]->mean[0], 0.0);
}

TEST(Model, InvalidConfigIsRejected) {
  ModelConfig c = small_config(Variant::gnn);
  c.dropout = 1.0;
  EXPECT_THROW(WdaeModel(c, 0), ConfigError);
  c = small_config(Variant::gnn);
  c.dim = 0;
  EXPECT_THROW(WdaeModel(c, 0), ConfigError);
  EXPECT_THROW((void)parse_variant("transformer"), ConfigError);
}

TEST(Refine, StepSizeEndpoints) {
  WdaeModel model(small_config(Variant::gnn), 30);
  perturb_norms(model, 31);
  Rng rng(32);
  const Instance in = random_instance(rng, 6, 8, 3);
  const Tensor w = Tensor::from({6, 8}, in.rows);
  const Vec zero = values(refine(w, &in.graph, model, 0.0));
  for (std::size_t i = 0; i < zero.size(); ++i) EXPECT_NEAR(zero[i], in.rows[i], 1e-9);
  const Vec one = values(refine(w, &in.graph, model, 1.0));
  const auto r = oracle::split_rows(values(model.reconstruct(w, &in.graph, Mode::eval, nullptr).weights), 8);
  for (std::size_t i = 0; i < 6; ++i) {
    const Vec expected = oracle::normalized(r[i]);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(one[i * 8 + k], expected[k], 1e-9);
  }
}

TEST(Refine, HalfStepTowardAKnownReconstruction) {
  // Two-dimensional MLP whose gate saturates open and whose delta is fixed
  // at (-1, 1)/sqrt(2): r([1, 0]) = [1 - 1/sqrt(2), 1/sqrt(2)].
  ModelConfig c = small_config(Variant::mlp);
  c.dim = 2;
  WdaeModel model(c, 33);
  for (double& v : model.final_layer().update.weight.mutable_data()) v = 0.0;
  auto bias = model.final_layer().update.bias.mutable_data();
  bias[0] = -1.0;
  bias[1] = 1.0;
  bias[2] = bias[3] = 100.0;
  const Vec out = values(refine(Tensor::from({1, 2}, {1, 0}), nullptr, model, 0.5));
  const double s = 1.0 / std::sqrt(2.0);
  const double x = 1.0 - 0.5 * s, y = 0.5 * s, n = std::sqrt(x * x + y * y);
  EXPECT_NEAR(out[0], x / n, 1e-12);
  EXPECT_NEAR(out[1], y / n, 1e-12);
}

TEST(Checkpoint, SaveLoadRoundTripPreservesOutputs) {
  testing_support::TempDir dir;
  WdaeModel model(small_config(Variant::gnn), 40);
  perturb_norms(model, 41);
  for (Tensor& p : model.parameters())
    for (double& v : p.mutable_data()) v = static_cast<float>(v);
  for (auto& s : model.running_stats()) {
    for (double& v : s->mean) v = static_cast<float>(v);
    for (double& v : s->var) v = static_cast<float>(v);
  }
  save_model(model, dir.path(), {{"seed", "40"}});
  Meta meta;
  const WdaeModel back = load_model(dir.path(), &meta);
  EXPECT_EQ(meta.at("seed"), "40");
  EXPECT_EQ(back.config().hidden_width, 6u);
  Rng rng(42);
  const Instance in = random_instance(rng, 6, 8, 3);
  const Tensor w = Tensor::from({6, 8}, in.rows);
  EXPECT_EQ(values(model.reconstruct(w, &in.graph, Mode::eval, nullptr).weights),
            values(back.reconstruct(w, &in.graph, Mode::eval, nullptr).weights));
}

TEST(Checkpoint, CorruptionIsReported) {
  testing_support::TempDir dir;
  save_model(WdaeModel(small_config(Variant::mlp), 1), dir.path());
  const std::string bytes = testing_support::read_file(dir / "model.bin");
  testing_support::write_file(dir / "model.bin", bytes + "xx");
  EXPECT_THROW((void)load_model(dir.path()), LoadError);
  testing_support::write_file(dir / "model.bin", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW((void)load_model(dir.path()), LoadError);
  testing_support::write_file(dir / "model.bin", bytes);
  std::string meta = testing_support::read_file(dir / "meta.txt");
  meta.replace(meta.find("mlp"), 3, "xyz");
  testing_support::write_file(dir / "meta.txt", meta);
  try {
    (void)load_model(dir.path());
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_EQ(e.kind(), LoadErrorKind::bad_metadata);
  }
}
