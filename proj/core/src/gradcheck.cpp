#include "wdae/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "wdae/class_graph.hpp"
#include "wdae/classifier.hpp"
#include "wdae/errors.hpp"
#include "wdae/features.hpp"
#include "wdae/rng.hpp"
#include "wdae/trainer.hpp"
#include "wdae/wdae_model.hpp"

namespace wdae {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

double max_gradient_error(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
                          const GradcheckOptions& options) {
  for (Tensor& t : inputs) t.zero_grad();
  f(inputs).backward();
  double worst = 0.0;
  for (Tensor& t : inputs) {
    const std::vector<double> analytic = t.grad();
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = f(inputs).item();
      values[i] = saved - options.step;
      const double down = f(inputs).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      worst = std::max(worst, relative_error(analytic[i], numeric, options.floor));
    }
  }
  return worst;
}

namespace {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Values bounded away from the origin, for ops with a kink at zero.
Tensor away_from_zero(Rng& rng, Shape shape) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Reduces an arbitrary output to a scalar with fixed random weights so every
// output component contributes a distinct coefficient.
Fn projected(Rng& rng, std::function<Tensor(const std::vector<Tensor>&)> op, const Shape& out_shape) {
  std::vector<double> w(shape_size(out_shape));
  for (double& x : w) x = rng.uniform(-1.0, 1.0);
  Tensor weights = Tensor::from(out_shape, std::move(w));
  return [op = std::move(op), weights](const std::vector<Tensor>& in) { return sum(mul(op(in), weights)); };
}

struct Case {
  Fn f;
  std::vector<Tensor> inputs;
};

using CaseBuilder = std::function<std::vector<Case>(Rng&)>;

std::vector<Case> unary_cases(Rng& rng, const std::vector<Shape>& shapes,
                              const std::function<Tensor(const Tensor&)>& op, bool avoid_zero = false) {
  std::vector<Case> out;
  for (const Shape& s : shapes) {
    Tensor x = avoid_zero ? away_from_zero(rng, s) : random_tensor(rng, s);
    const Shape out_shape = op(x.detach()).shape();
    out.push_back({projected(rng, [op](const std::vector<Tensor>& in) { return op(in[0]); }, out_shape), {x}});
  }
  return out;
}

std::vector<Case> binary_cases(Rng& rng, const std::vector<std::pair<Shape, Shape>>& shapes,
                               const std::function<Tensor(const Tensor&, const Tensor&)>& op) {
  std::vector<Case> out;
  for (const auto& [sa, sb] : shapes) {
    Tensor a = random_tensor(rng, sa), b = random_tensor(rng, sb);
    const Shape out_shape = op(a.detach(), b.detach()).shape();
    out.push_back({projected(rng, [op](const std::vector<Tensor>& in) { return op(in[0], in[1]); }, out_shape), {a, b}});
  }
  return out;
}

const std::vector<Shape> kMatrices{{2, 3}, {1, 5}, {4, 4}, {6, 2}};

std::vector<Case> episode_cases(Rng& rng, Variant variant) {
  SyntheticConfig sc;
  sc.num_base = 6;
  sc.num_novel_val = 1;
  sc.num_novel_test = 1;
  sc.dim = 8;
  sc.examples_per_class = 12;
  sc.cluster_spread = 0.3;
  sc.seed = rng.split(1).seed();
  const FeatureDataset ds = generate_synthetic(sc);
  PretrainConfig pc;
  pc.epochs = 2;
  pc.batch_size = 16;
  pc.seed = sc.seed;
  const ClassifierWeights base = pretrain_base(ds, pc);

  EpisodeConfig ec;
  ec.num_fake_novel = 2;
  ec.shots = 1;
  ec.num_validation = 9;
  ec.noise_sigma = 0.1;
  Rng sampling = rng.split(2), noise = rng.split(3);
  auto ep = std::make_shared<Episode>(sample_episode(ds, base, ec, sampling));
  const NoisyInput in = make_noisy_input(*ep, base, ec.noise_sigma, noise);

  ModelConfig mc;
  mc.variant = variant;
  mc.dim = 8;
  mc.hidden_width = 6;
  mc.dropout = 0.3;
  mc.neighbors = 3;
  auto model = std::make_shared<WdaeModel>(mc, rng.split(4).seed());
  std::shared_ptr<ClassGraph> graph;
  if (variant == Variant::gnn) graph = std::make_shared<ClassGraph>(build_graph(in.clean, 8, 3, 5.0));
  const std::uint64_t dropout_seed = rng.split(5).seed();
  TrainConfig tc;
  Tensor input = in.input;
  Fn f = [=](const std::vector<Tensor>&) {
    Rng drop(dropout_seed);
    return episode_loss(*ep, *model, graph.get(), input, tc, &drop).total;
  };
  return {{f, model->parameters()}};
}

const std::vector<std::pair<std::string, CaseBuilder>>& registry() {
  static const std::vector<std::pair<std::string, CaseBuilder>> ops{
      {"matmul",
       [](Rng& r) {
         return binary_cases(r, {{{2, 3}, {3, 4}}, {{1, 5}, {5, 1}}, {{4, 4}, {4, 2}}},
                             [](const Tensor& a, const Tensor& b) { return matmul(a, b); });
       }},
      {"transpose", [](Rng& r) { return unary_cases(r, kMatrices, [](const Tensor& x) { return transpose(x); }); }},
      {"add",
       [](Rng& r) {
         return binary_cases(r, {{{2, 3}, {2, 3}}, {{5}, {5}}, {{4, 1}, {4, 1}}},
                             [](const Tensor& a, const Tensor& b) { return add(a, b); });
       }},
      {"sub",
       [](Rng& r) {
         return binary_cases(r, {{{2, 3}, {2, 3}}, {{5}, {5}}, {{4, 1}, {4, 1}}},
                             [](const Tensor& a, const Tensor& b) { return sub(a, b); });
       }},
      {"mul",
       [](Rng& r) {
         return binary_cases(r, {{{2, 3}, {2, 3}}, {{5}, {5}}, {{4, 1}, {4, 1}}},
                             [](const Tensor& a, const Tensor& b) { return mul(a, b); });
       }},
      {"scale", [](Rng& r) { return unary_cases(r, kMatrices, [](const Tensor& x) { return scale(x, -2.5); }); }},
      {"square", [](Rng& r) { return unary_cases(r, kMatrices, [](const Tensor& x) { return square(x); }); }},
      {"sum", [](Rng& r) { return unary_cases(r, kMatrices, [](const Tensor& x) { return sum(x); }); }},
      {"add_rowwise",
       [](Rng& r) {
         return binary_cases(r, {{{2, 3}, {3}}, {{1, 5}, {5}}, {{4, 2}, {2}}},
                             [](const Tensor& a, const Tensor& b) { return add_rowwise(a, b); });
       }},
      {"mul_rowwise",
       [](Rng& r) {
         return binary_cases(r, {{{2, 3}, {3}}, {{1, 5}, {5}}, {{4, 2}, {2}}},
                             [](const Tensor& a, const Tensor& b) { return mul_rowwise(a, b); });
       }},
      {"concat_cols",
       [](Rng& r) {
         return binary_cases(r, {{{2, 3}, {2, 1}}, {{1, 5}, {1, 5}}, {{4, 2}, {4, 3}}},
                             [](const Tensor& a, const Tensor& b) { return concat_cols(a, b); });
       }},
      {"slice_cols",
       [](Rng& r) {
         return unary_cases(r, {{2, 3}, {4, 6}, {1, 5}}, [](const Tensor& x) { return slice_cols(x, 1, x.dim(1)); });
       }},
      {"gather_rows",
       [](Rng& r) {
         return unary_cases(r, {{3, 2}, {4, 4}, {2, 5}}, [](const Tensor& x) {
           const std::vector<std::size_t> rows{1, 0, 1, x.dim(0) - 1};
           return gather_rows(x, rows);
         });
       }},
      {"mix_rows",
       [](Rng& r) {
         return unary_cases(r, {{3, 2}, {5, 4}, {4, 1}}, [](const Tensor& x) {
           RowMixing m;
           const std::size_t n = x.dim(0);
           for (std::size_t i = 0; i < n; ++i) {
             m.sources.push_back((i + 1) % n);
             m.weights.push_back(0.75);
             m.sources.push_back((i + 2) % n);
             m.weights.push_back(0.25);
             m.offsets.push_back(m.sources.size());
           }
           return mix_rows(x, m);
         });
       }},
      {"softmax",
       [](Rng& r) {
         auto rows = unary_cases(r, kMatrices, [](const Tensor& x) { return softmax_scaled(x, 5.0, 1); });
         auto cols = unary_cases(r, {{3, 2}, {4, 1}}, [](const Tensor& x) { return softmax_scaled(x, 0.7, 0); });
         rows.insert(rows.end(), cols.begin(), cols.end());
         return rows;
       }},
      {"l2_normalize",
       [](Rng& r) {
         auto rows = unary_cases(r, kMatrices, [](const Tensor& x) { return l2_normalize(x, 1); });
         auto cols = unary_cases(r, {{3, 2}, {5, 3}}, [](const Tensor& x) { return l2_normalize(x, 0); });
         rows.insert(rows.end(), cols.begin(), cols.end());
         return rows;
       }},
      {"leaky_relu",
       [](Rng& r) { return unary_cases(r, kMatrices, [](const Tensor& x) { return leaky_relu(x, 0.2); }, true); }},
      {"sigmoid",
       [](Rng& r) { return unary_cases(r, kMatrices, [](const Tensor& x) { return sigmoid(scale(x, 3.0)); }); }},
      {"batch_norm",
       [](Rng& r) {
         std::vector<Case> out;
         for (const Shape& s : std::vector<Shape>{{2, 3}, {5, 4}, {8, 1}}) {
           Tensor x = random_tensor(r, s), gamma = random_tensor(r, {s[1]}, 0.5, 1.5), beta = random_tensor(r, {s[1]});
           out.push_back({projected(r,
                                    [](const std::vector<Tensor>& in) {
                                      BatchNorm bn(in[0].dim(1));
                                      bn.gamma = in[1];
                                      bn.beta = in[2];
                                      return batch_norm(in[0], bn, Mode::train);
                                    },
                                    s),
                          {x, gamma, beta}});
         }
         return out;
       }},
      {"dropout",
       [](Rng& r) {
         std::vector<Case> out;
         for (const Shape& s : kMatrices) {
           const std::uint64_t mask_seed = r.split(out.size() + 1).seed();
           for (DropoutScope scope : {DropoutScope::per_element, DropoutScope::per_column}) {
             Tensor x = random_tensor(r, s);
             out.push_back({projected(r,
                                      [mask_seed, scope](const std::vector<Tensor>& in) {
                                        Rng rng(mask_seed);
                                        return dropout(in[0], 0.4, Mode::train, &rng, scope);
                                      },
                                      s),
                            {x}});
           }
         }
         return out;
       }},
      {"cross_entropy",
       [](Rng& r) {
         std::vector<Case> out;
         for (const Shape& s : std::vector<Shape>{{3, 4}, {1, 2}, {6, 5}}) {
           std::vector<std::size_t> labels(s[0]);
           for (auto& y : labels) y = r.index(s[1]);
           out.push_back({[labels](const std::vector<Tensor>& in) {
                            return cross_entropy_from_scores(scale(in[0], 3.0), labels);
                          },
                          {random_tensor(r, s)}});
         }
         return out;
       }},
      {"cosine_scores",
       [](Rng& r) {
         return binary_cases(r, {{{2, 3}, {4, 3}}, {{5, 2}, {1, 2}}, {{3, 6}, {3, 6}}},
                             [](const Tensor& z, const Tensor& w) { return cosine_scores(z, w, 10.0); });
       }},
      {"episode_loss", [](Rng& r) { return episode_cases(r, Variant::gnn); }},
      {"episode_loss_mlp", [](Rng& r) { return episode_cases(r, Variant::mlp); }},
  };
  return ops;
}

}  // namespace

std::vector<std::string> gradcheck_ops() {
  std::vector<std::string> names;
  for (const auto& [name, unused] : registry()) names.push_back(name);
  return names;
}

std::vector<GradcheckResult> run_gradcheck(std::uint64_t seed, const std::optional<std::string>& only,
                                           const GradcheckOptions& options) {
  const auto& ops = registry();
  if (only && std::none_of(ops.begin(), ops.end(), [&](const auto& op) { return op.first == *only; })) {
    std::string known;
    for (const auto& op : ops) known += " " + op.first;
    throw ConfigError("gradcheck: unknown op \"" + *only + "\" (known:" + known + ")");
  }
  std::vector<GradcheckResult> results;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const auto& [name, build] = ops[i];
    if (only && name != *only) continue;
    Rng rng(derive_seed(seed, i));
    GradcheckResult res{name, 0, 0.0, true};
    for (Case& c : build(rng)) {
      res.max_rel_error = std::max(res.max_rel_error, max_gradient_error(c.f, c.inputs, options));
      ++res.cases;
    }
    res.passed = res.max_rel_error < options.tolerance;
    results.push_back(res);
  }
  return results;
}

}  // namespace wdae
