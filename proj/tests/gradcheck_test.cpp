#include <gtest/gtest.h>

#include "wdae/errors.hpp"
#include "wdae/gradcheck.hpp"

using namespace wdae;

TEST(Gradcheck, RelativeErrorUsesTheFloor) {
  EXPECT_EQ(relative_error(2.0, 1.0, 1e-3), 0.5);
  EXPECT_NEAR(relative_error(1e-9, 0.0, 1e-3), 1e-6, 1e-18);
  EXPECT_EQ(relative_error(0.0, 0.0, 1e-3), 0.0);
}

TEST(Gradcheck, EveryOpPasses) {
  const auto results = run_gradcheck(0);
  const auto names = gradcheck_ops();
  ASSERT_EQ(results.size(), names.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    EXPECT_EQ(results[i].op, names[i]);
    EXPECT_GE(results[i].cases, 1u);
    EXPECT_TRUE(results[i].passed) << results[i].op << " " << results[i].max_rel_error;
    EXPECT_LT(results[i].max_rel_error, 1e-4) << results[i].op;
  }
}

TEST(Gradcheck, FilterAndDeterminism) {
  const auto a = run_gradcheck(123, std::string("softmax"));
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].op, "softmax");
  const auto b = run_gradcheck(123, std::string("softmax"));
  EXPECT_EQ(a[0].max_rel_error, b[0].max_rel_error);
  EXPECT_THROW((void)run_gradcheck(0, std::string("conv2d")), ConfigError);
}

TEST(Gradcheck, DetectsAWrongGradient) {
  // Detaching one factor drops half of d(x*x)/dx.
  auto f = [](const std::vector<Tensor>& in) { return sum(mul(in[0], in[0].detach())); };
  EXPECT_GT(max_gradient_error(f, {Tensor::from({3}, {0.5, -1.0, 2.0}, true)}), 0.4);
  auto g = [](const std::vector<Tensor>& in) { return sum(square(in[0])); };
  EXPECT_LT(max_gradient_error(g, {Tensor::from({3}, {0.5, -1.0, 2.0}, true)}), 1e-6);
}
