#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "latentcl/numcore/ops.hpp"
#include "latentcl/numcore/optim.hpp"
#include "latentcl/numcore/rng.hpp"
#include "support/gradcheck.hpp"

using namespace latentcl;
using latentcl::testing::gradcheck;

namespace {

Tensor random_param(Rng& rng, Shape shape, double scale = 1.0) {
  auto t = normal_sample(rng, std::move(shape));
  std::vector<double> v(t.values());
  for (auto& x : v) x *= scale;
  return Tensor::parameter(t.shape(), std::move(v));
}

}  // namespace

TEST(TensorOps, AddComponentwise) {
  auto r = add(Tensor::vector({1, 2}), Tensor::vector({3, 4}));
  EXPECT_EQ(r.values(), (std::vector<double>{4, 6}));
}

TEST(TensorOps, IdentityMatmulReturnsVector) {
  auto eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  auto r = matmul(eye, Tensor::vector({5, -7}));
  EXPECT_EQ(r.shape(), (Shape{2}));
  EXPECT_EQ(r.values(), (std::vector<double>{5, -7}));
}

TEST(TensorOps, ScaleByZero) {
  EXPECT_EQ(scale(Tensor::vector({1, 2}), 0.0).values(), (std::vector<double>{0, 0}));
}

TEST(TensorOps, ShapeMismatchNamesBothShapes) {
  try {
    add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2]"), std::string::npos);
    EXPECT_NE(msg.find("[3]"), std::string::npos);
  }
  EXPECT_THROW(matmul(Tensor::matrix(2, 3, std::vector<double>(6)), Tensor::vector({1, 2})), DimensionError);
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
}

TEST(CosineSim, ClosedForms) {
  auto v = Tensor::vector({0.3, -1.2, 2.0});
  EXPECT_NEAR(cosine_sim(v, v).item(), 1.0, 1e-15);
  EXPECT_NEAR(cosine_sim(v, scale(v, -1.0)).item(), -1.0, 1e-15);
  EXPECT_NEAR(cosine_sim(Tensor::vector({1, 0}), Tensor::vector({0, 1})).item(), 0.0, 1e-15);
  EXPECT_THROW(cosine_sim(Tensor::vector({0, 0}), Tensor::vector({1, 0})), DegenerateInputError);
}

TEST(Rng, SameSeedSameDraws) {
  Rng a(42), b(42);
  auto x = normal_sample(a, {2});
  auto y = normal_sample(b, {2});
  EXPECT_EQ(x.values(), y.values());
  Rng c(43);
  EXPECT_NE(normal_sample(c, {2}).values(), x.values());
}

TEST(Rng, EmptyShape) {
  Rng rng(1);
  auto t = normal_sample(rng, {0});
  EXPECT_EQ(t.numel(), 0u);
  EXPECT_EQ(t.shape(), (Shape{0}));
}

TEST(Rng, NormalMomentsOverMillionDraws) {
  Rng rng(42);
  const std::size_t n = 1'000'000;
  auto t = normal_sample(rng, {n});
  double m = 0.0, sq = 0.0;
  for (double x : t.data()) m += x;
  m /= n;
  for (double x : t.data()) sq += (x - m) * (x - m);
  EXPECT_NEAR(m, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.01);
}

TEST(Rng, DerivedStreamsAreIndependentOfParentProgress) {
  Rng a(7);
  auto child_before = a.derive(3);
  a.normal();
  a.normal();
  auto child_after = a.derive(3);
  EXPECT_EQ(child_before.next_u64(), child_after.next_u64());
  EXPECT_NE(a.derive(3).next_u64(), a.derive(4).next_u64());
}

TEST(Rng, UniformIntInRange) {
  Rng rng(5);
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 30000; ++i) ++counts[rng.uniform_int(3)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}

TEST(Backward, Quadratic) {
  auto x = Tensor::parameter({1}, {3.0});
  auto loss = mul(x, x);
  reshape(loss, {}).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, SelfSimilarityIsStationary) {
  auto v = Tensor::parameter({3}, {0.5, -0.25, 1.5});
  cosine_sim(v, v).backward();
  for (double g : v.grad()) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(Backward, NonScalarLossRejected) {
  auto v = Tensor::parameter({2}, {1, 2});
  EXPECT_THROW(scale(v, 2.0).backward(), ContractError);
}

TEST(Backward, RandomThreeOpGraphMatchesFiniteDifferences) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_param(rng, {3, 4});
    auto b = random_param(rng, {4});
    auto c = random_param(rng, {3});
    auto fn = [&] { return sum(mul(exp(scale(matmul(a, b), 0.3)), c)); };
    auto r = gradcheck({a, b, c}, fn);
    EXPECT_LE(r.max_rel_error, 1e-5);
  }
}

TEST(Backward, NoGradGuardSkipsRecording) {
  auto p = Tensor::parameter({2}, {1, 2});
  NoGradGuard guard;
  auto y = scale(p, 3.0);
  EXPECT_FALSE(y.requires_grad());
}

// Every differentiable primitive against central differences on 100 random inputs.
class PrimitiveGradients : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradients, MatchFiniteDifferences) {
  const int which = GetParam();
  Rng rng(1000 + which);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Tensor> leaves;
    std::function<Tensor()> fn;
    switch (which) {
      case 0: {  // add, sub, mul, log
        auto a = random_param(rng, {5}), b = random_param(rng, {5});
        leaves = {a, b};
        fn = [=] { return sum(mul(sub(a, b), add(a, b))); };
        break;
      }
      case 1: {  // matmul 2x2 and vector forms
        auto a = random_param(rng, {3, 4}), b = random_param(rng, {4, 2}), v = random_param(rng, {3});
        leaves = {a, b, v};
        fn = [=] { return sum(mul(matmul(v, matmul(a, b)), Tensor::vector({0.7, -1.3}))); };
        break;
      }
      case 2: {  // exp, log, mean
        auto a = random_param(rng, {6});
        leaves = {a};
        fn = [=] { return mean(log(add_scalar(exp(a), 0.5))); };
        break;
      }
      case 3: {  // cosine_sim
        auto a = random_param(rng, {6}), b = random_param(rng, {6});
        leaves = {a, b};
        fn = [=] { return cosine_sim(a, b); };
        break;
      }
      case 4: {  // cosine_matrix and cosine_rows
        auto a = random_param(rng, {3, 5}), b = random_param(rng, {4, 5}), c = random_param(rng, {3, 5});
        auto w = normal_sample(rng, {3, 4});
        leaves = {a, b, c};
        fn = [=] { return add(sum(mul(cosine_matrix(a, b), w)), sum(cosine_rows(a, c))); };
        break;
      }
      case 5: {  // softmax cross-entropy and log_softmax_pick
        auto l = random_param(rng, {4, 6}, 2.0);
        std::vector<int> tg{1, 5, 0, 3};
        leaves = {l};
        fn = [=] {
          return add(cross_entropy_rows(l, tg, {true, false, true, true}),
                     scale(sum(log_softmax_pick(l, tg)), 0.3));
        };
        break;
      }
      case 6: {  // layer_norm, gelu, add_rowwise
        auto x = random_param(rng, {3, 8}), g = random_param(rng, {8}), b = random_param(rng, {8});
        auto w = normal_sample(rng, {3, 8});
        leaves = {x, g, b};
        fn = [=] { return sum(mul(gelu(add_rowwise(layer_norm(x, g, b), b)), w)); };
        break;
      }
      case 7: {  // causal attention with a key prefix
        auto q = random_param(rng, {2, 8}), k = random_param(rng, {5, 8}), v = random_param(rng, {5, 8});
        auto w = normal_sample(rng, {2, 8});
        leaves = {q, k, v};
        fn = [=] { return sum(mul(causal_attention(q, k, v, 2, 3), w)); };
        break;
      }
      case 8: {  // shaping ops and clamp/minimum
        auto t = random_param(rng, {4, 3}), e = random_param(rng, {5, 3});
        leaves = {t, e};
        fn = [=] {
          auto cat = concat_rows({slice_rows(t, 1, 3), gather_rows(e, {4, 0, 4}), row(t, 0)});
          auto m = mean_rows(cat);
          auto lo = minimum(clamp(m, -0.4, 0.4), scale(m, 0.5));
          return sum(mul(lo, reshape(row(t, 3), {3})));
        };
        break;
      }
      default:
        FAIL();
    }
    worst = std::max(worst, gradcheck(leaves, fn).max_rel_error);
  }
  EXPECT_LE(worst, 1e-5) << "primitive group " << which;
}

INSTANTIATE_TEST_SUITE_P(AllOps, PrimitiveGradients, ::testing::Range(0, 9));

TEST(Schedule, WarmupThenLinearDecay) {
  LinearSchedule s{1.0, 10, 110};
  EXPECT_DOUBLE_EQ(s.at(0), 0.1);
  EXPECT_DOUBLE_EQ(s.at(9), 1.0);
  EXPECT_DOUBLE_EQ(s.at(10), 1.0);
  EXPECT_DOUBLE_EQ(s.at(60), 0.5);
  EXPECT_DOUBLE_EQ(s.at(110), 0.0);
}

TEST(AdamW, MinimizesQuadratic) {
  auto x = Tensor::parameter({2}, {3.0, -2.0});
  AdamW opt({x}, AdamW::Options{.weight_decay = 0.0, .max_grad_norm = 0.0});
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    sum(mul(x, x)).backward();
    opt.step(0.05);
  }
  EXPECT_NEAR(x[0], 0.0, 1e-2);
  EXPECT_NEAR(x[1], 0.0, 1e-2);
}
