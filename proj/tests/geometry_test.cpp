#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "latentcl/encoder/encoder.hpp"
#include "latentcl/geometry/perturbation.hpp"

using namespace latentcl;
using namespace latentcl::geometry;

namespace {

void expect_vec_near(const Vec& a, const Vec& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

}  // namespace

TEST(Encoder, IdentityProjectorReturnsRawEmbedding) {
  encoder::EncoderParams p;
  p.cell_embedding = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  p.projector = Tensor::matrix(2, 2, {1, 0, 0, 1});
  auto f = encoder::encode(p, {1});
  EXPECT_EQ(f.values(), (std::vector<double>{3, 4}));
}

TEST(Encoder, ZeroProjectorAnnihilates) {
  Rng rng(1);
  auto p = encoder::EncoderParams::init(rng, 7, 4, 3);
  p.projector = Tensor::zeros({4, 3});
  auto f = encoder::encode(p, {0, 1, 2, 6});
  EXPECT_EQ(f.shape(), (Shape{4, 3}));
  for (double v : f.values()) EXPECT_EQ(v, 0.0);
}

TEST(Encoder, UnknownCodeIsVocabularyError) {
  Rng rng(1);
  auto p = encoder::EncoderParams::init(rng, 7, 4, 3);
  EXPECT_THROW(encoder::encode(p, {7}), encoder::VocabularyError);
  EXPECT_THROW(encoder::encode(p, {-1}), encoder::VocabularyError);
}

TEST(Encoder, MeanPoolCases) {
  EXPECT_EQ(encoder::mean_pool(Tensor::matrix(3, 2, {1, 2, 1, 2, 1, 2})).values(), (std::vector<double>{1, 2}));
  EXPECT_EQ(encoder::mean_pool(Tensor::matrix(2, 2, {1, -2, -1, 2})).values(), (std::vector<double>{0, 0}));
  EXPECT_EQ(encoder::mean_pool(Tensor::matrix(1, 2, {5, 7})).values(), (std::vector<double>{5, 7}));
  EXPECT_THROW(encoder::mean_pool(Tensor::zeros({0, 2})), DegenerateInputError);
}

TEST(Geometry, TrajectoryDelta) {
  expect_vec_near(trajectory_delta({1, 1}, {1, 1}), {0, 0}, 0);
  expect_vec_near(trajectory_delta({0, 0}, {3, 4}), {3, 4}, 0);
}

TEST(Geometry, Orthogonalize) {
  expect_vec_near(orthogonalize({1, 1}, {1, 0}), {0, 1}, 1e-15);
  EXPECT_THROW(orthogonalize({2, 0}, {1, 0}), ResampleRequired);
  expect_vec_near(orthogonalize({0, 3}, {1, 0}), {0, 3}, 0);
  EXPECT_THROW(orthogonalize({1, 1}, {0, 0}), DegenerateTrajectoryError);
}

TEST(Geometry, RotateDeviation) {
  expect_vec_near(rotate_deviation({2, 0}, {0, 1}, std::numbers::pi / 2), {0, 2}, 1e-12);
  expect_vec_near(rotate_deviation({2, 0}, {0, 1}, std::numbers::pi), {-2, 0}, 1e-12);
  expect_vec_near(rotate_deviation({2, 0}, {0, 1}, 0.0), {2, 0}, 0);
  EXPECT_THROW(rotate_deviation({2, 0}, {0, 2}, 1.0), ContractError);
  EXPECT_THROW(rotate_deviation({2, 0}, {1, 0}, 1.0), ContractError);
  EXPECT_THROW(rotate_deviation({0, 0}, {0, 1}, 1.0), ContractError);
}

TEST(Geometry, FullReversalCollapsesToOriginalFeature) {
  Rng rng(3);
  Vec s_i{0.3, -1.2, 2.0, 0.5}, s_hint{1.0, 0.4, -0.7, 2.2};
  auto s = make_negative(s_i, s_hint, rng, {std::numbers::pi, std::numbers::pi});
  expect_vec_near(s.s_neg, s_i, 1e-12);
}

TEST(Geometry, NegativeCosineAgainstDeltaFollowsTheta) {
  Rng rng(5);
  Vec s_i{0.1, 0.2, 0.3}, s_hint{1.0, -1.0, 0.5};
  for (int i = 0; i < 50; ++i) {
    auto s = make_negative(s_i, s_hint, rng);
    EXPECT_NEAR(dot(s.z, s.delta) / (norm(s.z) * norm(s.delta)), std::cos(s.theta), 1e-12);
    EXPECT_GE(s.theta, std::numbers::pi / 2);
    EXPECT_LE(s.theta, std::numbers::pi);
  }
}

TEST(Geometry, PropertySweep) {
  Rng rng(42);
  for (int i = 0; i < 10000; ++i) {
    const std::size_t d = 2 + rng.uniform_int(31);
    Vec s_i = rng.normal_vector(d), s_hint = rng.normal_vector(d);
    auto s = make_negative(s_i, s_hint, rng);
    const double dn = norm(s.delta);
    ASSERT_NEAR(norm(s.z), dn, 1e-9 * std::max(1.0, dn));
    ASSERT_NEAR(dot(s.eta_norm, s.delta), 0.0, 1e-9 * std::max(1.0, dn));
    ASSERT_NEAR(norm(s.eta_norm), 1.0, 1e-12);
    for (std::size_t j = 0; j < d; ++j) ASSERT_NEAR(s.s_neg[j], s_hint[j] + s.z[j], 1e-12);
  }
}

TEST(Geometry, DegenerateInputs) {
  Rng rng(1);
  EXPECT_THROW(make_negative({1, 2}, {1, 2}, rng), DegenerateTrajectoryError);
  EXPECT_THROW(make_negative({1, 2}, {1, 2, 3}, rng), DimensionError);
  EXPECT_THROW(make_negative({1, 2}, {2, 2}, rng, {2.0, 1.0}), ParameterError);
}

TEST(Geometry, OneDimensionalExhaustsResamples) {
  // In 1-D every epsilon is parallel to delta.
  Rng rng(1);
  EXPECT_THROW(make_negative({0.0}, {1.0}, rng), ResampleExhaustedError);
}

TEST(Geometry, GaussianNegative) {
  Rng rng(9);
  Vec h{1, 2, 3};
  EXPECT_EQ(gaussian_negative(h, rng, 0.0), h);
  auto n = gaussian_negative(h, rng, 0.5);
  EXPECT_NE(n, h);
  EXPECT_THROW(gaussian_negative(h, rng, -1.0), ParameterError);
}

TEST(Geometry, NegativesAreSeedDeterministic) {
  Vec s_i{0.1, 0.2, 0.3}, s_hint{1.0, -1.0, 0.5};
  Rng a(77), b(77);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(make_negative(s_i, s_hint, a).s_neg, make_negative(s_i, s_hint, b).s_neg);
}
