#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "latentcl/analysis/analysis.hpp"

using namespace latentcl;
using namespace latentcl::analysis;

namespace {

// Cyclic Jacobi eigen-decomposition of a symmetric matrix; columns of the
// returned vectors are eigenvectors, sorted by descending eigenvalue.
std::pair<Vec, std::vector<Vec>> jacobi_eigen(std::vector<Vec> a) {
  const std::size_t n = a.size();
  std::vector<Vec> v(n, Vec(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](auto x, auto y) { return a[x][x] > a[y][y]; });
  Vec vals;
  std::vector<Vec> vecs;
  for (auto i : idx) {
    vals.push_back(a[i][i]);
    Vec col(n);
    for (std::size_t k = 0; k < n; ++k) col[k] = v[k][i];
    vecs.push_back(col);
  }
  return {vals, vecs};
}

double dist2(const Point2& a, const Point2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

}  // namespace

TEST(Dispersion, ClosedForms) {
  EXPECT_EQ(centroid_dispersion({{{1, 1}, {1, 1}, {1, 1}}}).overall, 0.0);
  EXPECT_DOUBLE_EQ(centroid_dispersion({{{0, 0}, {2, 0}}}).overall, 1.0);
  EXPECT_NEAR(centroid_dispersion({{{0, 0}, {0, 2}, {2, 0}, {2, 2}}}).overall, std::sqrt(2.0), 1e-15);
  EXPECT_THROW(centroid_dispersion({{}}), ContractError);
}

TEST(Dispersion, OverallIsCountWeighted) {
  auto r = centroid_dispersion({{{0, 0}, {2, 0}}, {{0, 0}, {0, 4}, {0, 2}, {0, 2}}});
  EXPECT_EQ(r.counts, (std::vector<std::size_t>{2, 4}));
  EXPECT_NEAR(r.overall, (2 * r.per_step[0] + 4 * r.per_step[1]) / 6, 1e-15);
}

TEST(Dispersion, TranslationInvariantAndLinearInScale) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<Vec>> g(3);
    for (auto& grp : g)
      for (int i = 0; i < 6; ++i) grp.push_back(rng.normal_vector(5));
    const auto base = centroid_dispersion(g);
    Vec shift = rng.normal_vector(5);
    const double c = rng.uniform(-3.0, 3.0);
    auto moved = g, scaled = g;
    for (auto& grp : moved)
      for (auto& p : grp)
        for (std::size_t i = 0; i < 5; ++i) p[i] += shift[i];
    for (auto& grp : scaled)
      for (auto& p : grp)
        for (auto& x : p) x *= c;
    EXPECT_NEAR(centroid_dispersion(moved).overall, base.overall, 1e-9);
    EXPECT_NEAR(centroid_dispersion(scaled).overall, std::abs(c) * base.overall, 1e-9 * base.overall * std::max(1.0, std::abs(c)));
  }
}

TEST(Pca2, LineHasZeroSecondCoordinate) {
  std::vector<Vec> pts;
  for (int i = 0; i < 10; ++i) pts.push_back({1.0 + 2.0 * i, -1.0 + 0.5 * i, 3.0 * i});
  auto r = pca2(pts);
  for (auto& p : r.coords) EXPECT_NEAR(p[1], 0.0, 1e-8);
}

TEST(Pca2, MatchesExactEigenOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 3 + rng.uniform_int(3);
    // Anisotropic cloud with separated variances, then a random rotation via the oracle's basis.
    std::vector<Vec> pts;
    for (int i = 0; i < 5; ++i) {
      Vec p = rng.normal_vector(d);
      for (std::size_t j = 0; j < d; ++j) p[j] *= std::pow(0.35, static_cast<double>(j));
      pts.push_back(p);
    }
    auto r = pca2(pts);
    Vec mean(d, 0.0);
    for (auto& p : pts)
      for (std::size_t j = 0; j < d; ++j) mean[j] += p[j] / 5;
    std::vector<Vec> cov(d, Vec(d, 0.0));
    for (auto& p : pts)
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]) / 5;
    auto [vals, vecs] = jacobi_eigen(cov);
    if (vals[0] - vals[1] < 0.05 * vals[0] || vals[1] - vals[2] < 0.05 * vals[0]) continue;  // ill-separated draw
    std::vector<Point2> oracle;
    for (auto& p : pts) {
      Point2 q{0, 0};
      for (int a = 0; a < 2; ++a)
        for (std::size_t j = 0; j < d; ++j) q[a] += (p[j] - mean[j]) * vecs[a][j];
      oracle.push_back(q);
    }
    for (std::size_t i = 0; i < 5; ++i) {
      for (int a = 0; a < 2; ++a) EXPECT_NEAR(std::abs(r.coords[i][a]), std::abs(oracle[i][a]), 1e-6);
      for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(dist2(r.coords[i], r.coords[j]), dist2(oracle[i], oracle[j]), 1e-6);
    }
  }
}

TEST(Pca2, RotationPreservesPairwiseDistances) {
  Rng rng(3);
  std::vector<Vec> pts;
  for (int i = 0; i < 6; ++i) pts.push_back({3.0 * rng.normal(), 1.0 * rng.normal()});
  const double a = 0.7;
  std::vector<Vec> rot;
  for (auto& p : pts) rot.push_back({std::cos(a) * p[0] - std::sin(a) * p[1], std::sin(a) * p[0] + std::cos(a) * p[1]});
  auto r1 = pca2(pts), r2 = pca2(rot);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) EXPECT_NEAR(dist2(r1.coords[i], r1.coords[j]), dist2(r2.coords[i], r2.coords[j]), 1e-8);
}

TEST(Pca2, DuplicatesProjectIdentically) {
  std::vector<Vec> pts{{1, 2, 3}, {1, 2, 3}, {0, 1, -1}, {2, 0, 1}};
  auto r = pca2(pts);
  EXPECT_EQ(r.coords[0], r.coords[1]);
}

TEST(Pca2, Errors) {
  EXPECT_THROW(pca2({{1, 1}, {1, 1}, {1, 1}}), DegenerateDataError);
  EXPECT_THROW(pca2({{1, 1}, {2, 1}}), ContractError);
  EXPECT_THROW(pca2({{1}, {2}, {3}}), ContractError);
}

class ModelAnalysis : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(4);
    params = latentmodel::ModelParams::init({}, rng);
    taskgen::GeneratorOptions opt;
    opt.count = 12;
    items = taskgen::generate(Rng(5), opt);
  }
  latentmodel::ModelParams params;
  std::vector<taskgen::MazeInstance> items;
};

TEST_F(ModelAnalysis, NoiseTableShapeAndZeroSigmaIsClean) {
  auto rows = noise_robustness(params, items, 8, {0.0, 0.5, 2.0}, {1, 2});
  EXPECT_EQ(rows.size(), 6u);
  const double clean = evaluate(params, items, 8).accuracy;
  EXPECT_EQ(rows[0].accuracy, clean);
  EXPECT_EQ(rows[1].accuracy, clean);
  EXPECT_THROW(noise_robustness(params, items, 8, {0.5, 0.0}, {1}), ParameterError);
  auto sum = summarize(rows);
  ASSERT_EQ(sum.size(), 3u);
  EXPECT_EQ(sum[0].mean, clean);
}

TEST_F(ModelAnalysis, GreedyStudyHasZeroDispersion) {
  auto r = rollout_dispersion_study(params, items, 8, {.cases = 4, .repeats = 3, .temperature = 0.0});
  EXPECT_EQ(r.overall, 0.0);
  EXPECT_EQ(r.per_step.size(), 8u);
  auto s = rollout_dispersion_study(params, items, 8, {.cases = 4, .repeats = 3, .temperature = 1.2});
  EXPECT_GT(s.overall, 0.0);
  EXPECT_THROW(rollout_dispersion_study(params, items, 8, {.repeats = 1}), ContractError);
}

TEST_F(ModelAnalysis, EvaluateDeterministicAndRejectsEmpty) {
  auto a = evaluate(params, items, 8), b = evaluate(params, items, 8);
  EXPECT_EQ(a.correct, b.correct);
  EXPECT_EQ(a.answers, b.answers);
  EXPECT_THROW(evaluate(params, {}, 8), ContractError);
}

TEST(Svg, ContainsPointsAndLegend) {
  auto svg = scatter_svg({{0, 0}, {1, 1}}, {0, 1}, {0.5, 0.25}, "latents");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_EQ(std::count(svg.begin(), svg.end(), '\n') > 4, true);
  EXPECT_NE(svg.find("step 1: 0.25"), std::string::npos);
}
