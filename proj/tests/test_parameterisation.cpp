#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"
#include "vfmap/parameterisation.hpp"

using namespace vfmap;
using vfmap::testing::Rng;

namespace {

GaussianBasis univariate(double cx, double cy, double w, double var) {
  GaussianBasis b;
  b.center_x = cx;
  b.center_y = cy;
  b.weight = w;
  b.var_1 = b.var_2 = var;
  return b;
}

GaussianBasis bivariate(double cx, double cy, double w, double v1, double v2, double angle) {
  GaussianBasis b = univariate(cx, cy, w, v1);
  b.var_2 = v2;
  b.angle = angle;
  b.kind = BasisKind::bivariate;
  return b;
}

// exp(-1/2 d^T Sigma^-1 d) with Sigma assembled from its eigen-decomposition
// and inverted by the 2x2 adjugate formula.
double gaussian_oracle(double x, double y, double cx, double cy, double v1, double v2, double th) {
  const double c = std::cos(th), s = std::sin(th);
  const double a = c * c * v1 + s * s * v2, b = c * s * (v1 - v2), d = s * s * v1 + c * c * v2;
  const double det = a * d - b * b;
  const double ia = d / det, ib = -b / det, id = a / det;
  const double dx = x - cx, dy = y - cy;
  return std::exp(-0.5 * (ia * dx * dx + 2 * ib * dx * dy + id * dy * dy));
}

ParameterSpec heterogeneous_yield(const FloorPlusBases& f) {
  ParameterSpec s;
  s.yield = {Designation::heterogeneous, f};
  s.hardening = {Designation::homogeneous, Homogeneous{3700.0}};
  return s;
}

} // namespace

TEST(Evaluate, FloorPlusSingleBasisAtCenter) {
  const auto g = FieldGrid::make(101, 101, 1.0, 1.0, 1.0);
  FloorPlusBases f{100.0, {univariate(50, 50, 100, 100)}};
  const auto v = evaluate_field(f, g);
  EXPECT_DOUBLE_EQ(v[g.index(50, 50)], 200.0);
}

TEST(Evaluate, FarFieldReturnsFloor) {
  const auto g = FieldGrid::make(1, 1, 1.0, 1.0, 1.0, 50.0 + 10.0 * 10.0, 50.0);
  FloorPlusBases f{100.0, {univariate(50, 50, 100, 100)}};
  EXPECT_NEAR(evaluate_field(f, g)[0], 100.0, 1e-10);
}

TEST(Evaluate, BivariateMatchesCovarianceOracle) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const double v1 = rng.uniform(0.5, 50), v2 = rng.uniform(0.5, 50), th = rng.uniform(-1.5, 1.5);
    const auto b = bivariate(3, -2, 1.0, v1, v2, th);
    const double x = rng.uniform(-10, 15), y = rng.uniform(-12, 8);
    EXPECT_NEAR(b.shape(x, y), gaussian_oracle(x, y, 3, -2, v1, v2, th), 1e-12);
  }
}

TEST(Evaluate, IsotropicBivariateEqualsUnivariate) {
  Rng rng(3);
  const auto g = FieldGrid::make(20, 15, 0.5, 0.5, 1.0);
  for (int i = 0; i < 20; ++i) {
    const double var = rng.uniform(0.3, 30), th = rng.uniform(-1.57, 1.57);
    const FloorPlusBases a{10.0, {univariate(3, 4, 25, var)}};
    const FloorPlusBases b{10.0, {bivariate(3, 4, 25, var, var, th)}};
    const auto va = evaluate_field(a, g), vb = evaluate_field(b, g);
    for (std::size_t p = 0; p < g.size(); ++p) EXPECT_NEAR(va[p], vb[p], 1e-12);
  }
}

TEST(Evaluate, Superposition) {
  Rng rng(4);
  const auto g = FieldGrid::make(12, 9, 0.8, 0.8, 1.0);
  for (int i = 0; i < 10; ++i) {
    FloorPlusBases all{rng.uniform(100, 400), {}}, a{all.floor, {}}, b{0.0, {}};
    for (int j = 0; j < 5; ++j) {
      const auto basis = bivariate(rng.uniform(0, 7), rng.uniform(0, 9), rng.uniform(-50, 50), rng.uniform(0.5, 20),
                                   rng.uniform(0.5, 20), rng.uniform(-1.5, 1.5));
      all.bases.push_back(basis);
      (j % 2 ? a : b).bases.push_back(basis);
    }
    const auto v = evaluate_field(all, g), va = evaluate_field(a, g), vb = evaluate_field(b, g);
    for (std::size_t p = 0; p < g.size(); ++p) EXPECT_NEAR(v[p], va[p] + vb[p], 1e-10);
  }
}

TEST(Evaluate, TranslationEquivariance) {
  Rng rng(5);
  for (int i = 0; i < 10; ++i) {
    const double sx = rng.uniform(-20, 20), sy = rng.uniform(-20, 20);
    const auto g = FieldGrid::make(8, 6, 0.5, 0.5, 1.0, 1.0, 2.0);
    const auto gs = FieldGrid::make(8, 6, 0.5, 0.5, 1.0, 1.0 + sx, 2.0 + sy);
    auto b = bivariate(2, 3, 40, 4, 9, 0.3);
    const FloorPlusBases f{300, {b}};
    b.center_x += sx;
    b.center_y += sy;
    const FloorPlusBases fs{300, {b}};
    const auto v = evaluate_field(f, g), vs = evaluate_field(fs, gs);
    for (std::size_t p = 0; p < g.size(); ++p) EXPECT_NEAR(v[p], vs[p], 1e-9);
  }
}

TEST(Evaluate, MeshPiecewiseConstantAndRefinementIdempotent) {
  const auto g = FieldGrid::make(20, 10, 0.5, 0.5, 1.0);
  auto m = ZeroOrderMesh::covering(g, 2, 4, 0.0);
  for (std::size_t e = 0; e < m.values.size(); ++e) m.values[e] = 100.0 + static_cast<double>(e);
  const auto v = evaluate_field(m, g);
  for (std::size_t p = 0; p < g.size(); ++p) {
    const double v_expected = m.values[m.element_of(g.x_of(p), g.y_of(p))];
    EXPECT_EQ(v[p], v_expected);
  }
  EXPECT_EQ(v[g.index(0, 0)], 100.0);
  EXPECT_EQ(v[g.index(19, 9)], 107.0);
  const auto r = evaluate_field(m.refined(3, 2), g);
  EXPECT_EQ(r, v);
}

TEST(Evaluate, KnownMapMustMatchGrid) {
  const auto g = FieldGrid::make(2, 2, 1, 1, 1);
  EXPECT_THROW(evaluate_field(Known{{1, 2, 3}}, g), ShapeError);
}

TEST(Dofs, CountsPerScheme) {
  FloorPlusBases one{300, {bivariate(0, 0, 1, 1, 1, 0)}};
  EXPECT_EQ(pack_dofs(heterogeneous_yield(one), {}).size(), 8u);

  FloorPlusBases four{300, {}};
  for (int j = 0; j < 4; ++j) four.bases.push_back(univariate(j, j, 1, 1));
  EXPECT_EQ(pack_dofs(heterogeneous_yield(four), {}).size(), 18u);

  ParameterSpec known;
  known.yield = {Designation::known, Known{{1.0}}};
  known.hardening = {Designation::known, Known{{1.0}}};
  EXPECT_TRUE(pack_dofs(known, {}).empty());
}

TEST(Dofs, HeterogeneousWithoutSchemeRejected) {
  ParameterSpec s;
  s.yield = {Designation::heterogeneous, Homogeneous{300}};
  EXPECT_THROW(pack_dofs(s, {}), ValidationError);
}

TEST(Dofs, PackUnpackRoundTrip) {
  Rng rng(6);
  FloorPlusBases f{320, {bivariate(1, 2, 30, 4, 5, 0.2), univariate(3, 4, -20, 6)}};
  const auto spec = heterogeneous_yield(f);
  const auto g = FieldGrid::make(10, 10, 0.5, 0.5, 1.0);
  const auto bounds = DofBoundsPolicy::for_grid(g, 320, 3700);
  auto d = pack_dofs(spec, bounds);
  for (int trial = 0; trial < 20; ++trial) {
    for (std::size_t i = 0; i < d.size(); ++i) d.values[i] = rng.uniform(d.lower[i], d.upper[i]);
    const auto back = pack_dofs(unpack_dofs(spec, d), bounds);
    EXPECT_EQ(back.values, d.values);
    EXPECT_EQ(back.lower, d.lower);
    const auto z = d.to_search(d.values);
    const auto x = d.from_search(z);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], d.values[i], 1e-12 * std::abs(d.values[i]));
  }
}

TEST(Dofs, UnpackRejectsMismatchedLayout) {
  const auto spec = heterogeneous_yield({320, {univariate(0, 0, 1, 1)}});
  auto d = pack_dofs(spec, {});
  d.values.push_back(1.0);
  d.labels.push_back({Param::hardening_modulus, DofRole::homogeneous, 0});
  EXPECT_THROW(unpack_dofs(spec, d), ShapeError);
}

TEST(Dofs, BoundsFollowPolicy) {
  const auto g = FieldGrid::make(100, 36, 0.5, 0.5, 1.8);
  const auto b = DofBoundsPolicy::for_grid(g, 360, 3700);
  EXPECT_DOUBLE_EQ(b.var_min, 1.0);
  EXPECT_DOUBLE_EQ(b.var_max, 50.0 * 50.0 + 18.0 * 18.0);
  const auto d = pack_dofs(heterogeneous_yield({360, {bivariate(5, 5, 10, 4, 4, 0)}}), b);
  EXPECT_DOUBLE_EQ(d.lower[0], 72.0);
  EXPECT_DOUBLE_EQ(d.upper[0], 1080.0);
  EXPECT_DOUBLE_EQ(d.lower[3], -360.0);
  EXPECT_DOUBLE_EQ(d.upper[3], 360.0);
  EXPECT_DOUBLE_EQ(d.lower[6], -std::numbers::pi / 2);
  EXPECT_TRUE(d.labels[4].log_scaled());
  EXPECT_EQ(d.labels[4].name(), "yield_strength.var_1[0]");
}

TEST(Insert, IntoEmptyAndZeroWeightNeutral) {
  const auto g = FieldGrid::make(10, 10, 0.5, 0.5, 1.0);
  const FloorPlusBases empty{300, {}};
  const auto one = insert_basis(empty, 2.0, 3.0, {0.0, 4.0, BasisKind::bivariate});
  ASSERT_EQ(one.bases.size(), 1u);
  EXPECT_EQ(one.bases[0].center_x, 2.0);
  EXPECT_EQ(one.bases[0].center_y, 3.0);
  EXPECT_EQ(evaluate_field(one, g), evaluate_field(empty, g));
}

TEST(Insert, RepeatedCenterSuperposes) {
  const auto g = FieldGrid::make(10, 10, 0.5, 0.5, 1.0);
  const FloorPlusBases base{300, {}};
  const auto once = insert_basis(base, 2.0, 2.0, {20.0, 4.0, BasisKind::univariate});
  const auto twice = insert_basis(once, 2.0, 2.0, {20.0, 4.0, BasisKind::univariate});
  EXPECT_EQ(twice.bases[0].weight, once.bases[0].weight);
  const auto v1 = evaluate_field(once, g), v2 = evaluate_field(twice, g);
  for (std::size_t p = 0; p < g.size(); ++p) EXPECT_NEAR(v2[p] - 300.0, 2.0 * (v1[p] - 300.0), 1e-12);
}

TEST(Insert, DefaultInitialisation) {
  const auto pos = default_basis_init(360.0, +1, 18.0, BasisKind::bivariate);
  EXPECT_DOUBLE_EQ(pos.weight, 36.0);
  EXPECT_NEAR(pos.variance, 3.6 * 3.6, 1e-12);
  EXPECT_DOUBLE_EQ(default_basis_init(360.0, -1, 18.0, BasisKind::bivariate).weight, -36.0);
}

TEST(Basis, InvalidVarianceOrAngleRejected) {
  auto b = univariate(0, 0, 1, 0.0);
  EXPECT_THROW(b.validate(), ValidationError);
  b = bivariate(0, 0, 1, 1, 1, 2.0);
  EXPECT_THROW(b.validate(), ValidationError);
}
