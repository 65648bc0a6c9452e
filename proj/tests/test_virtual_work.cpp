#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "support.hpp"
#include "vfmap/synthetic.hpp"
#include "vfmap/virtual_work.hpp"

using namespace vfmap;
using vfmap::testing::Rng;

namespace {

struct OracleCase {
  OracleSpec spec;
  OracleData data;
  StressHistory stress;
};

OracleCase weld_oracle() {
  OracleCase c;
  c.spec.n_rows = 60;
  c.spec.n_cols = 18;
  c.data = generate_stacked_slice(c.spec);
  c.stress = reconstruct_stress_history(c.data.strains, c.data.target, c.spec.elastic);
  return c;
}

StressHistory single_step(const StressHistory& s, std::size_t t) {
  StressHistory out = s;
  out.steps = {s.steps[t]};
  out.eq_plastic = {s.eq_plastic[t]};
  out.forces = {s.forces[t]};
  return out;
}

} // namespace

TEST(InternalWork, ZeroAndUniformFields) {
  const auto g = FieldGrid::make(6, 4, 0.5, 0.5, 2.0);
  TensorField s(g.size());
  std::fill(s.yy.begin(), s.yy.end(), 300.0);
  VirtualField zero{"z", TensorField(g.size()), 0, 0};
  EXPECT_EQ(internal_virtual_work(s, zero, g), 0.0);
  VirtualField one{"u", TensorField(g.size()), 0, 0};
  std::fill(one.strain.yy.begin(), one.strain.yy.end(), 1.0);
  EXPECT_NEAR(internal_virtual_work(s, one, g), -2.0 * 300.0 * (3.0 * 2.0), 1e-10);
}

TEST(InternalWork, LinearInStressAndShearCountedTwice) {
  Rng rng(1);
  auto g = FieldGrid::make(5, 5, 0.4, 0.6, 1.3);
  g.mask[3] = 0;
  TensorField a(g.size()), b(g.size()), ab(g.size());
  VirtualField vf{"r", TensorField(g.size()), 0, 0};
  for (std::size_t p = 0; p < g.size(); ++p) {
    a.xx[p] = rng.uniform(-1, 1);
    a.yy[p] = rng.uniform(-1, 1);
    a.xy[p] = rng.uniform(-1, 1);
    b.xx[p] = rng.uniform(-1, 1);
    b.yy[p] = rng.uniform(-1, 1);
    b.xy[p] = rng.uniform(-1, 1);
    ab.xx[p] = a.xx[p] + b.xx[p];
    ab.yy[p] = a.yy[p] + b.yy[p];
    ab.xy[p] = a.xy[p] + b.xy[p];
    vf.strain.xx[p] = rng.uniform(-1, 1);
    vf.strain.yy[p] = rng.uniform(-1, 1);
    vf.strain.xy[p] = rng.uniform(-1, 1);
  }
  EXPECT_NEAR(internal_virtual_work(ab, vf, g), internal_virtual_work(a, vf, g) + internal_virtual_work(b, vf, g),
              1e-12);
  double oracle = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p)
    if (p != 3)
      oracle += a.xx[p] * vf.strain.xx[p] + a.yy[p] * vf.strain.yy[p] + 2 * a.xy[p] * vf.strain.xy[p];
  EXPECT_NEAR(internal_virtual_work(a, vf, g), -1.3 * 0.4 * 0.6 * oracle, 1e-12);
}

TEST(ExternalWork, Examples) {
  VirtualField vf{"s", {}, 0, 0};
  EXPECT_EQ(external_virtual_work({0, 500}, vf), 0.0);
  vf.u_y = 2.5;
  EXPECT_EQ(external_virtual_work(applied_force(500, Axis::y), vf), 1250.0);
  EXPECT_EQ(external_virtual_work(applied_force(-500, Axis::y), vf), -1250.0);
  EXPECT_EQ(external_virtual_work(applied_force(500, Axis::x), vf), 0.0);
}

TEST(SbvfCost, OracleBalancesSliceFields) {
  const auto c = weld_oracle();
  const auto slices = make_slices(c.stress.grid, Axis::y, 5);
  std::vector<VirtualField> vfs;
  for (const auto& sl : slices.slices) vfs.push_back(slice_virtual_field(c.stress.grid, sl, Axis::y));
  vfs.push_back(uniform_extension_field(c.stress.grid, Axis::y));
  vfs.push_back(transverse_contraction_field(c.stress.grid, Axis::y));
  const double wf = slices.slices[0].width * c.stress.forces.back();
  for (double r : sbvf_residuals(c.stress, vfs, Axis::y)) EXPECT_LT(r * r, 1e-18 * wf * wf);
}

TEST(SbvfCost, ScaledStressGivesSquaredDefect) {
  const auto c = weld_oracle();
  const auto s1 = single_step(c.stress, 6);
  const auto slices = make_slices(s1.grid, Axis::y, 5);
  const std::vector<VirtualField> vfs{slice_virtual_field(s1.grid, slices.slices[2], Axis::y)};
  for (double k : {0.9, 1.3}) {
    auto sc = s1;
    for (auto& v : sc.steps[0].yy) v *= k;
    const double uf = vfs[0].u_y * s1.forces[0];
    EXPECT_NEAR(sbvf_cost(sc, vfs, Axis::y), (k - 1) * (k - 1) * uf * uf, 1e-8 * uf * uf);
  }
}

TEST(SbvfCost, DuplicationPermutationAndHomogeneity) {
  Rng rng(3);
  auto c = weld_oracle();
  for (auto& st : c.stress.steps)
    for (auto& v : st.yy) v *= rng.uniform(0.95, 1.05);
  const auto g = c.stress.grid;
  const auto slices = make_slices(g, Axis::y, 5);
  std::vector<VirtualField> vfs{slice_virtual_field(g, slices.slices[1], Axis::y),
                                uniform_extension_field(g, Axis::y),
                                transverse_contraction_field(g, Axis::y)};
  const double base = sbvf_cost(c.stress, vfs, Axis::y);
  ASSERT_GT(base, 0.0);

  auto doubled = vfs;
  doubled.insert(doubled.end(), vfs.begin(), vfs.end());
  EXPECT_NEAR(sbvf_cost(c.stress, doubled, Axis::y), 2 * base, 1e-12 * base);

  auto perm = vfs;
  std::reverse(perm.begin(), perm.end());
  auto shuffled = c.stress;
  std::reverse(shuffled.steps.begin(), shuffled.steps.end());
  std::reverse(shuffled.forces.begin(), shuffled.forces.end());
  EXPECT_NEAR(sbvf_cost(shuffled, perm, Axis::y), base, 1e-12 * base);

  auto scaled = vfs;
  for (auto& vf : scaled) {
    for (auto& v : vf.strain.xx) v *= 3.0;
    for (auto& v : vf.strain.yy) v *= 3.0;
    for (auto& v : vf.strain.xy) v *= 3.0;
    vf.u_x *= 3.0;
    vf.u_y *= 3.0;
  }
  EXPECT_NEAR(sbvf_cost(c.stress, scaled, Axis::y), 9 * base, 1e-10 * base);
}

TEST(Sbvf, ZeroSensitivityGivesZeroField) {
  const auto g = FieldGrid::make(40, 16, 0.5, 0.5, 1);
  const std::vector<std::vector<TensorField>> sens{{TensorField(g.size()), TensorField(g.size())}};
  const auto vfs = build_sensitivity_virtual_fields(sens, {1, 1}, g, Axis::y);
  ASSERT_EQ(vfs.size(), 1u);
  for (double v : vfs[0].strain.yy) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(vfs[0].u_y, 0.0);
}

TEST(Sbvf, UniformSensitivityRecoversUniformExtension) {
  const auto g = FieldGrid::make(40, 16, 0.5, 0.5, 1);
  std::vector<TensorField> steps(3, TensorField(g.size()));
  for (auto& s : steps) std::fill(s.yy.begin(), s.yy.end(), 2.0);
  const auto vfs = build_sensitivity_virtual_fields({steps}, force_weights({1, 2, 3}), g, Axis::y);
  const auto ext = uniform_extension_field(g, Axis::y);
  const double L = g.cell_extent(Axis::y);
  for (std::size_t p = 0; p < g.size(); ++p) {
    EXPECT_NEAR(vfs[0].strain.yy[p], L * ext.strain.yy[p], 1e-10);
    EXPECT_NEAR(vfs[0].strain.xx[p], 0.0, 1e-10);
    EXPECT_NEAR(vfs[0].strain.xy[p], 0.0, 1e-10);
  }
  EXPECT_NEAR(vfs[0].u_y, L, 1e-9);
  EXPECT_NEAR(vfs[0].u_x, 0.0, 1e-10);
}

TEST(Sbvf, ProjectedFieldsSatisfyVirtualWorkOnUniformStress) {
  // Kinematic admissibility: u* = 0 on the fixed end and one shared value on
  // the loaded end make any projected field balance a uniform stress.
  Rng rng(4);
  const auto c = weld_oracle();
  const auto g = c.stress.grid;
  std::vector<std::vector<TensorField>> sens(3, std::vector<TensorField>(c.stress.n_steps(), TensorField(g.size())));
  for (auto& k : sens)
    for (auto& s : k)
      for (std::size_t p = 0; p < g.size(); ++p) {
        s.xx[p] = rng.uniform(-1, 1);
        s.yy[p] = rng.uniform(-1, 1);
        s.xy[p] = rng.uniform(-1, 1);
      }
  const auto vfs = build_sensitivity_virtual_fields(sens, force_weights(c.stress.forces), g, Axis::y);
  const auto res = sbvf_residuals(c.stress, vfs, Axis::y);
  for (std::size_t i = 0; i < res.size(); ++i) {
    const auto& vf = vfs[i / c.stress.n_steps()];
    const double scale = std::abs(vf.u_y) * c.stress.forces[i % c.stress.n_steps()] + 1.0;
    EXPECT_LT(std::abs(res[i]), 1e-9 * scale);
  }
  for (const auto& vf : vfs) {
    double sq = 0.0;
    for (std::size_t p = 0; p < g.size(); ++p)
      sq += vf.strain.xx[p] * vf.strain.xx[p] + vf.strain.yy[p] * vf.strain.yy[p] + 2 * vf.strain.xy[p] * vf.strain.xy[p];
    EXPECT_NEAR(std::sqrt(sq / static_cast<double>(g.size())), 1.0, 1e-12);
  }
}

TEST(Sbvf, MeshFinerThanDataIsSingular) {
  const auto g = FieldGrid::make(6, 4, 0.5, 0.5, 1);
  std::vector<TensorField> steps(1, TensorField(g.size()));
  std::fill(steps[0].yy.begin(), steps[0].yy.end(), 1.0);
  EXPECT_THROW(build_sensitivity_virtual_fields({steps}, {1}, g, Axis::y, {8, 20}), NumericError);
}

TEST(Sbvf, LoadAlongX) {
  const auto g = FieldGrid::make(16, 40, 0.5, 0.5, 1);
  std::vector<TensorField> steps(1, TensorField(g.size()));
  std::fill(steps[0].xx.begin(), steps[0].xx.end(), 1.0);
  const auto vfs = build_sensitivity_virtual_fields({steps}, {1}, g, Axis::x);
  EXPECT_NEAR(vfs[0].u_x, g.cell_extent(Axis::x), 1e-9);
  EXPECT_NEAR(vfs[0].strain.xx[17], 1.0, 1e-10);
}
