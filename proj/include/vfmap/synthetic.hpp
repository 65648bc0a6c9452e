#pragma once

// Analytic stacked-slice oracle: a strip loaded uniaxially with properties
// varying only along the loading axis carries a uniform uniaxial stress, so
// every point follows the 1-D closed form of linear hardening.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "vfmap/constitutive.hpp"
#include "vfmap/error.hpp"
#include "vfmap/field.hpp"

namespace vfmap {

enum class ProfileShape { uniform, weld, gaussian_deficit };

/// Yield strength as a function of distance d from `center` along the
/// loading axis.
struct YieldProfile {
  ProfileShape shape = ProfileShape::weld;
  double base = 360.0;             ///< [MPa]
  double weld = 420.0;             ///< weld metal [MPa]
  double weld_width = 5.2;         ///< [mm]
  double haz_width = 1.7;          ///< linear transition on each side [mm]
  double deficit_amplitude = 40.0; ///< [MPa]
  double deficit_sigma = 2.0;      ///< [mm]
  double center = kMissing;        ///< position along the loading axis; missing = specimen middle

  double at(double d) const {
    d = std::abs(d);
    switch (shape) {
    case ProfileShape::uniform: return base;
    case ProfileShape::weld: {
      const double h = 0.5 * weld_width;
      if (d <= h) return weld;
      if (haz_width > 0.0 && d < h + haz_width) return weld + (base - weld) * (d - h) / haz_width;
      return base;
    }
    case ProfileShape::gaussian_deficit:
      return base - deficit_amplitude * std::exp(-d * d / (2.0 * deficit_sigma * deficit_sigma));
    }
    return base;
  }
};

struct OracleSpec {
  std::size_t n_rows = 100; ///< along y
  std::size_t n_cols = 36;  ///< along x
  double pitch = 0.5;       ///< [mm]
  double thickness = 1.8;   ///< [mm]
  Axis loading_axis = Axis::y;
  /// Nominal stress per step [MPa]; forces are derived from the cross-section.
  std::vector<double> stress_levels = {150, 250, 330, 370, 400, 430, 460, 490, 520, 550};
  std::vector<double> forces; ///< [N]; overrides stress_levels when non-empty
  YieldProfile yield;
  double hardening = 3700.0; ///< [MPa]
  ElasticProps elastic;
  double noise_sigma = 140e-6;
  std::uint64_t seed = 1;
  double max_stress = kMissing; ///< cap on nominal stress; missing = min yield + 0.2 H

  FieldGrid grid() const {
    return FieldGrid::make(n_rows, n_cols, pitch, pitch, thickness, 0.5 * pitch, 0.5 * pitch);
  }
  /// Cross-section width W (perpendicular to the load).
  double width() const { return grid().cell_extent(loading_axis == Axis::y ? Axis::x : Axis::y); }
  double section_area() const { return thickness * width(); }

  std::vector<double> resolved_forces() const {
    if (!forces.empty()) return forces;
    std::vector<double> f;
    for (double s : stress_levels) f.push_back(s * section_area());
    return f;
  }
  double profile_center() const {
    if (!is_missing(yield.center)) return yield.center;
    return 0.5 * grid().cell_extent(loading_axis);
  }
};

inline ParameterField oracle_parameters(const OracleSpec& spec) {
  const auto g = spec.grid();
  ParameterField k = ParameterField::uniform(g.size(), spec.yield.base, spec.hardening);
  const double c = spec.profile_center();
  for (std::size_t p = 0; p < g.size(); ++p) {
    const double s = spec.loading_axis == Axis::y ? g.y_of(p) : g.x_of(p);
    k.yield_strength[p] = spec.yield.at(s - c);
  }
  return k;
}

struct OracleData {
  StrainHistory strains;
  ParameterField target;
};

/// 1-D closed form: total strain along and across the load for a nominal
/// stress on a monotonic path.
struct UniaxialStrain {
  double along = 0.0, across = 0.0, plastic = 0.0;
};

inline UniaxialStrain uniaxial_closed_form(double stress, double yield, double hardening, const ElasticProps& el) {
  UniaxialStrain u;
  if (stress > yield) {
    if (!(hardening > 0.0)) throw ValidationError("oracle: stress above yield requires a positive hardening modulus");
    u.plastic = (stress - yield) / hardening;
  }
  u.along = stress / el.young_modulus + u.plastic;
  u.across = -el.poisson_ratio * stress / el.young_modulus - 0.5 * u.plastic;
  return u;
}

inline OracleData generate_stacked_slice(const OracleSpec& spec) {
  spec.elastic.validate();
  const auto g = spec.grid();
  const auto forces = spec.resolved_forces();
  if (forces.empty()) throw ValidationError("oracle.forces: at least one load step is required");
  const double area = spec.section_area();
  auto target = oracle_parameters(spec);
  double min_yield = target.yield_strength[0];
  for (double v : target.yield_strength) min_yield = std::min(min_yield, v);
  if (!(min_yield > 0.0)) throw ValidationError("oracle.yield: profile values must be positive");
  if (!(spec.hardening >= 0.0)) throw ValidationError("oracle.hardening: must be non-negative");
  const double cap = is_missing(spec.max_stress) ? min_yield + 0.2 * spec.hardening : spec.max_stress;
  for (std::size_t t = 0; t < forces.size(); ++t) {
    if (!(forces[t] > 0.0)) throw ValidationError("oracle.forces: force steps must be positive");
    if (t > 0 && !(forces[t] > forces[t - 1])) throw ValidationError("oracle.forces: force steps must increase");
    if (forces[t] / area > cap)
      throw ValidationError("oracle.forces: step " + std::to_string(t + 1) + " exceeds the configured stress cap");
  }

  OracleData out;
  out.target = target;
  out.strains.grid = g;
  out.strains.forces = forces;
  for (double f : forces) {
    const double s = f / area;
    TensorField e(g.size());
    for (std::size_t p = 0; p < g.size(); ++p) {
      const auto u = uniaxial_closed_form(s, target.yield_strength[p], target.hardening_modulus[p], spec.elastic);
      (spec.loading_axis == Axis::y ? e.yy : e.xx)[p] = u.along;
      (spec.loading_axis == Axis::y ? e.xx : e.yy)[p] = u.across;
    }
    out.strains.steps.push_back(std::move(e));
  }
  return out;
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double unit_open(std::uint64_t bits) { return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53; }

} // namespace detail

/// Standard normal variate keyed by (seed, step, point, component).
inline double counter_normal(std::uint64_t seed, std::uint64_t step, std::uint64_t point, std::uint64_t comp) {
  std::uint64_t k = detail::splitmix64(seed);
  k = detail::splitmix64(k ^ step);
  k = detail::splitmix64(k ^ point);
  k = detail::splitmix64(k ^ comp);
  const double u1 = detail::unit_open(k);
  const double u2 = detail::unit_open(detail::splitmix64(k ^ 0x5851f42d4c957f2dULL));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline StrainHistory add_strain_noise(const StrainHistory& h, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ValidationError("noise sigma must be non-negative");
  StrainHistory out = h;
  if (sigma == 0.0) return out;
  for (std::size_t t = 0; t < out.n_steps(); ++t) {
    auto& e = out.steps[t];
    for (std::size_t p = 0; p < e.size(); ++p) {
      e.xx[p] += sigma * counter_normal(seed, t, p, 0);
      e.yy[p] += sigma * counter_normal(seed, t, p, 1);
      e.xy[p] += sigma * counter_normal(seed, t, p, 2);
    }
  }
  return out;
}

/// Clean oracle followed by noise injection with the spec's sigma and seed.
inline OracleData generate_noisy_oracle(const OracleSpec& spec) {
  auto d = generate_stacked_slice(spec);
  d.strains = add_strain_noise(d.strains, spec.noise_sigma, spec.seed);
  return d;
}

} // namespace vfmap
