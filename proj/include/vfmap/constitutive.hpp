#pragma once

// Plane-stress von Mises elastoplasticity with linear isotropic hardening.
//
// The plastic correction follows the plane-stress-projected return map: with
// the trial stress written in the basis (s11 + s22, s22 - s11, s12) the
// operator (I + dgamma * D * P) is diagonal, so the updated stress is a
// per-component rescaling of the trial stress and only the scalar plastic
// multiplier has to be solved for.

#include <cmath>
#include <string>
#include <vector>

#include "vfmap/error.hpp"
#include "vfmap/field.hpp"
#include "vfmap/parallel.hpp"

namespace vfmap {

struct ElasticProps {
  double young_modulus = 190000.0; ///< E [MPa]
  double poisson_ratio = 0.28;

  void validate() const {
    if (!(young_modulus > 0.0)) throw ValidationError("Young's modulus must be positive");
    if (!(poisson_ratio >= 0.0 && poisson_ratio < 0.5)) throw ValidationError("Poisson's ratio must lie in [0, 0.5)");
  }
  double shear_modulus() const { return young_modulus / (2.0 * (1.0 + poisson_ratio)); }
};

/// In-plane symmetric tensor at one point (tensorial shear).
struct Sym2 {
  double xx = 0.0, yy = 0.0, xy = 0.0;
};

inline double von_mises_stress(const Sym2& s) {
  return std::sqrt(s.xx * s.xx - s.xx * s.yy + s.yy * s.yy + 3.0 * s.xy * s.xy);
}

inline Sym2 plane_stress_hooke(const Sym2& eps, const ElasticProps& el) {
  const double c = el.young_modulus / (1.0 - el.poisson_ratio * el.poisson_ratio);
  return {c * (eps.xx + el.poisson_ratio * eps.yy), c * (eps.yy + el.poisson_ratio * eps.xx),
          2.0 * el.shear_modulus() * eps.xy};
}

/// Internal variables of one material point.
struct PointState {
  double ep_xx = 0.0, ep_yy = 0.0, ep_xy = 0.0, ep_zz = 0.0;
  double eq_plastic = 0.0;
};

struct ReturnOptions {
  double tolerance = 1e-10; ///< on |sigma_vm - kappa| relative to the initial yield strength
  int max_iterations = 50;
};

struct ReturnResult {
  Sym2 stress;
  PointState state;
  bool plastic = false;
  int iterations = 0;
};

/// One stress update. `total_strain` is the total in-plane strain at the
/// current step; the trial stress D (eps - eps_p) equals the previous stress
/// plus the elastic response to the strain increment.
inline ReturnResult radial_return_step(const Sym2& total_strain, const PointState& prior, const ElasticProps& el,
                                       double yield_strength, double hardening, const ReturnOptions& opt = {}) {
  const Sym2 elastic_strain{total_strain.xx - prior.ep_xx, total_strain.yy - prior.ep_yy,
                            total_strain.xy - prior.ep_xy};
  const Sym2 trial = plane_stress_hooke(elastic_strain, el);
  const double kappa_n = yield_strength + hardening * prior.eq_plastic;
  const double vm_trial = von_mises_stress(trial);

  ReturnResult res;
  if (vm_trial - kappa_n <= 0.0) {
    res.stress = trial;
    res.state = prior;
    return res;
  }

  const double E = el.young_modulus, nu = el.poisson_ratio, G = el.shear_modulus();
  const double sum_t = trial.xx + trial.yy;
  const double dif_t = trial.yy - trial.xx;
  const double a1 = sum_t * sum_t;
  const double dev = 0.5 * dif_t * dif_t + 2.0 * trial.xy * trial.xy;
  const double k1 = E / (3.0 * (1.0 - nu));

  // residual r(g) = sigma_vm(g) - kappa(g) and its derivative
  auto eval = [&](double g, double& r, double& dr) {
    const double d1 = 1.0 + k1 * g, d2 = 1.0 + 2.0 * G * g;
    const double xi = a1 / (6.0 * d1 * d1) + dev / (d2 * d2);
    const double dxi = -a1 * k1 / (3.0 * d1 * d1 * d1) - 4.0 * G * dev / (d2 * d2 * d2);
    const double vm = std::sqrt(1.5 * xi);
    const double dvm = vm > 0.0 ? 0.75 * dxi / vm : 0.0;
    const double eq = prior.eq_plastic + g * (2.0 / 3.0) * vm;
    const double deq = (2.0 / 3.0) * (vm + g * dvm);
    r = vm - (yield_strength + hardening * eq);
    dr = dvm - hardening * deq;
  };

  double lo = 0.0, hi = 1.0 / (2.0 * G) * 1e-3;
  double r = 0.0, dr = 0.0;
  for (int i = 0;; ++i) {
    eval(hi, r, dr);
    if (r < 0.0) break;
    lo = hi;
    hi *= 2.0;
    if (i > 200) throw NumericError("plane-stress return: cannot bracket plastic multiplier", r);
  }

  double g = lo;
  eval(g, r, dr);
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    if (std::abs(r) <= opt.tolerance * yield_strength) break;
    double next = dr != 0.0 ? g - r / dr : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    g = next;
    eval(g, r, dr);
    if (r > 0.0)
      lo = g;
    else
      hi = g;
  }
  if (it == opt.max_iterations) throw NumericError("plane-stress return did not converge", r);

  const double d1 = 1.0 + k1 * g, d2 = 1.0 + 2.0 * G * g;
  const double sum = sum_t / d1, dif = dif_t / d2;
  Sym2 s{0.5 * (sum - dif), 0.5 * (sum + dif), trial.xy / d2};

  // flow direction: deviatoric stress with sigma_zz = 0
  const double sxx = (2.0 * s.xx - s.yy) / 3.0, syy = (2.0 * s.yy - s.xx) / 3.0;
  res.stress = s;
  res.state.ep_xx = prior.ep_xx + g * sxx;
  res.state.ep_yy = prior.ep_yy + g * syy;
  res.state.ep_xy = prior.ep_xy + g * s.xy;
  res.state.ep_zz = -(res.state.ep_xx + res.state.ep_yy);
  res.state.eq_plastic = prior.eq_plastic + g * (2.0 / 3.0) * von_mises_stress(s);
  res.plastic = true;
  res.iterations = it;
  return res;
}

// ---------------------------------------------------------------------------

enum class Param { yield_strength, hardening_modulus };

/// Per-point constitutive parameters (sigma_Y and H in MPa).
struct ParameterField {
  std::vector<double> yield_strength;
  std::vector<double> hardening_modulus;

  static ParameterField uniform(std::size_t n, double sy, double hmod) {
    return {std::vector<double>(n, sy), std::vector<double>(n, hmod)};
  }
  std::vector<double>& operator[](Param p) { return p == Param::yield_strength ? yield_strength : hardening_modulus; }
  const std::vector<double>& operator[](Param p) const {
    return p == Param::yield_strength ? yield_strength : hardening_modulus;
  }
};

inline void validate_parameters(const FieldGrid& g, const ParameterField& k) {
  if (k.yield_strength.size() != g.size() || k.hardening_modulus.size() != g.size())
    throw ShapeError("parameter field size does not match grid");
  for (std::size_t p = 0; p < g.size(); ++p) {
    if (!g.valid(p)) continue;
    if (!(k.yield_strength[p] > 0.0)) throw ValidationError("yield strength must be positive at every point");
    if (!(k.hardening_modulus[p] >= 0.0)) throw ValidationError("hardening modulus must be non-negative");
  }
}

/// Pointwise stress reconstruction over the whole load history. Points are
/// independent, so the result does not depend on `workers`.
inline StressHistory reconstruct_stress_history(const StrainHistory& strains, const ParameterField& k,
                                                const ElasticProps& el, unsigned workers = 1,
                                                const ReturnOptions& opt = {}) {
  el.validate();
  validate_parameters(strains.grid, k);
  const auto& g = strains.grid;
  const std::size_t nt = strains.n_steps(), np = g.size();
  StressHistory out;
  out.grid = g;
  out.forces = strains.forces;
  out.steps.assign(nt, TensorField(np));
  out.eq_plastic.assign(nt, std::vector<double>(np, 0.0));

  constexpr std::size_t block = 256;
  const std::size_t nblocks = (np + block - 1) / block;
  parallel_for(nblocks, workers, [&](std::size_t b) {
    const std::size_t hi = std::min(np, (b + 1) * block);
    for (std::size_t p = b * block; p < hi; ++p) {
      if (!g.valid(p)) continue;
      PointState state;
      for (std::size_t t = 0; t < nt; ++t) {
        const auto& e = strains.steps[t];
        ReturnResult r;
        try {
          r = radial_return_step({e.xx[p], e.yy[p], e.xy[p]}, state, el, k.yield_strength[p], k.hardening_modulus[p],
                                 opt);
        } catch (const NumericError& err) {
          throw NumericError(std::string(err.what()) + " at point (row " + std::to_string(g.row_of(p)) + ", col " +
                                 std::to_string(g.col_of(p)) + "; x=" + std::to_string(g.x_of(p)) +
                                 " mm, y=" + std::to_string(g.y_of(p)) + " mm), step " + std::to_string(t + 1),
                             err.residual());
        }
        state = r.state;
        out.steps[t].xx[p] = r.stress.xx;
        out.steps[t].yy[p] = r.stress.yy;
        out.steps[t].xy[p] = r.stress.xy;
        out.eq_plastic[t][p] = state.eq_plastic;
      }
    }
  });
  return out;
}

/// Direction in parameter space: `shape` is added to parameter `which`,
/// scaled by the finite-difference step.
struct ParameterPerturbation {
  Param which = Param::yield_strength;
  std::vector<double> shape;
};

/// Forward-difference stress sensitivity per unit parameter change along the
/// perturbation. The step is rel_step times the largest magnitude of the
/// perturbed parameter over the perturbation's support.
inline std::vector<TensorField> stress_sensitivity(const StrainHistory& strains, const ParameterField& k,
                                                   const ElasticProps& el, const ParameterPerturbation& dir,
                                                   double rel_step = 1e-3, unsigned workers = 1,
                                                   const StressHistory* base = nullptr) {
  if (!(rel_step > 0.0)) throw ValidationError("relative sensitivity step must be positive");
  const auto& values = k[dir.which];
  if (dir.shape.size() != values.size()) throw ShapeError("perturbation shape does not match grid");
  double scale = 0.0;
  for (std::size_t p = 0; p < values.size(); ++p)
    if (dir.shape[p] != 0.0 && strains.grid.valid(p)) scale = std::max(scale, std::abs(values[p]));
  if (scale == 0.0) scale = 1.0;
  const double h = rel_step * scale;

  ParameterField shifted = k;
  for (std::size_t p = 0; p < values.size(); ++p) shifted[dir.which][p] += h * dir.shape[p];

  StressHistory own;
  if (!base) {
    own = reconstruct_stress_history(strains, k, el, workers);
    base = &own;
  }
  const auto moved = reconstruct_stress_history(strains, shifted, el, workers);
  std::vector<TensorField> out(strains.n_steps(), TensorField(strains.grid.size()));
  for (std::size_t t = 0; t < out.size(); ++t)
    for (std::size_t p = 0; p < strains.grid.size(); ++p) {
      out[t].xx[p] = (moved.steps[t].xx[p] - base->steps[t].xx[p]) / h;
      out[t].yy[p] = (moved.steps[t].yy[p] - base->steps[t].yy[p]) / h;
      out[t].xy[p] = (moved.steps[t].xy[p] - base->steps[t].xy[p]) / h;
    }
  return out;
}

} // namespace vfmap
