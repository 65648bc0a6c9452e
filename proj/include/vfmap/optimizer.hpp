#pragma once

// Bounded derivative-free pattern search and Levenberg-Marquardt.
// Both work on plain coordinate vectors; callers map DOFs to search space.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "vfmap/error.hpp"
#include "vfmap/parallel.hpp"

namespace vfmap {

using CostFn = std::function<double(const std::vector<double>&)>;
using ResidualFn = std::function<std::vector<double>(const std::vector<double>&)>;

struct PatternSearchConfig {
  double initial_step = 0.1; ///< fraction of each DOF's bound range
  double expansion = 2.0;
  double contraction = 0.5;
  double min_step = 1e-4; ///< stop once the step fraction drops below this
  double max_step = 1.0;
  int max_iterations = 200;
  double stagnation_tol = 1e-6; ///< relative improvement counted as stagnation
  int stagnation_iterations = 5;
  bool parallel_poll = false; ///< poll all 2n points from the base point and take the best
  unsigned workers = 1;

  void validate() const {
    if (!(contraction > 0.0 && contraction < 1.0 && expansion > 1.0))
      throw ValidationError("pattern search needs 0 < contraction < 1 < expansion");
    if (!(initial_step > 0.0) || !(min_step > 0.0)) throw ValidationError("pattern search steps must be positive");
    if (max_iterations < 0) throw ValidationError("pattern search max_iterations must be non-negative");
  }
};

struct PatternSearchIteration {
  int iteration = 0;
  int evaluations = 0;
  double step = 0.0; ///< step fraction used for this iteration's polls
  double cost = 0.0; ///< best cost after the iteration
  bool success = false;
};

enum class StopReason { min_step, max_iterations, stagnation, converged, zero_dofs };

inline const char* to_string(StopReason r) {
  switch (r) {
  case StopReason::min_step: return "min_step";
  case StopReason::max_iterations: return "max_iterations";
  case StopReason::stagnation: return "stagnation";
  case StopReason::converged: return "converged";
  case StopReason::zero_dofs: return "zero_dofs";
  }
  return "?";
}

struct PatternSearchResult {
  std::vector<double> x;
  double cost = 0.0;
  int evaluations = 0;
  StopReason reason = StopReason::max_iterations;
  std::vector<PatternSearchIteration> trace;
};

namespace detail {

inline void check_bounds(const std::vector<double>& x, const std::vector<double>& lo, const std::vector<double>& hi) {
  if (lo.size() != x.size() || hi.size() != x.size()) throw ShapeError("bounds do not match the DOF count");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(lo[i] <= hi[i])) throw ValidationError("lower bound exceeds upper bound for DOF " + std::to_string(i));
    if (!(x[i] >= lo[i] && x[i] <= hi[i])) throw ValidationError("starting point outside bounds for DOF " + std::to_string(i));
  }
}

} // namespace detail

/// Compass search with two polls per DOF per iteration. In the default
/// (opportunistic) mode DOFs are visited in order and each move is taken as
/// soon as the better of its two polls improves on the current point.
inline PatternSearchResult pattern_search(const CostFn& cost, std::vector<double> x0, const std::vector<double>& lower,
                                          const std::vector<double>& upper, const PatternSearchConfig& cfg = {}) {
  cfg.validate();
  detail::check_bounds(x0, lower, upper);
  const std::size_t n = x0.size();
  PatternSearchResult res;
  res.x = std::move(x0);
  res.cost = cost(res.x);
  res.evaluations = 1;
  if (!std::isfinite(res.cost)) throw NumericError("pattern search: cost is not finite at the starting point", res.cost);
  if (n == 0) {
    res.reason = StopReason::zero_dofs;
    return res;
  }

  auto poll_point = [&](const std::vector<double>& base, std::size_t d, int sign, double frac) {
    auto p = base;
    p[d] = std::clamp(base[d] + sign * frac * (upper[d] - lower[d]), lower[d], upper[d]);
    return p;
  };

  double frac = std::min(cfg.initial_step, cfg.max_step);
  int stalled = 0;
  for (int it = 1;; ++it) {
    if (frac < cfg.min_step) {
      res.reason = StopReason::min_step;
      break;
    }
    if (it > cfg.max_iterations) {
      res.reason = StopReason::max_iterations;
      break;
    }
    const double before = res.cost;
    PatternSearchIteration rec;
    rec.iteration = it;
    rec.step = frac;
    if (cfg.parallel_poll) {
      std::vector<std::vector<double>> pts(2 * n);
      std::vector<double> vals(2 * n);
      for (std::size_t d = 0; d < n; ++d) {
        pts[2 * d] = poll_point(res.x, d, +1, frac);
        pts[2 * d + 1] = poll_point(res.x, d, -1, frac);
      }
      parallel_for(2 * n, cfg.workers, [&](std::size_t i) { vals[i] = cost(pts[i]); });
      rec.evaluations = static_cast<int>(2 * n);
      std::size_t best = 2 * n;
      for (std::size_t i = 0; i < 2 * n; ++i)
        if (vals[i] < (best < 2 * n ? vals[best] : res.cost)) best = i;
      if (best < 2 * n) {
        res.x = pts[best];
        res.cost = vals[best];
        rec.success = true;
      }
    } else {
      for (std::size_t d = 0; d < n; ++d) {
        auto up = poll_point(res.x, d, +1, frac);
        auto dn = poll_point(res.x, d, -1, frac);
        const double cu = cost(up), cd = cost(dn);
        rec.evaluations += 2;
        const bool take_up = cu <= cd;
        const double cb = take_up ? cu : cd;
        if (cb < res.cost) {
          res.x = take_up ? std::move(up) : std::move(dn);
          res.cost = cb;
          rec.success = true;
        }
      }
    }
    res.evaluations += rec.evaluations;
    frac = rec.success ? std::min(frac * cfg.expansion, cfg.max_step) : frac * cfg.contraction;
    rec.cost = res.cost;
    res.trace.push_back(rec);

    if (rec.success) {
      const double rel = (before - res.cost) / std::max(std::abs(before), std::numeric_limits<double>::min());
      stalled = rel < cfg.stagnation_tol ? stalled + 1 : 0;
      if (stalled >= cfg.stagnation_iterations) {
        res.reason = StopReason::stagnation;
        break;
      }
    }
    if (res.cost == 0.0) {
      res.reason = StopReason::converged;
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------

struct LmConfig {
  int max_iterations = 50;
  double ftol = 1e-10;        ///< relative cost change after an accepted step
  double gtol = 1e-12;        ///< scaled gradient relative to the cost
  double initial_damping = 1e-3;
  double max_damping = 1e16;
  double fd_relative_step = 1e-6;
  double xtol = 1e-10; ///< relative DOF change after an accepted step
};

struct LmIteration {
  int iteration = 0;
  double cost = 0.0;
  double damping = 0.0;
  int rejected = 0;
  std::vector<double> x;
};

struct LmResult {
  std::vector<double> x;
  double cost = 0.0;
  int iterations = 0; ///< accepted steps
  bool converged = false;
  std::vector<LmIteration> trace;
};

/// Bounded Levenberg-Marquardt with forward-difference Jacobian and
/// Marquardt (diagonal) scaling. `on_iteration` is called with the current
/// point before each Jacobian evaluation, letting callers update the
/// residual definition (e.g. rebuild virtual fields).
inline LmResult levenberg_marquardt(const ResidualFn& residuals, std::vector<double> x0,
                                    const std::vector<double>& lower, const std::vector<double>& upper,
                                    const LmConfig& cfg = {},
                                    const std::function<void(const std::vector<double>&)>& on_iteration = {}) {
  detail::check_bounds(x0, lower, upper);
  const std::size_t n = x0.size();
  LmResult res;
  res.x = std::move(x0);
  auto sq = [](const std::vector<double>& r) {
    std::vector<double> s(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) s[i] = r[i] * r[i];
    return pairwise_sum(s);
  };

  double mu = cfg.initial_damping;
  for (int it = 0;; ++it) {
    if (on_iteration) on_iteration(res.x);
    const auto r = residuals(res.x);
    if (r.size() < n) throw ValidationError("fewer residuals than DOFs");
    res.cost = sq(r);
    if (!std::isfinite(res.cost)) throw NumericError("Levenberg-Marquardt: residuals not finite", res.cost);
    if (it == 0) res.trace.push_back({0, res.cost, mu, 0, res.x});
    if (res.cost == 0.0) {
      res.converged = true;
      break;
    }
    if (it >= cfg.max_iterations) break;

    const auto m = static_cast<Eigen::Index>(r.size());
    Eigen::MatrixXd J(m, static_cast<Eigen::Index>(n));
    const Eigen::Map<const Eigen::VectorXd> rv(r.data(), m);
    for (std::size_t j = 0; j < n; ++j) {
      double h = cfg.fd_relative_step * std::max(std::abs(res.x[j]), 1.0);
      if (res.x[j] + h > upper[j]) h = -h;
      auto xp = res.x;
      xp[j] += h;
      const auto rp = residuals(xp);
      if (rp.size() != r.size()) throw ShapeError("residual count changed within an iteration");
      J.col(static_cast<Eigen::Index>(j)) = (Eigen::Map<const Eigen::VectorXd>(rp.data(), m) - rv) / h;
    }
    const Eigen::VectorXd g = J.transpose() * rv;
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    double gscaled = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      gscaled = std::max(gscaled, std::abs(g(static_cast<Eigen::Index>(j))) * std::max(std::abs(res.x[j]), 1.0));
    if (gscaled <= cfg.gtol * res.cost) {
      res.converged = true;
      break;
    }

    Eigen::VectorXd diag = JtJ.diagonal();
    const double dmax = diag.maxCoeff();
    for (auto& d : diag) d = std::max(d, 1e-30 * std::max(dmax, 1e-300));

    int rejected = 0;
    bool accepted = false, solved = false;
    double new_cost = res.cost;
    std::vector<double> xn(n);
    while (mu <= cfg.max_damping) {
      Eigen::MatrixXd A = JtJ;
      A.diagonal() += mu * diag;
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        mu *= 10.0;
        ++rejected;
        continue;
      }
      solved = true;
      const Eigen::VectorXd step = ldlt.solve(-g);
      for (std::size_t j = 0; j < n; ++j)
        xn[j] = std::clamp(res.x[j] + step(static_cast<Eigen::Index>(j)), lower[j], upper[j]);
      const auto rn = residuals(xn);
      new_cost = rn.size() == r.size() ? sq(rn) : std::numeric_limits<double>::infinity();
      if (std::isfinite(new_cost) && new_cost < res.cost) {
        accepted = true;
        mu = std::max(mu / 10.0, 1e-20);
        break;
      }
      mu *= 10.0;
      ++rejected;
    }
    if (!accepted) {
      if (!solved) throw NumericError("Levenberg-Marquardt: singular normal matrix at maximum damping", res.cost);
      res.converged = true; // no further descent available at this resolution
      break;
    }
    const double rel = (res.cost - new_cost) / res.cost;
    double dx = 0.0;
    for (std::size_t j = 0; j < n; ++j) dx = std::max(dx, std::abs(xn[j] - res.x[j]) / std::max(std::abs(res.x[j]), 1.0));
    res.x = xn;
    ++res.iterations;
    res.trace.push_back({res.iterations, new_cost, mu, rejected, res.x});
    res.cost = new_cost;
    if (rel < cfg.ftol || dx < cfg.xtol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

} // namespace vfmap
