#pragma once

// Two-phase identification: a homogeneous fit driven by sensitivity-based
// virtual fields, then a heterogeneous refinement that adds Gaussian bases
// one at a time where the equilibrium gap is largest.

#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "vfmap/constitutive.hpp"
#include "vfmap/error.hpp"
#include "vfmap/field.hpp"
#include "vfmap/metrics.hpp"
#include "vfmap/optimizer.hpp"
#include "vfmap/parameterisation.hpp"
#include "vfmap/virtual_work.hpp"

namespace vfmap {

using ProgressFn = std::function<void(const std::string&)>;

struct Problem {
  const StrainHistory* strains = nullptr;
  ElasticProps elastic;
  Axis axis = Axis::y;
  unsigned workers = 1;

  const StrainHistory& data() const { return *strains; }
  const FieldGrid& grid() const { return strains->grid; }
};

// ---------------------------------------------------------------------------
// Phase 1

struct Phase1Options {
  LmConfig lm{15, 1e-10, 1e-12, 1e-3, 1e16, 1e-6};
  VirtualMeshShape mesh;
  double sensitivity_step = 1e-3;
  /// Relative sensitivity (rms |dsigma/dtheta| theta / rms |sigma|) below
  /// which a parameter is reported as unidentifiable.
  double identifiability_threshold = 1e-6;
};

struct Phase1Result {
  ParameterSpec spec; ///< homogeneous values in place of every free parameter
  StressHistory reference;
  LmResult trace;
  std::vector<std::string> warnings;
  double seconds = 0.0;
};

namespace detail {

/// Homogeneous version of `spec`: free parameters become a single value,
/// taken from the homogeneous value or the floor of the scheme.
inline ParameterSpec homogenised(const ParameterSpec& spec) {
  ParameterSpec out = spec;
  for (Param p : {Param::yield_strength, Param::hardening_modulus}) {
    auto& s = out.slot(p);
    if (s.designation == Designation::known) continue;
    double v = 0.0;
    if (const auto* h = std::get_if<Homogeneous>(&s.scheme)) v = h->value;
    else if (const auto* f = std::get_if<FloorPlusBases>(&s.scheme)) v = f->floor;
    else if (const auto* m = std::get_if<ZeroOrderMesh>(&s.scheme)) {
      for (double x : m->values) v += x;
      v /= static_cast<double>(std::max<std::size_t>(1, m->values.size()));
    } else
      throw ValidationError("free parameter has no initial value");
    s = {Designation::homogeneous, Homogeneous{v}};
  }
  return out;
}

inline double rms(const std::vector<double>& v, const FieldGrid& g) {
  std::vector<double> sq;
  for (std::size_t p = 0; p < v.size(); ++p)
    if (g.valid(p)) sq.push_back(v[p] * v[p]);
  return sq.empty() ? 0.0 : std::sqrt(pairwise_sum(sq) / static_cast<double>(sq.size()));
}

inline double history_rms(const std::vector<TensorField>& h, const FieldGrid& g) {
  std::vector<double> ms;
  for (const auto& f : h) {
    const double a = rms(f.xx, g), b = rms(f.yy, g), c = rms(f.xy, g);
    ms.push_back(a * a + b * b + 2.0 * c * c);
  }
  return ms.empty() ? 0.0 : std::sqrt(pairwise_sum(ms) / static_cast<double>(ms.size()));
}

} // namespace detail

/// Homogeneous identification by Levenberg-Marquardt on the per-(field,
/// step) virtual-work residuals. Virtual fields are rebuilt from the stress
/// sensitivities at the start of every iteration.
inline Phase1Result phase1_identify(const Problem& pb, const ParameterSpec& initial, const Phase1Options& opt = {},
                                    const ProgressFn& progress = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& g = pb.grid();
  Phase1Result res;
  res.spec = detail::homogenised(initial);
  for (Param p : {Param::yield_strength, Param::hardening_modulus}) {
    const auto& s = res.spec.slot(p);
    if (s.designation == Designation::homogeneous && !(std::get<Homogeneous>(s.scheme).value > 0.0))
      throw ValidationError(std::string("initial ") + to_string(p) + " must be positive");
  }
  DofBoundsPolicy bounds = DofBoundsPolicy::for_grid(g, 1.0, 1.0);
  if (res.spec.yield.designation == Designation::homogeneous)
    bounds.reference_yield = std::get<Homogeneous>(res.spec.yield.scheme).value;
  if (res.spec.hardening.designation == Designation::homogeneous)
    bounds.reference_hardening = std::get<Homogeneous>(res.spec.hardening.scheme).value;
  const DofVector layout = pack_dofs(res.spec, bounds);
  if (layout.empty()) throw ValidationError("no free parameters to identify");

  const auto alpha = force_weights(pb.data().forces);
  std::vector<VirtualField> vfs;
  bool warned[2] = {false, false};

  auto params_at = [&](const std::vector<double>& x) { return unpack_dofs(res.spec, layout, x).evaluate(g); };
  auto rebuild = [&](const std::vector<double>& x) {
    const auto k = params_at(x);
    const auto base = reconstruct_stress_history(pb.data(), k, pb.elastic, pb.workers);
    const double srms = detail::history_rms(base.steps, g);
    std::vector<std::vector<TensorField>> sens;
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const Param which = layout.labels[i].param;
      ParameterPerturbation dir{which, std::vector<double>(g.size(), 1.0)};
      auto s = stress_sensitivity(pb.data(), k, pb.elastic, dir, opt.sensitivity_step, pb.workers, &base);
      const double rel = srms > 0.0 ? detail::history_rms(s, g) * std::abs(x[i]) / srms : 0.0;
      const int wi = which == Param::yield_strength ? 0 : 1;
      if (rel < opt.identifiability_threshold && !warned[wi]) {
        warned[wi] = true;
        res.warnings.push_back(std::string(to_string(which)) +
                               " is not identifiable from these data (stress sensitivity below threshold)");
        if (progress) progress("warning: " + res.warnings.back());
      }
      sens.push_back(std::move(s));
    }
    auto built = build_sensitivity_virtual_fields(sens, alpha, g, pb.axis, opt.mesh);
    vfs.clear();
    for (auto& v : built)
      if (v.u_x != 0.0 || v.u_y != 0.0 || detail::rms(v.strain.yy, g) > 0.0 || detail::rms(v.strain.xx, g) > 0.0)
        vfs.push_back(std::move(v));
    if (vfs.empty()) {
      vfs.push_back(uniform_extension_field(g, pb.axis));
      vfs.push_back(transverse_contraction_field(g, pb.axis));
    }
  };
  auto residuals = [&](const std::vector<double>& x) {
    const auto stress = reconstruct_stress_history(pb.data(), params_at(x), pb.elastic, pb.workers);
    return sbvf_residuals(stress, vfs, pb.axis);
  };
  int iter = 0;
  auto on_iter = [&](const std::vector<double>& x) {
    rebuild(x);
    if (progress && iter > 0) {
      std::string msg = "phase 1 iteration " + std::to_string(iter) + ":";
      for (std::size_t i = 0; i < x.size(); ++i) msg += " " + layout.labels[i].name() + "=" + detail::format_double(x[i]);
      progress(msg);
    }
    ++iter;
  };

  res.trace = levenberg_marquardt(residuals, layout.values, layout.lower, layout.upper, opt.lm, on_iter);
  res.spec = unpack_dofs(res.spec, layout, res.trace.x);
  res.reference = reconstruct_stress_history(pb.data(), res.spec.evaluate(g), pb.elastic, pb.workers);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ---------------------------------------------------------------------------
// Combined cost

struct MetricSettings {
  double lambda = 0.1;
  std::vector<double> window_fractions = {0.25, 0.5};
  std::size_t slice_width_points = 5;
  double smoothing_mm = 3.0;
  std::size_t egi_stride = 1;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("metrics.lambda must lie in [0, 1]");
    if (window_fractions.empty()) throw ValidationError("metrics.window_fractions must not be empty");
    for (double f : window_fractions)
      if (!(f > 0.0 && f <= 1.0)) throw ValidationError("metrics.window_fractions entries must lie in (0, 1]");
    if (slice_width_points == 0) throw ValidationError("metrics.slice_width_points must be positive");
    if (!(smoothing_mm >= 0.0)) throw ValidationError("metrics.smoothing_mm must be non-negative");
    if (egi_stride == 0) throw ValidationError("metrics.egi_stride must be positive");
  }
};

struct CostBreakdown {
  double phi = 0.0, phi_egi = 0.0, phi_fre = 0.0;
  std::vector<double> egi_rms; ///< per window, unscaled
  double fre_rms = 0.0;        ///< unscaled
};

struct MetricMaps {
  std::vector<std::vector<double>> egi; ///< weighted temporal RMS per window, per point
  std::vector<double> fre;              ///< weighted temporal RMS per slice
  std::vector<double> fre_signed;       ///< force-weighted mean FRE per slice
  std::vector<double> combined;         ///< smoothed combined EGI map
};

/// phi = (1 - lambda) sum_k gamma_k EGI_k / a_k + lambda FRE / b, with the
/// scaling factors taken from a reference stress field.
class CombinedCost {
 public:
  CombinedCost(const Problem& pb, const MetricSettings& ms) : pb_(pb), ms_(ms) {
    ms_.validate();
    const auto& g = pb.grid();
    alpha_ = force_weights(pb.data().forces);
    slices_ = make_slices(g, pb.axis, ms_.slice_width_points);
    std::vector<double> lengths;
    for (double f : ms_.window_fractions) {
      windows_.push_back(build_egi_window(window_side_for_fraction(g, f), g));
      lengths.push_back(windows_.back().length);
    }
    lengths_ = lengths;
    gamma_ = window_weights(lengths);
  }

  /// Sets a_k and b from the reference stress.
  void set_reference(const StressHistory& ref) {
    const auto raw = unscaled(ref);
    a_ = raw.egi_rms;
    b_ = raw.fre_rms;
    for (std::size_t k = 0; k < a_.size(); ++k)
      if (!(a_[k] > 0.0))
        throw ValidationError("EGI scaling factor is zero for window " + std::to_string(windows_[k].side) +
                              "; the reference stress is exactly admissible");
    if (!(b_ > 0.0) && ms_.lambda > 0.0)
      throw ValidationError("FRE scaling factor is zero; the reference stress is exactly admissible");
    has_reference_ = true;
  }

  CostBreakdown evaluate_stress(const StressHistory& s) const {
    if (!has_reference_) throw ValidationError("combined cost used before its reference was set");
    auto out = unscaled(s);
    for (std::size_t k = 0; k < a_.size(); ++k) out.phi_egi += gamma_[k] * out.egi_rms[k] / a_[k];
    out.phi_fre = ms_.lambda > 0.0 ? out.fre_rms / b_ : 0.0;
    out.phi = (1.0 - ms_.lambda) * out.phi_egi + ms_.lambda * out.phi_fre;
    return out;
  }

  StressHistory stress(const ParameterField& k, unsigned workers) const {
    return reconstruct_stress_history(pb_.data(), k, pb_.elastic, workers);
  }

  CostBreakdown evaluate(const ParameterField& k) const { return evaluate_stress(stress(k, pb_.workers)); }

  /// Cost for the optimizer: failures of the stress reconstruction or
  /// invalid parameters count as an infinitely bad candidate.
  double operator()(const ParameterField& k, unsigned workers) const {
    try {
      return evaluate_stress(stress(k, workers)).phi;
    } catch (const NumericError&) {
      return std::numeric_limits<double>::infinity();
    } catch (const ValidationError&) {
      return std::numeric_limits<double>::infinity();
    }
  }

  MetricMaps maps(const StressHistory& s) const {
    MetricMaps m;
    const auto& g = pb_.grid();
    EgiOptions eo{pb_.axis, ms_.egi_stride, pb_.workers};
    for (const auto& w : windows_) m.egi.push_back(egi_weighted_rms(egi_field(s, w, eo), alpha_).temporal);
    const auto fre = fre_field(s, slices_);
    m.fre = fre_weighted_rms(fre, alpha_).temporal;
    for (const auto& series : fre.values) {
      double acc = 0.0;
      for (std::size_t t = 0; t < series.size(); ++t) acc += alpha_[t] * series[t];
      m.fre_signed.push_back(acc / static_cast<double>(series.size()));
    }
    m.combined = combined_egi_map(g, m.egi, lengths_, ms_.smoothing_mm);
    return m;
  }

  const Problem& problem() const { return pb_; }
  const MetricSettings& settings() const { return ms_; }
  const std::vector<EgiWindow>& windows() const { return windows_; }
  const SliceSet& slices() const { return slices_; }
  const std::vector<double>& alpha() const { return alpha_; }
  const std::vector<double>& gamma() const { return gamma_; }
  const std::vector<double>& egi_scale() const { return a_; }
  double fre_scale() const { return b_; }

 private:
  CostBreakdown unscaled(const StressHistory& s) const {
    CostBreakdown out;
    EgiOptions eo{pb_.axis, ms_.egi_stride, 1};
    for (const auto& w : windows_) {
      if (ms_.lambda < 1.0)
        out.egi_rms.push_back(egi_weighted_rms(egi_field(s, w, eo), alpha_).overall);
      else
        out.egi_rms.push_back(1.0);
    }
    out.fre_rms = fre_weighted_rms(fre_field(s, slices_), alpha_).overall;
    return out;
  }

  Problem pb_;
  MetricSettings ms_;
  std::vector<double> alpha_, lengths_, gamma_, a_;
  double b_ = 0.0;
  SliceSet slices_;
  std::vector<EgiWindow> windows_;
  bool has_reference_ = false;
};

inline CombinedCost assemble_cost(const Problem& pb, const MetricSettings& ms, const StressHistory& reference) {
  CombinedCost c(pb, ms);
  c.set_reference(reference);
  return c;
}

// ---------------------------------------------------------------------------
// Basis seeding

struct SeedCandidates {
  std::size_t index = 0;                       ///< grid point of the map maximum
  std::vector<std::array<double, 2>> centers; ///< [0] = maximum, then -x, +x, -y, +y
};

/// Maximum of the combined map (lowest row-major index on ties) and four
/// candidates shifted by `fraction` of the coordinate range, clamped to the
/// grid bounding box.
inline SeedCandidates seed_new_basis(const FieldGrid& g, const std::vector<double>& combined, double fraction = 0.1) {
  if (combined.size() != g.size()) throw ShapeError("combined map does not match grid");
  std::size_t best = g.size();
  for (std::size_t p = 0; p < g.size(); ++p) {
    if (!g.valid(p) || is_missing(combined[p])) continue;
    if (best == g.size() || combined[p] > combined[best]) best = p;
  }
  if (best == g.size()) throw ValidationError("cannot seed a new basis: the equilibrium-gap map has no values");
  SeedCandidates out;
  out.index = best;
  const double cx = g.x_of(best), cy = g.y_of(best);
  const double dx = fraction * (g.x_max() - g.x(0)), dy = fraction * (g.y_max() - g.y(0));
  auto clampx = [&](double v) { return std::clamp(v, g.x(0), g.x_max()); };
  auto clampy = [&](double v) { return std::clamp(v, g.y(0), g.y_max()); };
  out.centers = {{cx, cy}, {clampx(cx - dx), cy}, {clampx(cx + dx), cy}, {cx, clampy(cy - dy)}, {cx, clampy(cy + dy)}};
  return out;
}

struct MultiStartResult {
  std::size_t best = 0;
  std::vector<PatternSearchResult> runs;
};

/// Refines every start with a short pattern search; the lowest final cost
/// wins (lowest index on ties).
inline MultiStartResult multi_start_refine(const std::vector<std::vector<double>>& starts, const CostFn& cost,
                                           const std::vector<double>& lower, const std::vector<double>& upper,
                                           PatternSearchConfig cfg, int iterations = 10) {
  if (starts.empty()) throw ValidationError("multi-start needs at least one candidate");
  cfg.max_iterations = iterations;
  MultiStartResult out;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    auto x = starts[i];
    for (std::size_t d = 0; d < x.size(); ++d) x[d] = std::clamp(x[d], lower[d], upper[d]);
    double c0 = cost(x);
    if (!std::isfinite(c0)) {
      PatternSearchResult r;
      r.x = x;
      r.cost = c0;
      r.evaluations = 1;
      out.runs.push_back(r);
      continue;
    }
    out.runs.push_back(pattern_search(cost, x, lower, upper, cfg));
  }
  for (std::size_t i = 1; i < out.runs.size(); ++i)
    if (out.runs[i].cost < out.runs[out.best].cost) out.best = i;
  return out;
}

// ---------------------------------------------------------------------------
// Phase 2

struct Phase2Settings {
  MetricSettings metrics;
  double threshold = 0.05;            ///< minimum relative cost reduction per accepted basis
  double perturbation_fraction = 0.1; ///< multi-start offsets
  int multistart_iterations = 10;
  std::size_t max_bases = 8;
  BasisKind basis_kind = BasisKind::bivariate;
  PatternSearchConfig search{0.1, 2.0, 0.5, 1e-4, 1.0, 150, 1e-6, 5, false, 1};
};

struct LedgerRow {
  int iteration = 0;   ///< 0 = Phase 1
  std::string stage;   ///< phase1, accepted, rejected, mesh
  std::size_t bases = 0;
  double phi = 0.0, phi_egi = 0.0, phi_fre = 0.0;
  double hardening = 0.0; ///< homogeneous H (missing when heterogeneous or known)
  double floor = 0.0;     ///< yield floor or homogeneous yield
  int evaluations = 0;
  double seconds = 0.0;
};

struct IdentificationState {
  ParameterSpec spec;
  DofVector dofs;
  std::vector<LedgerRow> ledger;
  bool converged = false;
  std::size_t accepted = 0;
  std::string phase = "phase2";
};

struct Phase2Result {
  IdentificationState state;
  ParameterField parameters;
  StressHistory stress;
  CostBreakdown cost;
  std::vector<MetricMaps> maps; ///< maps at the start of each attempt, then the final maps
};

namespace detail {

inline double homogeneous_value(const ParameterSlot& s) {
  if (const auto* h = std::get_if<Homogeneous>(&s.scheme)) return h->value;
  if (const auto* f = std::get_if<FloorPlusBases>(&s.scheme)) return f->floor;
  return kMissing;
}

inline LedgerRow ledger_row(int it, std::string stage, const ParameterSpec& spec, const CostBreakdown& c, int evals,
                            double secs) {
  LedgerRow r;
  r.iteration = it;
  r.stage = std::move(stage);
  if (const auto* f = std::get_if<FloorPlusBases>(&spec.yield.scheme)) r.bases = f->bases.size();
  r.phi = c.phi;
  r.phi_egi = c.phi_egi;
  r.phi_fre = c.phi_fre;
  r.hardening = spec.hardening.designation == Designation::homogeneous ? homogeneous_value(spec.hardening) : kMissing;
  r.floor = homogeneous_value(spec.yield);
  r.evaluations = evals;
  r.seconds = secs;
  return r;
}

/// Optimizes the DOFs selected by `free` (indices into the packed vector) in
/// search coordinates; returns the new spec, cost and evaluation count.
struct StageResult {
  ParameterSpec spec;
  double cost = 0.0;
  int evaluations = 0;
};

inline StageResult run_stage(const CombinedCost& cost, const ParameterSpec& spec, const DofBoundsPolicy& bounds,
                             const std::function<bool(const DofLabel&)>& is_free, const PatternSearchConfig& cfg) {
  const auto& g = cost.problem().grid();
  const DofVector layout = pack_dofs(spec, bounds);
  std::vector<std::size_t> free;
  for (std::size_t i = 0; i < layout.size(); ++i)
    if (is_free(layout.labels[i])) free.push_back(i);
  const auto z0 = layout.to_search(layout.values);
  const auto zl = layout.search_lower(), zu = layout.search_upper();
  std::vector<double> x0, lo, hi;
  for (auto i : free) {
    x0.push_back(std::clamp(z0[i], zl[i], zu[i]));
    lo.push_back(zl[i]);
    hi.push_back(zu[i]);
  }
  const unsigned inner = cfg.parallel_poll ? 1u : cost.problem().workers;
  auto full = [&](const std::vector<double>& sub) {
    auto z = z0;
    for (std::size_t j = 0; j < free.size(); ++j) z[free[j]] = sub[j];
    return unpack_dofs(spec, layout, layout.from_search(z));
  };
  CostFn f = [&](const std::vector<double>& sub) { return cost(full(sub).evaluate(g), inner); };
  const auto r = pattern_search(f, x0, lo, hi, cfg);
  return {full(r.x), r.cost, r.evaluations};
}

} // namespace detail

/// Greedy basis insertion on the yield strength. Each attempt seeds a basis
/// at the smoothed equilibrium-gap maximum, refines the candidates, then runs
/// stage A (basis DOFs, floor fixed) and stage B (floor, H, weights,
/// variances and angles; centres fixed). The first attempt that improves the
/// cost by less than the threshold is reverted and ends the run.
inline Phase2Result phase2_identify(const Problem& pb, const Phase1Result& p1, const ParameterSpec& requested,
                                    const Phase2Settings& st, const ProgressFn& progress = {}) {
  if (!(st.threshold >= 0.0 && st.threshold < 1.0)) throw ValidationError("identification.threshold must lie in [0, 1)");
  if (requested.hardening.designation == Designation::heterogeneous)
    throw ValidationError("heterogeneous hardening modulus identification is not supported");
  const auto& g = pb.grid();
  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [](std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  CombinedCost cost = assemble_cost(pb, st.metrics, p1.reference);
  const double ref_yield = requested.yield.designation == Designation::known
                               ? 1.0
                               : detail::homogeneous_value(p1.spec.yield);
  const double ref_h = requested.hardening.designation == Designation::known
                           ? 1.0
                           : detail::homogeneous_value(p1.spec.hardening);
  const DofBoundsPolicy bounds = DofBoundsPolicy::for_grid(g, ref_yield, ref_h);

  Phase2Result out;
  auto& state = out.state;
  // starting spec: Phase-1 values in the requested schemes
  ParameterSpec spec = p1.spec;
  if (requested.yield.designation == Designation::heterogeneous) {
    if (const auto* m = std::get_if<ZeroOrderMesh>(&requested.yield.scheme)) {
      ZeroOrderMesh mesh = *m;
      std::fill(mesh.values.begin(), mesh.values.end(), ref_yield);
      spec.yield = {Designation::heterogeneous, mesh};
    } else {
      spec.yield = {Designation::heterogeneous, FloorPlusBases{ref_yield, {}}};
    }
  }

  auto current = cost.evaluate(spec.evaluate(g));
  state.ledger.push_back(detail::ledger_row(0, "phase1", spec, current, 0, p1.seconds));
  if (progress) progress("phase 2 start: phi=" + detail::format_double(current.phi));

  auto finish = [&]() {
    out.parameters = spec.evaluate(g);
    out.stress = cost.stress(out.parameters, pb.workers);
    out.cost = cost.evaluate_stress(out.stress);
    out.maps.push_back(cost.maps(out.stress));
    state.spec = spec;
    state.dofs = pack_dofs(spec, bounds);
    (void)elapsed(t_start);
    return out;
  };

  if (requested.yield.designation != Designation::heterogeneous) {
    state.converged = true;
    return finish();
  }

  const PatternSearchConfig& cfg = st.search;
  auto is_h = [](const DofLabel& l) { return l.param == Param::hardening_modulus && l.role == DofRole::homogeneous; };

  if (std::holds_alternative<ZeroOrderMesh>(spec.yield.scheme)) {
    const auto t0 = std::chrono::steady_clock::now();
    auto r = detail::run_stage(cost, spec, bounds,
                               [&](const DofLabel& l) { return l.role == DofRole::mesh_value || is_h(l); }, cfg);
    spec = r.spec;
    current = cost.evaluate(spec.evaluate(g));
    state.ledger.push_back(detail::ledger_row(1, "mesh", spec, current, r.evaluations, elapsed(t0)));
    state.accepted = 1;
    state.converged = true;
    return finish();
  }

  const double smaller = std::min(g.cell_extent(Axis::x), g.cell_extent(Axis::y));
  for (std::size_t attempt = 1; attempt <= st.max_bases; ++attempt) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto stress = cost.stress(spec.evaluate(g), pb.workers);
    auto maps = cost.maps(stress);
    const auto seed = seed_new_basis(g, maps.combined, st.perturbation_fraction);
    // stress below the applied level in this slice means the local yield is
    // underestimated, so the new basis starts positive
    int sign = 1;
    for (const auto& sl : cost.slices().slices)
      for (auto p : sl.points)
        if (p == seed.index) sign = maps.fre_signed[sl.index] > 0.0 ? -1 : 1;
    out.maps.push_back(std::move(maps));
    const auto init = default_basis_init(ref_yield, sign, smaller, st.basis_kind);

    const auto& fb = std::get<FloorPlusBases>(spec.yield.scheme);
    const std::size_t new_index = fb.bases.size();
    int evals = 0;

    // multi-start over the new basis only
    std::vector<ParameterSpec> starts;
    for (const auto& c : seed.centers) {
      ParameterSpec s = spec;
      s.yield.scheme = insert_basis(fb, c[0], c[1], init);
      starts.push_back(std::move(s));
    }
    auto new_only = [&](const DofLabel& l) {
      return l.param == Param::yield_strength && l.role != DofRole::floor && l.index == new_index;
    };
    std::size_t best = 0;
    double best_cost = std::numeric_limits<double>::infinity();
    std::vector<ParameterSpec> refined;
    PatternSearchConfig ms_cfg = cfg;
    ms_cfg.max_iterations = st.multistart_iterations;
    for (std::size_t i = 0; i < starts.size(); ++i) {
      if (!std::isfinite(cost(starts[i].evaluate(g), pb.workers))) {
        refined.push_back(starts[i]);
        continue;
      }
      auto r = detail::run_stage(cost, starts[i], bounds, new_only, ms_cfg);
      evals += r.evaluations;
      if (r.cost < best_cost) {
        best_cost = r.cost;
        best = i;
      }
      refined.push_back(std::move(r.spec));
    }
    ParameterSpec trial = refined[best];

    if (std::isfinite(best_cost)) {
      // stage A: all basis DOFs, floor and H fixed
      auto a = detail::run_stage(
          cost, trial, bounds,
          [](const DofLabel& l) { return l.param == Param::yield_strength && l.role != DofRole::floor; }, cfg);
      evals += a.evaluations;
      // stage B: floor, H, weights, variances, angles
      auto b = detail::run_stage(
          cost, a.spec, bounds,
          [&](const DofLabel& l) {
            if (is_h(l)) return true;
            if (l.param != Param::yield_strength) return false;
            return l.role != DofRole::center_x && l.role != DofRole::center_y;
          },
          cfg);
      evals += b.evaluations;
      trial = b.spec;
    }

    const auto trial_cost = [&]() {
      try {
        return cost.evaluate(trial.evaluate(g));
      } catch (const NumericError&) {
        CostBreakdown c;
        c.phi = std::numeric_limits<double>::infinity();
        return c;
      }
    }();
    const double improvement = (current.phi - trial_cost.phi) / current.phi;
    const bool accept = std::isfinite(trial_cost.phi) && improvement >= st.threshold;
    state.ledger.push_back(detail::ledger_row(static_cast<int>(attempt), accept ? "accepted" : "rejected", trial,
                                              trial_cost, evals, elapsed(t0)));
    if (progress)
      progress("attempt " + std::to_string(attempt) + ": phi=" + detail::format_double(trial_cost.phi) +
               " improvement=" + detail::format_double(improvement) + (accept ? " accepted" : " rejected"));
    if (!accept) {
      state.converged = true;
      break;
    }
    spec = trial;
    current = trial_cost;
    ++state.accepted;
  }
  return finish();
}

/// True where the accumulated equivalent plastic strain reaches the
/// threshold at some step (and some plasticity occurred).
inline std::vector<std::uint8_t> reliability_mask(const StressHistory& s, double threshold = 0.005) {
  std::vector<std::uint8_t> out(s.grid.size(), 0);
  for (std::size_t p = 0; p < out.size(); ++p) {
    if (!s.grid.valid(p)) continue;
    double m = 0.0;
    for (const auto& e : s.eq_plastic) m = std::max(m, e[p]);
    out[p] = m > 0.0 && m >= threshold;
  }
  return out;
}

} // namespace vfmap
