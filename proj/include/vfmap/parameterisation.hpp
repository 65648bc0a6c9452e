#pragma once

// Spatial parameterisation of constitutive parameters: homogeneous values,
// floor plus Gaussian basis functions, and zero-order meshes, together with
// the packing of their free values into a bounded DOF vector.

#include <cmath>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "vfmap/constitutive.hpp"
#include "vfmap/error.hpp"
#include "vfmap/field.hpp"

namespace vfmap {

enum class BasisKind { univariate, bivariate };

/// Gaussian basis B(x) = exp(-1/2 (x-c) Sigma^-1 (x-c)^T) scaled by `weight`,
/// with Sigma = R(angle) diag(var_1, var_2) R(angle)^T. Univariate bases use
/// var_2 = var_1 and angle = 0.
struct GaussianBasis {
  double center_x = 0.0, center_y = 0.0;
  double weight = 0.0;
  double var_1 = 1.0, var_2 = 1.0;
  double angle = 0.0; ///< radians
  BasisKind kind = BasisKind::univariate;

  void validate() const {
    if (!(var_1 > 0.0) || !(var_2 > 0.0)) throw ValidationError("basis variances must be positive");
    if (!(angle >= -std::numbers::pi / 2 && angle <= std::numbers::pi / 2))
      throw ValidationError("basis angle must lie in [-pi/2, pi/2]");
  }

  /// Unweighted basis value at (x, y).
  double shape(double x, double y) const {
    const double dx = x - center_x, dy = y - center_y;
    if (kind == BasisKind::univariate) return std::exp(-0.5 * (dx * dx + dy * dy) / var_1);
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * dx + s * dy;  // coordinates along the principal axes
    const double v = -s * dx + c * dy;
    return std::exp(-0.5 * (u * u / var_1 + v * v / var_2));
  }

  double operator()(double x, double y) const { return weight * shape(x, y); }
};

struct Known {
  std::vector<double> values;
};

struct Homogeneous {
  double value = 0.0;
};

/// Homogeneous floor from which the bases add or subtract.
struct FloorPlusBases {
  double floor = 0.0;
  std::vector<GaussianBasis> bases;
};

/// Piecewise-constant field on an n_x by n_y element layout over a bounding
/// box. Values are stored row-major (element row along y).
struct ZeroOrderMesh {
  std::size_t n_x = 1, n_y = 1;
  double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
  std::vector<double> values;

  static ZeroOrderMesh covering(const FieldGrid& g, std::size_t nx, std::size_t ny, double value) {
    if (nx == 0 || ny == 0) throw ValidationError("mesh needs at least one element per direction");
    return {nx, ny, g.x(0), g.x_max(), g.y(0), g.y_max(), std::vector<double>(nx * ny, value)};
  }

  std::size_t element_of(double x, double y) const {
    auto locate = [](double v, double lo, double hi, std::size_t n) {
      const double span = hi - lo;
      const double frac = span > 0.0 ? (v - lo) / span : 0.0;
      if (frac <= 0.0) return std::size_t{0};
      const auto i = static_cast<std::size_t>(std::floor(frac * static_cast<double>(n)));
      return std::min(i, n - 1);
    };
    return locate(y, y_min, y_max, n_y) * n_x + locate(x, x_min, x_max, n_x);
  }

  /// Splits every element into fx by fy children carrying the parent value.
  ZeroOrderMesh refined(std::size_t fx, std::size_t fy) const {
    ZeroOrderMesh out{n_x * fx, n_y * fy, x_min, x_max, y_min, y_max, {}};
    out.values.resize(out.n_x * out.n_y);
    for (std::size_t j = 0; j < out.n_y; ++j)
      for (std::size_t i = 0; i < out.n_x; ++i) out.values[j * out.n_x + i] = values[(j / fy) * n_x + i / fx];
    return out;
  }
};

using Scheme = std::variant<Known, Homogeneous, FloorPlusBases, ZeroOrderMesh>;

/// Per-point values of a scheme; masked points receive the value the scheme
/// would give there (they are ignored downstream).
inline std::vector<double> evaluate_field(const Scheme& scheme, const FieldGrid& g) {
  std::vector<double> out(g.size(), 0.0);
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Known>) {
          if (s.values.size() != g.size()) throw ShapeError("known parameter map does not match grid");
          out = s.values;
        } else if constexpr (std::is_same_v<S, Homogeneous>) {
          std::fill(out.begin(), out.end(), s.value);
        } else if constexpr (std::is_same_v<S, FloorPlusBases>) {
          for (std::size_t p = 0; p < g.size(); ++p) {
            double v = s.floor;
            for (const auto& b : s.bases) v += b(g.x_of(p), g.y_of(p));
            out[p] = v;
          }
        } else {
          if (s.values.size() != s.n_x * s.n_y) throw ShapeError("mesh value count does not match layout");
          for (std::size_t p = 0; p < g.size(); ++p) out[p] = s.values[s.element_of(g.x_of(p), g.y_of(p))];
        }
      },
      scheme);
  return out;
}

// ---------------------------------------------------------------------------
// Designations and DOF packing

enum class Designation { known, homogeneous, heterogeneous };

struct ParameterSlot {
  Designation designation = Designation::homogeneous;
  Scheme scheme = Homogeneous{};
};

struct ParameterSpec {
  ParameterSlot yield{Designation::homogeneous, Homogeneous{360.0}};
  ParameterSlot hardening{Designation::homogeneous, Homogeneous{3700.0}};

  ParameterSlot& slot(Param p) { return p == Param::yield_strength ? yield : hardening; }
  const ParameterSlot& slot(Param p) const { return p == Param::yield_strength ? yield : hardening; }

  ParameterField evaluate(const FieldGrid& g) const {
    return {evaluate_field(yield.scheme, g), evaluate_field(hardening.scheme, g)};
  }
};

enum class DofRole { homogeneous, floor, center_x, center_y, weight, var_1, var_2, angle, mesh_value };

inline const char* to_string(DofRole r) {
  switch (r) {
  case DofRole::homogeneous: return "value";
  case DofRole::floor: return "floor";
  case DofRole::center_x: return "center_x";
  case DofRole::center_y: return "center_y";
  case DofRole::weight: return "weight";
  case DofRole::var_1: return "var_1";
  case DofRole::var_2: return "var_2";
  case DofRole::angle: return "angle";
  case DofRole::mesh_value: return "mesh_value";
  }
  return "?";
}

inline const char* to_string(Param p) { return p == Param::yield_strength ? "yield_strength" : "hardening_modulus"; }

struct DofLabel {
  Param param = Param::yield_strength;
  DofRole role = DofRole::homogeneous;
  std::size_t index = 0; ///< basis or element index where applicable

  std::string name() const {
    return std::string(to_string(param)) + "." + to_string(role) + "[" + std::to_string(index) + "]";
  }
  /// Variances are searched in log space.
  bool log_scaled() const { return role == DofRole::var_1 || role == DofRole::var_2; }
};

/// Free scalars of a parameter spec, in natural units, with bounds.
struct DofVector {
  std::vector<double> values, lower, upper;
  std::vector<DofLabel> labels;

  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }

  void push(const DofLabel& l, double v, double lo, double hi) {
    labels.push_back(l);
    values.push_back(v);
    lower.push_back(lo);
    upper.push_back(hi);
  }

  /// Coordinates seen by the optimizer (log for variances).
  std::vector<double> to_search(const std::vector<double>& natural) const {
    std::vector<double> z(natural.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = labels[i].log_scaled() ? std::log(natural[i]) : natural[i];
    return z;
  }
  std::vector<double> from_search(const std::vector<double>& z) const {
    std::vector<double> x(z.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = labels[i].log_scaled() ? std::exp(z[i]) : z[i];
    return x;
  }
  std::vector<double> search_lower() const { return to_search(lower); }
  std::vector<double> search_upper() const { return to_search(upper); }
};

/// Bounds applied when packing. Reference values are the homogeneous
/// (Phase 1) values of each parameter.
struct DofBoundsPolicy {
  double reference_yield = 360.0;
  double reference_hardening = 3700.0;
  double value_lo_factor = 0.2, value_hi_factor = 3.0; ///< floors, homogeneous values, mesh values
  double weight_factor = 1.0;                          ///< |weight| <= factor * reference
  double var_min = 1e-2, var_max = 1e4;                ///< mm^2
  double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;

  static DofBoundsPolicy for_grid(const FieldGrid& g, double ref_yield, double ref_hardening) {
    DofBoundsPolicy b;
    b.reference_yield = ref_yield;
    b.reference_hardening = ref_hardening;
    const double pitch = std::max(g.spacing_x, g.spacing_y);
    b.var_min = (2.0 * pitch) * (2.0 * pitch);
    const double lx = g.cell_extent(Axis::x), ly = g.cell_extent(Axis::y);
    b.var_max = lx * lx + ly * ly;
    b.x_min = g.x(0);
    b.x_max = g.x_max();
    b.y_min = g.y(0);
    b.y_max = g.y_max();
    return b;
  }

  double reference(Param p) const { return p == Param::yield_strength ? reference_yield : reference_hardening; }
};

inline std::size_t dof_count(const ParameterSlot& slot) {
  if (slot.designation == Designation::known) return 0;
  if (slot.designation == Designation::homogeneous) return 1;
  if (const auto* f = std::get_if<FloorPlusBases>(&slot.scheme)) {
    std::size_t n = 1;
    for (const auto& b : f->bases) n += b.kind == BasisKind::univariate ? 4 : 6;
    return n;
  }
  if (const auto* m = std::get_if<ZeroOrderMesh>(&slot.scheme)) return m->values.size();
  throw ValidationError("heterogeneous parameter requires a basis or mesh scheme");
}

namespace detail {

inline void pack_slot(Param param, const ParameterSlot& slot, const DofBoundsPolicy& b, DofVector& out) {
  if (slot.designation == Designation::known) return;
  const double ref = b.reference(param);
  const double vlo = b.value_lo_factor * ref, vhi = b.value_hi_factor * ref;
  if (slot.designation == Designation::homogeneous) {
    const auto* h = std::get_if<Homogeneous>(&slot.scheme);
    if (!h) throw ValidationError(std::string("homogeneous parameter ") + to_string(param) +
                                  " requires a homogeneous scheme");
    out.push({param, DofRole::homogeneous, 0}, h->value, vlo, vhi);
    return;
  }
  if (const auto* f = std::get_if<FloorPlusBases>(&slot.scheme)) {
    out.push({param, DofRole::floor, 0}, f->floor, vlo, vhi);
    const double wmax = b.weight_factor * std::abs(ref);
    for (std::size_t j = 0; j < f->bases.size(); ++j) {
      const auto& g = f->bases[j];
      out.push({param, DofRole::center_x, j}, g.center_x, b.x_min, b.x_max);
      out.push({param, DofRole::center_y, j}, g.center_y, b.y_min, b.y_max);
      out.push({param, DofRole::weight, j}, g.weight, -wmax, wmax);
      out.push({param, DofRole::var_1, j}, g.var_1, b.var_min, b.var_max);
      if (g.kind == BasisKind::bivariate) {
        out.push({param, DofRole::var_2, j}, g.var_2, b.var_min, b.var_max);
        out.push({param, DofRole::angle, j}, g.angle, -std::numbers::pi / 2, std::numbers::pi / 2);
      }
    }
    return;
  }
  if (const auto* m = std::get_if<ZeroOrderMesh>(&slot.scheme)) {
    for (std::size_t e = 0; e < m->values.size(); ++e) out.push({param, DofRole::mesh_value, e}, m->values[e], vlo, vhi);
    return;
  }
  throw ValidationError(std::string("heterogeneous parameter ") + to_string(param) +
                        " requires a basis or mesh scheme");
}

inline void unpack_slot(Param param, ParameterSlot& slot, const DofVector& dofs, std::size_t& i) {
  if (slot.designation == Designation::known) return;
  auto next = [&](DofRole role) {
    if (i >= dofs.size() || dofs.labels[i].param != param || dofs.labels[i].role != role)
      throw ShapeError("DOF vector does not match parameter layout");
    return dofs.values[i++];
  };
  if (slot.designation == Designation::homogeneous) {
    std::get<Homogeneous>(slot.scheme).value = next(DofRole::homogeneous);
  } else if (auto* f = std::get_if<FloorPlusBases>(&slot.scheme)) {
    f->floor = next(DofRole::floor);
    for (auto& g : f->bases) {
      g.center_x = next(DofRole::center_x);
      g.center_y = next(DofRole::center_y);
      g.weight = next(DofRole::weight);
      g.var_1 = next(DofRole::var_1);
      if (g.kind == BasisKind::bivariate) {
        g.var_2 = next(DofRole::var_2);
        g.angle = next(DofRole::angle);
      } else {
        g.var_2 = g.var_1;
        g.angle = 0.0;
      }
    }
  } else if (auto* m = std::get_if<ZeroOrderMesh>(&slot.scheme)) {
    for (auto& v : m->values) v = next(DofRole::mesh_value);
  }
}

} // namespace detail

/// Collects the free values of every non-known parameter, yield strength
/// first.
inline DofVector pack_dofs(const ParameterSpec& spec, const DofBoundsPolicy& bounds) {
  DofVector out;
  detail::pack_slot(Param::yield_strength, spec.yield, bounds, out);
  detail::pack_slot(Param::hardening_modulus, spec.hardening, bounds, out);
  return out;
}

/// Writes DOF values back into a copy of `spec` (same layout as pack_dofs).
inline ParameterSpec unpack_dofs(const ParameterSpec& spec, const DofVector& dofs) {
  ParameterSpec out = spec;
  std::size_t i = 0;
  detail::unpack_slot(Param::yield_strength, out.yield, dofs, i);
  detail::unpack_slot(Param::hardening_modulus, out.hardening, dofs, i);
  if (i != dofs.size()) throw ShapeError("DOF vector longer than parameter layout");
  return out;
}

inline ParameterSpec unpack_dofs(const ParameterSpec& spec, const DofVector& layout, const std::vector<double>& x) {
  DofVector d = layout;
  d.values = x;
  return unpack_dofs(spec, d);
}

struct BasisInit {
  double weight = 0.0;
  double variance = 1.0;
  BasisKind kind = BasisKind::univariate;
};

/// New-basis initial values: weight is a tenth of the reference value with
/// the given sign, variance is (2 * smaller specimen dimension / 10)^2.
inline BasisInit default_basis_init(double reference_value, int sign, double smaller_dimension, BasisKind kind) {
  const double sd = 2.0 * smaller_dimension / 10.0;
  return {0.1 * std::abs(reference_value) * (sign < 0 ? -1.0 : 1.0), sd * sd, kind};
}

/// Appends a basis at (cx, cy); existing bases are untouched.
inline FloorPlusBases insert_basis(const FloorPlusBases& scheme, double cx, double cy, const BasisInit& init) {
  FloorPlusBases out = scheme;
  GaussianBasis b;
  b.center_x = cx;
  b.center_y = cy;
  b.weight = init.weight;
  b.var_1 = b.var_2 = init.variance;
  b.angle = 0.0;
  b.kind = init.kind;
  b.validate();
  out.bases.push_back(b);
  return out;
}

} // namespace vfmap
