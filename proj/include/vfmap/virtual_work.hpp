#pragma once

// Discrete principle of virtual work for thin specimens under quasi-static
// load, and the sensitivity-based virtual-fields cost.

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "vfmap/constitutive.hpp"
#include "vfmap/error.hpp"
#include "vfmap/field.hpp"
#include "vfmap/metrics.hpp"
#include "vfmap/parallel.hpp"

namespace vfmap {

/// Virtual strain per point plus the (constant) virtual displacement on the
/// loaded boundary. The opposite boundary is fixed (u* = 0).
struct VirtualField {
  std::string label;
  TensorField strain;
  double u_x = 0.0; ///< virtual displacement on the traction boundary [mm]
  double u_y = 0.0;
};

/// Resultant applied force as a vector along the loading axis.
struct Force2 {
  double x = 0.0, y = 0.0;
};

inline Force2 applied_force(double magnitude, Axis axis) {
  return axis == Axis::y ? Force2{0.0, magnitude} : Force2{magnitude, 0.0};
}

namespace detail {

inline double stress_work_sum(const TensorField& stress, const TensorField& vstrain, const FieldGrid& g) {
  std::vector<double> terms;
  terms.reserve(g.size());
  for (std::size_t p = 0; p < g.size(); ++p) {
    if (!g.valid(p)) continue;
    terms.push_back(stress.xx[p] * vstrain.xx[p] + stress.yy[p] * vstrain.yy[p] + 2.0 * stress.xy[p] * vstrain.xy[p]);
  }
  return g.thickness * g.point_area() * pairwise_sum(terms);
}

} // namespace detail

/// IVW = -h sum_p sigma_ij eps*_ij s^p [N mm].
inline double internal_virtual_work(const TensorField& stress, const VirtualField& vf, const FieldGrid& g) {
  return -detail::stress_work_sum(stress, vf.strain, g);
}

/// EVW = u*_i F_i [N mm].
inline double external_virtual_work(const Force2& f, const VirtualField& vf) { return vf.u_x * f.x + vf.u_y * f.y; }

/// Residual h sum sigma eps* s - u* F for every (field, step), field-major.
inline std::vector<double> sbvf_residuals(const StressHistory& stress, const std::vector<VirtualField>& vfs,
                                          Axis axis) {
  std::vector<double> out;
  out.reserve(vfs.size() * stress.n_steps());
  for (const auto& vf : vfs)
    for (std::size_t t = 0; t < stress.n_steps(); ++t)
      out.push_back(-internal_virtual_work(stress.steps[t], vf, stress.grid) -
                    external_virtual_work(applied_force(stress.forces[t], axis), vf));
  return out;
}

/// phi_SBVF = sum_f sum_t residual^2.
inline double sbvf_cost(const StressHistory& stress, const std::vector<VirtualField>& vfs, Axis axis) {
  auto r = sbvf_residuals(stress, vfs, axis);
  for (auto& v : r) v *= v;
  return pairwise_sum(r);
}

// ---------------------------------------------------------------------------
// Hand-defined virtual fields

namespace detail {

// Coordinate of grid line i along `axis` and the cell edges bounding the grid.
struct AxisFrame {
  double lo, hi; // cell edges
};

inline AxisFrame frame(const FieldGrid& g, Axis a) {
  const double first = a == Axis::x ? g.x(0) : g.y(0);
  const double h = 0.5 * g.spacing(a);
  return {first - h, first - h + g.cell_extent(a)};
}

inline double coord(const FieldGrid& g, std::size_t p, Axis a) { return a == Axis::x ? g.x_of(p) : g.y_of(p); }

inline Axis other(Axis a) { return a == Axis::x ? Axis::y : Axis::x; }

inline void set_strain(TensorField& f, std::size_t p, Axis load, double long_long, double trans_trans,
                       double shear) {
  if (load == Axis::y) {
    f.yy[p] = long_long;
    f.xx[p] = trans_trans;
  } else {
    f.xx[p] = long_long;
    f.yy[p] = trans_trans;
  }
  f.xy[p] = shear;
}

} // namespace detail

/// Slice field: u*_long = 0 below the slice, rises linearly through it and
/// equals the slice width w beyond. Virtual strain is 1 on the slice points.
inline VirtualField slice_virtual_field(const FieldGrid& g, const Slice& slice, Axis axis) {
  VirtualField vf;
  vf.label = "slice_" + std::to_string(slice.index);
  vf.strain = TensorField(g.size());
  for (auto p : slice.points) detail::set_strain(vf.strain, p, axis, 1.0, 0.0, 0.0);
  (axis == Axis::y ? vf.u_y : vf.u_x) = slice.width;
  return vf;
}

/// Uniform extension u*_long = (s - s0) / L over the full length.
inline VirtualField uniform_extension_field(const FieldGrid& g, Axis axis) {
  VirtualField vf;
  vf.label = "uniform_extension";
  vf.strain = TensorField(g.size());
  const double L = g.cell_extent(axis);
  for (std::size_t p = 0; p < g.size(); ++p)
    if (g.valid(p)) detail::set_strain(vf.strain, p, axis, 1.0 / L, 0.0, 0.0);
  (axis == Axis::y ? vf.u_y : vf.u_x) = 1.0;
  return vf;
}

/// Transverse field u*_trans = (t - t_c) xi (1 - xi), xi = (s - s0) / L,
/// which vanishes on both loaded ends.
inline VirtualField transverse_contraction_field(const FieldGrid& g, Axis axis) {
  VirtualField vf;
  vf.label = "transverse_contraction";
  vf.strain = TensorField(g.size());
  const auto fl = detail::frame(g, axis);
  const auto ft = detail::frame(g, detail::other(axis));
  const double L = fl.hi - fl.lo, W = ft.hi - ft.lo;
  const double tc = 0.5 * (ft.lo + ft.hi);
  for (std::size_t p = 0; p < g.size(); ++p) {
    if (!g.valid(p)) continue;
    const double xi = (detail::coord(g, p, axis) - fl.lo) / L;
    const double t = (detail::coord(g, p, detail::other(axis)) - tc) / W;
    // u_t = W t xi (1 - xi): d/dt -> xi (1 - xi), d/ds -> W t (1 - 2 xi) / L
    detail::set_strain(vf.strain, p, axis, 0.0, xi * (1.0 - xi), 0.5 * W * t * (1.0 - 2.0 * xi) / L);
  }
  return vf;
}

// ---------------------------------------------------------------------------
// Sensitivity-based virtual fields

struct VirtualMeshShape {
  std::size_t n_trans = 4; ///< elements across the specimen
  std::size_t n_long = 10; ///< elements along the loading axis
};

/// Least-squares projection of a force-weighted time average of each
/// sensitivity map onto the virtual strain of a bilinear mesh. Nodes on the
/// near loaded end are fixed; nodes on the far end share one displacement
/// vector. Each resulting field is scaled to unit RMS virtual strain; an
/// identically zero sensitivity gives a zero field.
inline std::vector<VirtualField> build_sensitivity_virtual_fields(
    const std::vector<std::vector<TensorField>>& sensitivities, const std::vector<double>& alpha,
    const FieldGrid& g, Axis axis, const VirtualMeshShape& mesh = {}) {
  if (mesh.n_trans == 0 || mesh.n_long == 0) throw ValidationError("virtual mesh needs at least one element");
  const Axis tr = detail::other(axis);
  const auto fl = detail::frame(g, axis);
  const auto ft = detail::frame(g, tr);
  const std::size_t nt_nodes = mesh.n_trans + 1, nl_nodes = mesh.n_long + 1;
  const double el = (fl.hi - fl.lo) / static_cast<double>(mesh.n_long);
  const double et = (ft.hi - ft.lo) / static_cast<double>(mesh.n_trans);

  // DOF numbering: interior nodes get (u_t, u_l); far-end nodes share the
  // last two DOFs; near-end nodes are fixed.
  const std::size_t interior = nt_nodes * (nl_nodes - 2);
  const std::size_t ndof = 2 * interior + 2;
  auto dof = [&](std::size_t it, std::size_t il, int comp) -> long {
    if (il == 0) return -1;
    if (il == nl_nodes - 1) return static_cast<long>(2 * interior) + comp;
    return static_cast<long>(2 * ((il - 1) * nt_nodes + it)) + comp;
  };

  struct Row {
    long dofs[8];
    double gt[4], gl[4];
  };
  // per point: element node DOFs and shape gradients
  std::vector<Row> rows(g.size());
  for (std::size_t p = 0; p < g.size(); ++p) {
    if (!g.valid(p)) continue;
    const double s = detail::coord(g, p, axis) - fl.lo, t = detail::coord(g, p, tr) - ft.lo;
    const auto il = std::min<std::size_t>(static_cast<std::size_t>(std::max(0.0, std::floor(s / el))), mesh.n_long - 1);
    const auto it = std::min<std::size_t>(static_cast<std::size_t>(std::max(0.0, std::floor(t / et))), mesh.n_trans - 1);
    const double u = s / el - static_cast<double>(il), v = t / et - static_cast<double>(it);
    // nodes: (it, il), (it+1, il), (it, il+1), (it+1, il+1)
    const std::size_t nt_[4] = {it, it + 1, it, it + 1}, nl_[4] = {il, il, il + 1, il + 1};
    const double dNdv[4] = {-(1 - u), (1 - u), -u, u};
    const double dNdu[4] = {-(1 - v), -v, (1 - v), v};
    Row r{};
    for (int a = 0; a < 4; ++a) {
      r.dofs[2 * a] = dof(nt_[a], nl_[a], 0);
      r.dofs[2 * a + 1] = dof(nt_[a], nl_[a], 1);
      r.gt[a] = dNdv[a] / et;
      r.gl[a] = dNdu[a] / el;
    }
    rows[p] = r;
  }

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<long>(ndof), static_cast<long>(ndof));
  // B rows for (eps_tt, eps_ll, sqrt(2) eps_tl) at each point
  auto b_rows = [&](const Row& r, Eigen::Matrix<double, 3, 8>& B) {
    B.setZero();
    for (int a = 0; a < 4; ++a) {
      B(0, 2 * a) = r.gt[a];
      B(1, 2 * a + 1) = r.gl[a];
      B(2, 2 * a) = std::sqrt(0.5) * r.gl[a];
      B(2, 2 * a + 1) = std::sqrt(0.5) * r.gt[a];
    }
  };
  Eigen::Matrix<double, 3, 8> B;
  for (std::size_t p = 0; p < g.size(); ++p) {
    if (!g.valid(p)) continue;
    b_rows(rows[p], B);
    const Eigen::Matrix<double, 8, 8> BtB = B.transpose() * B;
    for (int i = 0; i < 8; ++i) {
      if (rows[p].dofs[i] < 0) continue;
      for (int j = 0; j < 8; ++j)
        if (rows[p].dofs[j] >= 0) A(rows[p].dofs[i], rows[p].dofs[j]) += BtB(i, j);
    }
  }
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < static_cast<long>(ndof))
    throw NumericError("virtual-field projection is singular (virtual mesh finer than the data)");

  std::vector<VirtualField> out;
  const std::size_t nt = alpha.size();
  for (std::size_t k = 0; k < sensitivities.size(); ++k) {
    if (sensitivities[k].size() != nt) throw ShapeError("sensitivity step count does not match weights");
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<long>(ndof));
    double target_norm = 0.0;
    for (std::size_t p = 0; p < g.size(); ++p) {
      if (!g.valid(p)) continue;
      double dxx = 0.0, dyy = 0.0, dxy = 0.0;
      for (std::size_t t = 0; t < nt; ++t) {
        dxx += alpha[t] * sensitivities[k][t].xx[p];
        dyy += alpha[t] * sensitivities[k][t].yy[p];
        dxy += alpha[t] * sensitivities[k][t].xy[p];
      }
      dxx /= static_cast<double>(nt);
      dyy /= static_cast<double>(nt);
      dxy /= static_cast<double>(nt);
      const double dtt = axis == Axis::y ? dxx : dyy, dll = axis == Axis::y ? dyy : dxx;
      const Eigen::Vector3d d(dtt, dll, std::sqrt(2.0) * dxy);
      target_norm += d.squaredNorm();
      b_rows(rows[p], B);
      const Eigen::Matrix<double, 8, 1> bd = B.transpose() * d;
      for (int i = 0; i < 8; ++i)
        if (rows[p].dofs[i] >= 0) rhs(rows[p].dofs[i]) += bd(i);
    }
    VirtualField vf;
    vf.label = "sbvf_" + std::to_string(k);
    vf.strain = TensorField(g.size());
    if (target_norm == 0.0) {
      out.push_back(std::move(vf));
      continue;
    }
    const Eigen::VectorXd U = qr.solve(rhs);
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < g.size(); ++p) {
      if (!g.valid(p)) continue;
      const auto& r = rows[p];
      double ett = 0.0, ell = 0.0, etl = 0.0;
      for (int a = 0; a < 4; ++a) {
        const double ut = r.dofs[2 * a] >= 0 ? U(r.dofs[2 * a]) : 0.0;
        const double ul = r.dofs[2 * a + 1] >= 0 ? U(r.dofs[2 * a + 1]) : 0.0;
        ett += r.gt[a] * ut;
        ell += r.gl[a] * ul;
        etl += 0.5 * (r.gl[a] * ut + r.gt[a] * ul);
      }
      detail::set_strain(vf.strain, p, axis, ell, ett, etl);
      sq += ett * ett + ell * ell + 2.0 * etl * etl;
      ++n;
    }
    const double ut_far = U(static_cast<long>(2 * interior)), ul_far = U(static_cast<long>(2 * interior + 1));
    if (axis == Axis::y) {
      vf.u_x = ut_far;
      vf.u_y = ul_far;
    } else {
      vf.u_y = ut_far;
      vf.u_x = ul_far;
    }
    const double rms = std::sqrt(sq / static_cast<double>(n));
    if (rms > 0.0) {
      for (std::size_t p = 0; p < g.size(); ++p) {
        vf.strain.xx[p] /= rms;
        vf.strain.yy[p] /= rms;
        vf.strain.xy[p] /= rms;
      }
      vf.u_x /= rms;
      vf.u_y /= rms;
    }
    out.push_back(std::move(vf));
  }
  return out;
}

} // namespace vfmap
