#pragma once

// Stress-equilibrium metrics: force reconstruction error (FRE) over slices
// normal to the loading axis, and the windowed equilibrium gap indicator
// (EGI), together with their force-weighted RMS aggregates.

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "vfmap/error.hpp"
#include "vfmap/field.hpp"
#include "vfmap/parallel.hpp"

namespace vfmap {

/// alpha(t) = F(t)^2 / mean(F^2); the weights have unit mean.
inline std::vector<double> force_weights(const std::vector<double>& forces) {
  if (forces.empty()) throw ValidationError("force history is empty");
  std::vector<double> sq(forces.size());
  for (std::size_t t = 0; t < forces.size(); ++t) {
    if (!(forces[t] > 0.0)) throw ValidationError("force weights need strictly positive forces");
    sq[t] = forces[t] * forces[t];
  }
  const double mean = pairwise_sum(sq) / static_cast<double>(sq.size());
  for (auto& v : sq) v /= mean;
  return sq;
}

inline double longitudinal(const TensorField& s, std::size_t p, Axis axis) {
  return axis == Axis::y ? s.yy[p] : s.xx[p];
}

// ---------------------------------------------------------------------------
// Force reconstruction error

struct Slice {
  std::size_t index = 0;           ///< position along the loading axis
  std::size_t first_line = 0;      ///< first grid line (row for a y-axis load)
  std::size_t line_count = 0;
  std::vector<std::size_t> points; ///< valid points in the slice
  double width = 0.0;              ///< w [mm]
  double length = 0.0;             ///< L^r [mm], transverse extent of the valid points
};

struct SliceSet {
  Axis axis = Axis::y;
  std::size_t width_points = 5;
  std::vector<Slice> slices;
  std::vector<std::size_t> empty_slices; ///< indices dropped for lack of valid points
};

/// Tiles the grid along `axis` with slices `width_points` lines wide; the
/// last slice takes whatever lines remain.
inline SliceSet make_slices(const FieldGrid& g, Axis axis, std::size_t width_points = 5) {
  if (width_points == 0) throw ValidationError("slice width must be at least one grid line");
  SliceSet set;
  set.axis = axis;
  set.width_points = width_points;
  const std::size_t lines = g.count(axis);
  const double pitch_along = g.spacing(axis);
  const double pitch_across = axis == Axis::y ? g.spacing_x : g.spacing_y;
  std::size_t idx = 0;
  for (std::size_t first = 0; first < lines; first += width_points, ++idx) {
    Slice s;
    s.index = idx;
    s.first_line = first;
    s.line_count = std::min(width_points, lines - first);
    for (std::size_t l = first; l < first + s.line_count; ++l)
      for (std::size_t j = 0; j < g.count(axis == Axis::y ? Axis::x : Axis::y); ++j) {
        const std::size_t p = axis == Axis::y ? g.index(l, j) : g.index(j, l);
        if (g.valid(p)) s.points.push_back(p);
      }
    s.width = static_cast<double>(s.line_count) * pitch_along;
    s.length = static_cast<double>(s.points.size()) * pitch_across * pitch_along / s.width;
    if (s.points.empty())
      set.empty_slices.push_back(idx);
    else
      set.slices.push_back(std::move(s));
  }
  return set;
}

/// FRE^r(t) = h L^r mean(sigma_long over slice r) / F_A(t) - 1, stored
/// [slice][step].
struct FreField {
  std::vector<std::vector<double>> values;
};

inline FreField fre_field(const StressHistory& stress, const SliceSet& slices) {
  FreField out;
  const double h = stress.grid.thickness;
  out.values.assign(slices.slices.size(), std::vector<double>(stress.n_steps(), 0.0));
  std::vector<double> buf;
  for (std::size_t r = 0; r < slices.slices.size(); ++r) {
    const auto& sl = slices.slices[r];
    buf.resize(sl.points.size());
    for (std::size_t t = 0; t < stress.n_steps(); ++t) {
      for (std::size_t i = 0; i < sl.points.size(); ++i) buf[i] = longitudinal(stress.steps[t], sl.points[i], slices.axis);
      const double mean = pairwise_sum(buf) / static_cast<double>(buf.size());
      out.values[r][t] = h * sl.length * mean / stress.forces[t] - 1.0;
    }
  }
  return out;
}

struct WeightedRms {
  std::vector<double> temporal; ///< per slice or per point; missing entries NaN
  double overall = 0.0;         ///< spatial-temporal RMS
};

namespace detail {

inline double weighted_temporal_ms(const std::vector<double>& series, const std::vector<double>& alpha) {
  std::vector<double> terms(series.size());
  for (std::size_t t = 0; t < series.size(); ++t) terms[t] = alpha[t] * series[t] * series[t];
  return pairwise_sum(terms) / static_cast<double>(terms.size());
}

} // namespace detail

inline WeightedRms fre_weighted_rms(const FreField& fre, const std::vector<double>& alpha) {
  WeightedRms out;
  out.temporal.resize(fre.values.size());
  std::vector<double> ms(fre.values.size());
  for (std::size_t r = 0; r < fre.values.size(); ++r) {
    if (fre.values[r].size() != alpha.size()) throw ShapeError("FRE series length does not match weights");
    ms[r] = detail::weighted_temporal_ms(fre.values[r], alpha);
    out.temporal[r] = std::sqrt(ms[r]);
  }
  out.overall = ms.empty() ? 0.0 : std::sqrt(pairwise_sum(ms) / static_cast<double>(ms.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Equilibrium gap indicator

/// Virtual fields of a 2x2-element, 9-node bilinear mesh spanning `side`
/// data points per direction. Boundary nodes are clamped; the centre node
/// moves by [1, 1] or [1, -1]. Gradients of the centre hat function are
/// sampled at data points; on element edges (centre lines and window border)
/// the mean of the one-sided limits is used, which is the trapezoid rule for
/// the window integral.
struct EgiWindow {
  std::size_t side = 3;
  long half = 1;
  double length = 0.0;         ///< mean side length [mm]
  std::vector<double> hat_x;   ///< centre hat profile along x, index j + half
  std::vector<double> hat_y;
  std::vector<double> dhat_x;  ///< derivative of hat_x [1/mm]
  std::vector<double> dhat_y;

  double dndx(long i, long j) const { return dhat_x[j + half] * hat_y[i + half]; }
  double dndy(long i, long j) const { return hat_x[j + half] * dhat_y[i + half]; }

  /// Virtual strain at row offset i, column offset j for centre vector
  /// [1, 1] (`vector` = 0) or [1, -1] (`vector` = 1).
  struct Strain {
    double xx, yy, xy;
  };
  Strain virtual_strain(int vector, long i, long j) const {
    const double sy = vector == 0 ? 1.0 : -1.0;
    const double gx = dndx(i, j), gy = dndy(i, j);
    return {gx, sy * gy, 0.5 * (gy + sy * gx)};
  }
};

inline EgiWindow build_egi_window(std::size_t side, const FieldGrid& g) {
  if (side < 3 || side % 2 == 0) throw ValidationError("EGI window side must be an odd count >= 3");
  EgiWindow w;
  w.side = side;
  w.half = static_cast<long>(side / 2);
  const double k = static_cast<double>(w.half);
  const double ax = k * g.spacing_x, ay = k * g.spacing_y;
  w.length = 0.5 * (2.0 * ax + 2.0 * ay);
  auto profile = [&](std::vector<double>& hat, std::vector<double>& dhat, double a) {
    hat.resize(side);
    dhat.resize(side);
    for (long i = -w.half; i <= w.half; ++i) {
      const double u = static_cast<double>(i);
      hat[i + w.half] = 1.0 - std::abs(u) / k;
      double d = i == 0 ? 0.0 : (i > 0 ? -1.0 : 1.0) / a;
      if (std::abs(i) == w.half) d *= 0.5;
      dhat[i + w.half] = d;
    }
  };
  profile(w.hat_x, w.dhat_x, ax);
  profile(w.hat_y, w.dhat_y, ay);
  return w;
}

/// Odd point count nearest to `fraction` of the smaller specimen dimension.
inline std::size_t window_side_for_fraction(const FieldGrid& g, double fraction) {
  const double dim = std::min(g.cell_extent(Axis::x), g.cell_extent(Axis::y));
  const double pitch = std::min(g.spacing_x, g.spacing_y);
  const double pts = fraction * dim / pitch;
  const auto side = static_cast<long>(2.0 * std::floor((pts - 1.0) / 2.0 + 0.5) + 1.0);
  return static_cast<std::size_t>(std::max(3L, side));
}

struct EgiField {
  std::size_t side = 0;
  double window_length = 0.0;
  /// raw[v][t][p]: h sum sigma:eps* s for centre vector v; NaN where the
  /// centre is not admissible.
  std::vector<std::vector<std::vector<double>>> raw;
  std::vector<std::size_t> count; ///< N_p^m per centre
  /// normalised[t][p]: quadratic mean over the two vectors of raw / (N_p^m F_A).
  std::vector<std::vector<double>> normalised;
};

struct EgiOptions {
  Axis traction_axis = Axis::y; ///< grid ends along this axis carry the load
  std::size_t stride = 1;
  unsigned workers = 1;
};

namespace detail {

// out(r, c) = sum_j in(r, c + j) kx(j) followed by sum_i tmp(r + i, c) ky(i);
// samples outside the grid contribute zero.
inline void separable_correlate(const std::vector<double>& in, std::size_t rows, std::size_t cols,
                                const std::vector<double>& kx, const std::vector<double>& ky, long half,
                                std::vector<double>& tmp, std::vector<double>& out) {
  tmp.assign(rows * cols, 0.0);
  out.assign(rows * cols, 0.0);
  const long R = static_cast<long>(rows), C = static_cast<long>(cols);
  for (long r = 0; r < R; ++r)
    for (long c = 0; c < C; ++c) {
      double s = 0.0;
      const long j0 = std::max(-half, -c), j1 = std::min(half, C - 1 - c);
      for (long j = j0; j <= j1; ++j) s += in[r * C + c + j] * kx[j + half];
      tmp[r * C + c] = s;
    }
  for (long r = 0; r < R; ++r) {
    const long i0 = std::max(-half, -r), i1 = std::min(half, R - 1 - r);
    for (long c = 0; c < C; ++c) {
      double s = 0.0;
      for (long i = i0; i <= i1; ++i) s += tmp[(r + i) * C + c] * ky[i + half];
      out[r * C + c] = s;
    }
  }
}

} // namespace detail

/// Centres eligible for a window: valid points on the raster whose window
/// stays clear of the traction edges by more than half a window.
inline std::vector<std::uint8_t> egi_admissible_centres(const FieldGrid& g, const EgiWindow& w,
                                                        const EgiOptions& opt) {
  std::vector<std::uint8_t> ok(g.size(), 0);
  const std::size_t margin = static_cast<std::size_t>(w.half) + 1; // ceil(side / 2)
  const std::size_t stride = std::max<std::size_t>(1, opt.stride);
  for (std::size_t r = 0; r < g.n_rows; ++r)
    for (std::size_t c = 0; c < g.n_cols; ++c) {
      if (!g.valid(r, c) || r % stride != 0 || c % stride != 0) continue;
      const std::size_t along = opt.traction_axis == Axis::y ? r : c;
      const std::size_t n = g.count(opt.traction_axis);
      if (along < margin || along + margin > n - 1) continue;
      ok[g.index(r, c)] = 1;
    }
  return ok;
}

inline EgiField egi_field(const StressHistory& stress, const EgiWindow& w, const EgiOptions& opt = {}) {
  const auto& g = stress.grid;
  const std::size_t nt = stress.n_steps(), np = g.size();
  const double hs = g.thickness * g.point_area();
  const auto admissible = egi_admissible_centres(g, w, opt);

  EgiField out;
  out.side = w.side;
  out.window_length = w.length;
  out.raw.assign(2, std::vector<std::vector<double>>(nt, std::vector<double>(np, kMissing)));
  out.normalised.assign(nt, std::vector<double>(np, kMissing));

  // valid-point counts via a summed-area table
  out.count.assign(np, 0);
  {
    const std::size_t R = g.n_rows, C = g.n_cols;
    std::vector<long> sat((R + 1) * (C + 1), 0);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c)
        sat[(r + 1) * (C + 1) + c + 1] =
            g.mask[g.index(r, c)] + sat[r * (C + 1) + c + 1] + sat[(r + 1) * (C + 1) + c] - sat[r * (C + 1) + c];
    const long hw = w.half;
    for (std::size_t p = 0; p < np; ++p) {
      if (!admissible[p]) continue;
      const long r = static_cast<long>(g.row_of(p)), c = static_cast<long>(g.col_of(p));
      const long r0 = std::max(0L, r - hw), r1 = std::min(static_cast<long>(R) - 1, r + hw);
      const long c0 = std::max(0L, c - hw), c1 = std::min(static_cast<long>(C) - 1, c + hw);
      const long cp = static_cast<long>(C) + 1;
      out.count[p] = static_cast<std::size_t>(sat[(r1 + 1) * cp + c1 + 1] - sat[r0 * cp + c1 + 1] -
                                              sat[(r1 + 1) * cp + c0] + sat[r0 * cp + c0]);
    }
  }

  parallel_for(nt, opt.workers, [&](std::size_t t) {
    const auto& s = stress.steps[t];
    auto masked = [&](const std::vector<double>& v) {
      std::vector<double> m(np, 0.0);
      for (std::size_t p = 0; p < np; ++p)
        if (g.valid(p)) m[p] = v[p];
      return m;
    };
    const auto sxx = masked(s.xx), syy = masked(s.yy), sxy = masked(s.xy);
    std::vector<double> tmp, cx_xx, cx_xy, cy_yy, cy_xy;
    detail::separable_correlate(sxx, g.n_rows, g.n_cols, w.dhat_x, w.hat_y, w.half, tmp, cx_xx);
    detail::separable_correlate(sxy, g.n_rows, g.n_cols, w.dhat_x, w.hat_y, w.half, tmp, cx_xy);
    detail::separable_correlate(syy, g.n_rows, g.n_cols, w.hat_x, w.dhat_y, w.half, tmp, cy_yy);
    detail::separable_correlate(sxy, g.n_rows, g.n_cols, w.hat_x, w.dhat_y, w.half, tmp, cy_xy);
    const double f = stress.forces[t];
    for (std::size_t p = 0; p < np; ++p) {
      if (!admissible[p]) continue;
      const double r11 = hs * (cx_xx[p] + cx_xy[p] + cy_yy[p] + cy_xy[p]);
      const double r1m = hs * (cx_xx[p] - cx_xy[p] - cy_yy[p] + cy_xy[p]);
      out.raw[0][t][p] = r11;
      out.raw[1][t][p] = r1m;
      const double scale = static_cast<double>(out.count[p]) * f;
      const double n11 = r11 / scale, n1m = r1m / scale;
      out.normalised[t][p] = std::sqrt(0.5 * (n11 * n11 + n1m * n1m));
    }
  });
  return out;
}

inline WeightedRms egi_weighted_rms(const EgiField& egi, const std::vector<double>& alpha) {
  const std::size_t nt = egi.normalised.size();
  if (nt != alpha.size()) throw ShapeError("EGI step count does not match weights");
  WeightedRms out;
  const std::size_t np = nt ? egi.normalised[0].size() : 0;
  out.temporal.assign(np, kMissing);
  std::vector<double> ms;
  std::vector<double> series(nt);
  for (std::size_t p = 0; p < np; ++p) {
    if (is_missing(egi.normalised[0][p])) continue;
    for (std::size_t t = 0; t < nt; ++t) series[t] = egi.normalised[t][p];
    const double m = detail::weighted_temporal_ms(series, alpha);
    out.temporal[p] = std::sqrt(m);
    ms.push_back(m);
  }
  out.overall = ms.empty() ? 0.0 : std::sqrt(pairwise_sum(ms) / static_cast<double>(ms.size()));
  return out;
}

/// Window-length weights gamma_k = L_k / sum L_j.
inline std::vector<double> window_weights(const std::vector<double>& lengths) {
  const double total = std::accumulate(lengths.begin(), lengths.end(), 0.0);
  if (!(total > 0.0)) throw ValidationError("window lengths must be positive");
  std::vector<double> out(lengths.size());
  for (std::size_t k = 0; k < lengths.size(); ++k) out[k] = lengths[k] / total;
  return out;
}

/// Box-mean filter `side_mm` wide (ceil(side / pitch) points per direction);
/// missing values are excluded from the local means and stay missing.
inline std::vector<double> box_smooth(const FieldGrid& g, const std::vector<double>& map, double side_mm) {
  if (!(side_mm > 0.0)) return map;
  const auto npts = [&](double pitch) {
    return std::max<long>(1, static_cast<long>(std::ceil(side_mm / pitch - 1e-9)));
  };
  const long nx = npts(g.spacing_x), ny = npts(g.spacing_y);
  const long x0 = -(nx - 1) / 2, y0 = -(ny - 1) / 2;
  const long R = static_cast<long>(g.n_rows), C = static_cast<long>(g.n_cols);
  std::vector<double> out(map.size(), kMissing);
  for (long r = 0; r < R; ++r)
    for (long c = 0; c < C; ++c) {
      const std::size_t p = static_cast<std::size_t>(r * C + c);
      if (is_missing(map[p])) continue;
      double sum = 0.0;
      long n = 0;
      for (long i = y0; i < y0 + ny; ++i)
        for (long j = x0; j < x0 + nx; ++j) {
          const long rr = r + i, cc = c + j;
          if (rr < 0 || cc < 0 || rr >= R || cc >= C) continue;
          const double v = map[static_cast<std::size_t>(rr * C + cc)];
          if (is_missing(v)) continue;
          sum += v;
          ++n;
        }
      out[p] = sum / static_cast<double>(n);
    }
  return out;
}

/// Combines per-window temporal-RMS maps with gamma_k weights. Where some
/// windows are missing, the weights of the present ones are renormalised.
/// The result is box-smoothed.
inline std::vector<double> combined_egi_map(const FieldGrid& g, const std::vector<std::vector<double>>& maps,
                                            const std::vector<double>& lengths, double smooth_side_mm) {
  if (maps.empty() || maps.size() != lengths.size()) throw ShapeError("need one window length per map");
  const auto gamma = window_weights(lengths);
  std::vector<double> combined(g.size(), kMissing);
  for (std::size_t p = 0; p < g.size(); ++p) {
    double sum = 0.0, wsum = 0.0;
    for (std::size_t k = 0; k < maps.size(); ++k) {
      if (is_missing(maps[k][p])) continue;
      sum += gamma[k] * maps[k][p];
      wsum += gamma[k];
    }
    if (wsum > 0.0) combined[p] = sum / wsum;
  }
  return box_smooth(g, combined, smooth_side_mm);
}

} // namespace vfmap
