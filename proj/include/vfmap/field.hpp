#pragma once

// Gridded full-field kinematic data: grid geometry, strain/stress histories,
// CSV ingestion and emission, cropping.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "vfmap/error.hpp"

namespace vfmap {

enum class Axis { x, y };

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

/// Regular grid of measurement points. Points are stored row-major; row index
/// runs along y, column index along x.
struct FieldGrid {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  double spacing_x = 1.0;
  double spacing_y = 1.0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double thickness = 1.0;
  std::vector<std::uint8_t> mask; ///< 1 = valid specimen point

  static FieldGrid make(std::size_t rows, std::size_t cols, double dx, double dy, double thickness,
                        double ox = 0.0, double oy = 0.0) {
    FieldGrid g;
    g.n_rows = rows;
    g.n_cols = cols;
    g.spacing_x = dx;
    g.spacing_y = dy;
    g.origin_x = ox;
    g.origin_y = oy;
    g.thickness = thickness;
    g.mask.assign(rows * cols, 1);
    g.validate();
    return g;
  }

  void validate() const {
    if (!(spacing_x > 0.0) || !(spacing_y > 0.0)) throw ValidationError("grid spacing must be positive");
    if (!(thickness > 0.0)) throw ValidationError("specimen thickness must be positive");
    if (n_rows == 0 || n_cols == 0) throw ValidationError("grid must have at least one row and column");
    if (mask.size() != n_rows * n_cols) throw ShapeError("mask size does not match grid dimensions");
  }

  std::size_t size() const { return n_rows * n_cols; }
  std::size_t index(std::size_t row, std::size_t col) const { return row * n_cols + col; }
  std::size_t row_of(std::size_t p) const { return p / n_cols; }
  std::size_t col_of(std::size_t p) const { return p % n_cols; }
  double x(std::size_t col) const { return origin_x + static_cast<double>(col) * spacing_x; }
  double y(std::size_t row) const { return origin_y + static_cast<double>(row) * spacing_y; }
  double x_of(std::size_t p) const { return x(col_of(p)); }
  double y_of(std::size_t p) const { return y(row_of(p)); }
  bool valid(std::size_t p) const { return mask[p] != 0; }
  bool valid(std::size_t row, std::size_t col) const { return mask[index(row, col)] != 0; }

  /// Mid-point rule area s^p, identical for every point of a regular grid.
  double point_area() const { return spacing_x * spacing_y; }

  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  }

  double x_max() const { return x(n_cols - 1); }
  double y_max() const { return y(n_rows - 1); }

  /// Extent covered by the mid-point cells along an axis (n * spacing).
  double cell_extent(Axis a) const {
    return a == Axis::x ? static_cast<double>(n_cols) * spacing_x : static_cast<double>(n_rows) * spacing_y;
  }
  double spacing(Axis a) const { return a == Axis::x ? spacing_x : spacing_y; }
  std::size_t count(Axis a) const { return a == Axis::x ? n_cols : n_rows; }

  bool same_layout(const FieldGrid& o) const {
    return n_rows == o.n_rows && n_cols == o.n_cols && spacing_x == o.spacing_x && spacing_y == o.spacing_y &&
           origin_x == o.origin_x && origin_y == o.origin_y && mask == o.mask;
  }
};

/// In-plane symmetric tensor field, tensorial shear convention.
struct TensorField {
  std::vector<double> xx, yy, xy;

  TensorField() = default;
  explicit TensorField(std::size_t n) : xx(n, 0.0), yy(n, 0.0), xy(n, 0.0) {}
  std::size_t size() const { return xx.size(); }
};

struct StrainHistory {
  FieldGrid grid;
  std::vector<TensorField> steps;
  std::vector<double> forces; ///< applied force F_A(t) [N]

  std::size_t n_steps() const { return steps.size(); }
};

struct StressHistory {
  FieldGrid grid;
  std::vector<TensorField> steps;               ///< [MPa]
  std::vector<std::vector<double>> eq_plastic;  ///< accumulated equivalent plastic strain per step
  std::vector<double> forces;

  std::size_t n_steps() const { return steps.size(); }
};

inline void validate_history(const StrainHistory& h) {
  h.grid.validate();
  if (h.steps.empty()) throw ValidationError("strain history has no steps");
  if (h.forces.size() != h.steps.size()) throw ShapeError("force count does not match step count");
  for (const auto& s : h.steps)
    if (s.xx.size() != h.grid.size() || s.yy.size() != h.grid.size() || s.xy.size() != h.grid.size())
      throw ShapeError("strain field size does not match grid");
  for (double f : h.forces)
    if (!(f > 0.0)) throw ValidationError("applied force must be positive at every step");
}

// ---------------------------------------------------------------------------
// CSV ingestion and emission

enum class ShearConvention { tensorial, engineering };

/// Grid metadata that is not carried by the strain records themselves.
struct GridMeta {
  double spacing_x = 1.0;
  double spacing_y = 1.0;
  double thickness = 1.0;
  std::optional<double> origin_x; ///< derived from the records when absent
  std::optional<double> origin_y;
  std::size_t n_rows = 0; ///< 0 = infer from the largest row index
  std::size_t n_cols = 0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, out);
  return res.ec == std::errc{} && res.ptr == end;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open input file: " + path);
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open output file: " + path);
  return out;
}

// Looks for `shear=...` among whitespace/comma separated tokens.
inline std::optional<ShearConvention> shear_token(std::string_view text, const std::string& src, std::size_t line) {
  for (char sep : {' ', ','}) {
    for (auto tok : split(text, sep)) {
      if (tok.rfind("shear=", 0) != 0) continue;
      const auto v = tok.substr(6);
      if (v == "tensorial") return ShearConvention::tensorial;
      if (v == "engineering") return ShearConvention::engineering;
      throw ParseError(src, line, "unknown shear convention '" + std::string(v) + "'");
    }
  }
  return std::nullopt;
}

} // namespace detail

inline constexpr std::string_view kStrainHeader = "step,row,col,x_mm,y_mm,eps_xx,eps_yy,eps_xy";
inline constexpr std::string_view kLoadHeader = "step,force_N";

/// Reads a strain CSV plus its companion load CSV. Points absent from every
/// step are masked out; a point set that differs between steps is a shape
/// error.
inline StrainHistory ingest_strain_csv(const std::string& strain_path, const std::string& load_path,
                                       const GridMeta& meta) {
  struct Record {
    std::size_t row, col;
    double x, y, exx, eyy, exy;
  };
  std::map<long long, std::vector<Record>> by_step;
  ShearConvention shear = ShearConvention::tensorial;

  {
    auto in = detail::open_input(strain_path);
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
      ++lineno;
      const auto text = detail::trim(line);
      if (text.empty()) continue;
      if (text.front() == '#') {
        if (auto s = detail::shear_token(text.substr(1), strain_path, lineno)) shear = *s;
        continue;
      }
      if (!header_seen) {
        if (text.substr(0, kStrainHeader.size()) != kStrainHeader)
          throw ParseError(strain_path, lineno, "expected header '" + std::string(kStrainHeader) + "'");
        if (auto s = detail::shear_token(text.substr(kStrainHeader.size()), strain_path, lineno)) shear = *s;
        header_seen = true;
        continue;
      }
      const auto cols = detail::split(text, ',');
      if (cols.size() != 8) throw ParseError(strain_path, lineno, "expected 8 fields");
      long long step = 0;
      long long row = 0, col = 0;
      Record r{};
      if (!detail::parse_number(cols[0], step) || !detail::parse_number(cols[1], row) ||
          !detail::parse_number(cols[2], col) || row < 0 || col < 0)
        throw ParseError(strain_path, lineno, "bad step/row/col index");
      if (!detail::parse_number(cols[3], r.x) || !detail::parse_number(cols[4], r.y) ||
          !detail::parse_number(cols[5], r.exx) || !detail::parse_number(cols[6], r.eyy) ||
          !detail::parse_number(cols[7], r.exy))
        throw ParseError(strain_path, lineno, "bad numeric field");
      r.row = static_cast<std::size_t>(row);
      r.col = static_cast<std::size_t>(col);
      by_step[step].push_back(r);
    }
    if (!header_seen) throw ParseError(strain_path, lineno, "missing header");
  }
  if (by_step.empty()) throw ShapeError("strain file contains no records: " + strain_path);

  std::map<long long, double> loads;
  {
    auto in = detail::open_input(load_path);
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
      ++lineno;
      const auto text = detail::trim(line);
      if (text.empty() || text.front() == '#') continue;
      if (!header_seen) {
        if (text != kLoadHeader) throw ParseError(load_path, lineno, "expected header 'step,force_N'");
        header_seen = true;
        continue;
      }
      const auto cols = detail::split(text, ',');
      long long step = 0;
      double f = 0.0;
      if (cols.size() != 2 || !detail::parse_number(cols[0], step) || !detail::parse_number(cols[1], f))
        throw ParseError(load_path, lineno, "expected 'step,force_N'");
      if (!loads.emplace(step, f).second) throw ParseError(load_path, lineno, "duplicate step");
    }
  }

  std::size_t max_row = 0, max_col = 0;
  for (const auto& [step, recs] : by_step)
    for (const auto& r : recs) {
      max_row = std::max(max_row, r.row);
      max_col = std::max(max_col, r.col);
    }
  StrainHistory h;
  h.grid.n_rows = meta.n_rows ? meta.n_rows : max_row + 1;
  h.grid.n_cols = meta.n_cols ? meta.n_cols : max_col + 1;
  if (max_row >= h.grid.n_rows || max_col >= h.grid.n_cols)
    throw ShapeError("record index outside declared grid dimensions");
  h.grid.spacing_x = meta.spacing_x;
  h.grid.spacing_y = meta.spacing_y;
  h.grid.thickness = meta.thickness;
  // Origin from the records nearest the grid origin, so a point in column 0
  // (row 0) fixes it without rounding.
  const auto& recs0 = by_step.begin()->second;
  const auto& left = *std::min_element(recs0.begin(), recs0.end(), [](auto& a, auto& b) { return a.col < b.col; });
  const auto& low = *std::min_element(recs0.begin(), recs0.end(), [](auto& a, auto& b) { return a.row < b.row; });
  h.grid.origin_x = meta.origin_x ? *meta.origin_x : left.x - static_cast<double>(left.col) * meta.spacing_x;
  h.grid.origin_y = meta.origin_y ? *meta.origin_y : low.y - static_cast<double>(low.row) * meta.spacing_y;
  h.grid.mask.assign(h.grid.n_rows * h.grid.n_cols, 0);
  h.grid.validate();

  const double shear_factor = shear == ShearConvention::engineering ? 0.5 : 1.0;
  std::vector<std::size_t> reference_points;
  long long reference_step = 0;
  for (const auto& [step, recs] : by_step) {
    TensorField f(h.grid.size());
    std::vector<std::size_t> points;
    points.reserve(recs.size());
    std::vector<std::uint8_t> seen(h.grid.size(), 0);
    for (const auto& r : recs) {
      const auto p = h.grid.index(r.row, r.col);
      if (seen[p]) throw ShapeError("duplicate point (" + std::to_string(r.row) + "," + std::to_string(r.col) +
                                    ") at step " + std::to_string(step));
      seen[p] = 1;
      points.push_back(p);
      f.xx[p] = r.exx;
      f.yy[p] = r.eyy;
      f.xy[p] = r.exy * shear_factor;
    }
    std::sort(points.begin(), points.end());
    if (h.steps.empty()) {
      reference_points = points;
      reference_step = step;
    } else if (points.size() != reference_points.size()) {
      throw ShapeError("step " + std::to_string(step) + " has " + std::to_string(points.size()) +
                       " points while step " + std::to_string(reference_step) + " has " +
                       std::to_string(reference_points.size()));
    } else if (points != reference_points) {
      throw ShapeError("step " + std::to_string(step) + " covers a different point set than step " +
                       std::to_string(reference_step));
    }
    const auto it = loads.find(step);
    if (it == loads.end()) throw ShapeError("no load record for step " + std::to_string(step));
    h.steps.push_back(std::move(f));
    h.forces.push_back(it->second);
  }
  if (loads.size() != by_step.size()) throw ShapeError("load file has steps without strain records");
  for (auto p : reference_points) h.grid.mask[p] = 1;
  validate_history(h);
  return h;
}

/// Writes the strain/load CSV pair. Steps are numbered from 1. Values are
/// written in shortest round-trip form, so ingesting the output reproduces
/// the history exactly.
inline void emit_strain_csv(const StrainHistory& h, const std::string& strain_path, const std::string& load_path) {
  using detail::format_double;
  {
    auto out = detail::open_output(strain_path);
    out << "# shear=tensorial\n" << kStrainHeader << '\n';
    for (std::size_t t = 0; t < h.steps.size(); ++t) {
      const auto& s = h.steps[t];
      for (std::size_t p = 0; p < h.grid.size(); ++p) {
        if (!h.grid.valid(p)) continue;
        out << (t + 1) << ',' << h.grid.row_of(p) << ',' << h.grid.col_of(p) << ',' << format_double(h.grid.x_of(p))
            << ',' << format_double(h.grid.y_of(p)) << ',' << format_double(s.xx[p]) << ','
            << format_double(s.yy[p]) << ',' << format_double(s.xy[p]) << '\n';
      }
    }
  }
  auto out = detail::open_output(load_path);
  out << kLoadHeader << '\n';
  for (std::size_t t = 0; t < h.forces.size(); ++t) out << (t + 1) << ',' << format_double(h.forces[t]) << '\n';
}

/// Writes a per-point scalar map as `row,col,x_mm,y_mm,<name>`; masked and
/// missing points are omitted.
inline void emit_scalar_csv(const FieldGrid& g, const std::vector<double>& values, const std::string& name,
                            const std::string& path) {
  auto out = detail::open_output(path);
  out << "row,col,x_mm,y_mm," << name << '\n';
  for (std::size_t p = 0; p < g.size(); ++p) {
    if (!g.valid(p) || is_missing(values[p])) continue;
    out << g.row_of(p) << ',' << g.col_of(p) << ',' << detail::format_double(g.x_of(p)) << ','
        << detail::format_double(g.y_of(p)) << ',' << detail::format_double(values[p]) << '\n';
  }
}

/// Reads a `row,col,x_mm,y_mm,<value>` map onto `g`; absent points are missing.
inline std::vector<double> ingest_scalar_csv(const FieldGrid& g, const std::string& path) {
  auto in = detail::open_input(path);
  std::vector<double> out(g.size(), kMissing);
  std::string line;
  std::size_t ln = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++ln;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (!header) {
      header = true;
      if (t.rfind("row,col", 0) == 0) continue;
    }
    const auto f = detail::split(t, ',');
    if (f.size() != 5) throw ParseError(path, ln, "expected 5 fields");
    std::size_t r = 0, c = 0;
    double v = 0.0;
    if (!detail::parse_number(f[0], r) || !detail::parse_number(f[1], c) || !detail::parse_number(f[4], v))
      throw ParseError(path, ln, "malformed number");
    if (r >= g.n_rows || c >= g.n_cols) throw ShapeError(path + ":" + std::to_string(ln) + ": point outside grid");
    out[g.index(r, c)] = v;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Region operations

namespace detail {

inline FieldGrid sub_grid(const FieldGrid& g, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
  FieldGrid out = g;
  out.n_rows = r1 - r0;
  out.n_cols = c1 - c0;
  out.origin_x = g.x(c0);
  out.origin_y = g.y(r0);
  out.mask.assign(out.n_rows * out.n_cols, 0);
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) out.mask[out.index(r - r0, c - c0)] = g.mask[g.index(r, c)];
  return out;
}

inline std::vector<double> sub_values(const FieldGrid& g, const std::vector<double>& v, std::size_t r0,
                                      std::size_t r1, std::size_t c0, std::size_t c1) {
  std::vector<double> out;
  out.reserve((r1 - r0) * (c1 - c0));
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) out.push_back(v[g.index(r, c)]);
  return out;
}

} // namespace detail

/// Restricts the history to grid lines whose coordinate along `axis` lies in
/// [lo, hi]. Forces are unchanged.
inline StrainHistory crop_region(const StrainHistory& h, double lo, double hi, Axis axis = Axis::x) {
  if (!(lo < hi)) throw ValidationError("crop bounds must satisfy lo < hi");
  const auto& g = h.grid;
  const double tol = 1e-9 * g.spacing(axis);
  std::size_t first = g.count(axis), last = 0;
  for (std::size_t i = 0; i < g.count(axis); ++i) {
    const double c = axis == Axis::x ? g.x(i) : g.y(i);
    if (c >= lo - tol && c <= hi + tol) {
      first = std::min(first, i);
      last = i;
    }
  }
  if (first == g.count(axis)) throw ValidationError("crop region contains no grid points");
  std::size_t r0 = 0, r1 = g.n_rows, c0 = 0, c1 = g.n_cols;
  if (axis == Axis::x) {
    c0 = first;
    c1 = last + 1;
  } else {
    r0 = first;
    r1 = last + 1;
  }
  StrainHistory out;
  out.grid = detail::sub_grid(g, r0, r1, c0, c1);
  if (out.grid.valid_count() == 0) throw ValidationError("crop region contains no valid points");
  out.forces = h.forces;
  for (const auto& s : h.steps) {
    TensorField f;
    f.xx = detail::sub_values(g, s.xx, r0, r1, c0, c1);
    f.yy = detail::sub_values(g, s.yy, r0, r1, c0, c1);
    f.xy = detail::sub_values(g, s.xy, r0, r1, c0, c1);
    out.steps.push_back(std::move(f));
  }
  return out;
}

/// Masks out every point within `margin` points (Chebyshev distance) of a
/// masked point or of the grid border.
inline StrainHistory trim_margin(const StrainHistory& h, std::size_t margin) {
  if (margin == 0) return h;
  StrainHistory out = h;
  const auto& g = h.grid;
  const auto m = static_cast<long long>(margin);
  for (std::size_t r = 0; r < g.n_rows; ++r)
    for (std::size_t c = 0; c < g.n_cols; ++c) {
      if (!g.valid(r, c)) continue;
      bool near_edge = false;
      for (long long dr = -m; dr <= m && !near_edge; ++dr)
        for (long long dc = -m; dc <= m; ++dc) {
          const long long rr = static_cast<long long>(r) + dr, cc = static_cast<long long>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<long long>(g.n_rows) || cc >= static_cast<long long>(g.n_cols) ||
              !g.valid(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc))) {
            near_edge = true;
            break;
          }
        }
      if (near_edge) out.grid.mask[g.index(r, c)] = 0;
    }
  if (out.grid.valid_count() == 0) throw ValidationError("margin trim removed every point");
  return out;
}

/// Von Mises equivalent strain for plotting. The out-of-plane component is
/// estimated from incompressibility, eps_zz = -(eps_xx + eps_yy), which makes
/// the strain tensor deviatoric; the result is sqrt(2/3 e:e). Masked points
/// are reported as 0.
inline std::vector<double> von_mises_equivalent_strain(const FieldGrid& g, const TensorField& eps) {
  std::vector<double> out(g.size(), 0.0);
  for (std::size_t p = 0; p < g.size(); ++p) {
    if (!g.valid(p)) continue;
    const double xx = eps.xx[p], yy = eps.yy[p], xy = eps.xy[p];
    const double zz = -(xx + yy);
    out[p] = std::sqrt(2.0 / 3.0 * (xx * xx + yy * yy + zz * zz + 2.0 * xy * xy));
  }
  return out;
}

} // namespace vfmap
