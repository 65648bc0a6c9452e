#pragma once

// Output files: scalar maps, ledgers, traces, PPM plots and the hashed run
// manifest. Linking requires OpenSSL's libcrypto (SHA-256).

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "vfmap/error.hpp"
#include "vfmap/field.hpp"
#include "vfmap/identification.hpp"
#include "vfmap/optimizer.hpp"
#include "vfmap/parameterisation.hpp"

namespace vfmap {

/// Per-slice table `slice,first_line,line_count,<name>`.
inline void emit_slice_csv(const SliceSet& s, const std::vector<double>& values, const std::string& name,
                           const std::string& path) {
  auto out = detail::open_output(path);
  out << "slice,first_line,line_count," << name << '\n';
  for (const auto& sl : s.slices)
    out << sl.index << ',' << sl.first_line << ',' << sl.line_count << ',' << detail::format_double(values[sl.index])
        << '\n';
}

/// Ledger without wall time (deterministic across runs).
inline void emit_ledger_csv(const std::vector<LedgerRow>& rows, const std::string& path) {
  auto out = detail::open_output(path);
  out << "iteration,stage,bases,phi,phi_egi,phi_fre,hardening_modulus,yield_floor,evaluations\n";
  for (const auto& r : rows)
    out << r.iteration << ',' << r.stage << ',' << r.bases << ',' << detail::format_double(r.phi) << ','
        << detail::format_double(r.phi_egi) << ',' << detail::format_double(r.phi_fre) << ','
        << (is_missing(r.hardening) ? std::string() : detail::format_double(r.hardening)) << ','
        << (is_missing(r.floor) ? std::string() : detail::format_double(r.floor)) << ',' << r.evaluations << '\n';
}

inline void emit_timing_csv(const std::vector<LedgerRow>& rows, const std::string& path) {
  auto out = detail::open_output(path);
  out << "iteration,stage,wall_time_s\n";
  for (const auto& r : rows) out << r.iteration << ',' << r.stage << ',' << detail::format_double(r.seconds) << '\n';
}

inline void emit_lm_trace_csv(const LmResult& r, const std::vector<std::string>& names, const std::string& path) {
  auto out = detail::open_output(path);
  out << "iteration,cost,damping,rejected";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (const auto& it : r.trace) {
    out << it.iteration << ',' << detail::format_double(it.cost) << ',' << detail::format_double(it.damping) << ','
        << it.rejected;
    for (double v : it.x) out << ',' << detail::format_double(v);
    out << '\n';
  }
}

inline void emit_pattern_trace_csv(const PatternSearchResult& r, const std::string& path) {
  auto out = detail::open_output(path);
  out << "iteration,evaluations,step_scale,cost\n";
  for (const auto& it : r.trace)
    out << it.iteration << ',' << it.evaluations << ',' << detail::format_double(it.step) << ','
        << detail::format_double(it.cost) << '\n';
}

// ---------------------------------------------------------------------------
// Scheme description

inline nlohmann::json scheme_to_json(const ParameterSlot& slot) {
  nlohmann::json j;
  j["designation"] = slot.designation == Designation::known         ? "known"
                     : slot.designation == Designation::homogeneous ? "homogeneous"
                                                                    : "heterogeneous";
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Known>) {
          j["scheme"] = "known";
        } else if constexpr (std::is_same_v<S, Homogeneous>) {
          j["scheme"] = "homogeneous";
          j["value"] = s.value;
        } else if constexpr (std::is_same_v<S, FloorPlusBases>) {
          j["scheme"] = "floor_plus_bases";
          j["floor"] = s.floor;
          j["bases"] = nlohmann::json::array();
          for (const auto& b : s.bases)
            j["bases"].push_back({{"kind", b.kind == BasisKind::univariate ? "univariate" : "bivariate"},
                                  {"center_x", b.center_x},
                                  {"center_y", b.center_y},
                                  {"weight", b.weight},
                                  {"var_1", b.var_1},
                                  {"var_2", b.var_2},
                                  {"angle", b.angle}});
        } else {
          j["scheme"] = "zero_order_mesh";
          j["n_x"] = s.n_x;
          j["n_y"] = s.n_y;
          j["bbox"] = {s.x_min, s.x_max, s.y_min, s.y_max};
          j["values"] = s.values;
        }
      },
      slot.scheme);
  return j;
}

inline nlohmann::json spec_to_json(const ParameterSpec& spec) {
  return {{"yield_strength", scheme_to_json(spec.yield)}, {"hardening_modulus", scheme_to_json(spec.hardening)}};
}

// ---------------------------------------------------------------------------
// Plots

struct Rgb {
  std::uint8_t r, g, b;
};

/// Blue-to-red ramp through white for t in [0, 1].
inline Rgb colour_ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto lerp = [](double a, double b, double u) { return static_cast<std::uint8_t>(std::lround(a + (b - a) * u)); };
  if (t < 0.5) {
    const double u = t / 0.5;
    return {lerp(40, 255, u), lerp(70, 255, u), lerp(200, 255, u)};
  }
  const double u = (t - 0.5) / 0.5;
  return {lerp(255, 200, u), lerp(255, 40, u), lerp(255, 40, u)};
}

/// Binary PPM of a scalar map, one `scale` x `scale` block per grid point,
/// row 0 at the bottom. Missing and masked points are grey. With `log_scale`
/// only positive values are coloured and the ramp spans log10 of the range.
inline void write_ppm(const FieldGrid& g, const std::vector<double>& values, const std::string& path,
                      bool log_scale = false, std::size_t scale = 4) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  auto tr = [&](double v) { return log_scale ? std::log10(v) : v; };
  for (std::size_t p = 0; p < g.size(); ++p) {
    const double v = values[p];
    if (!g.valid(p) || is_missing(v) || (log_scale && !(v > 0.0))) continue;
    lo = std::min(lo, tr(v));
    hi = std::max(hi, tr(v));
  }
  auto out = detail::open_output(path);
  const std::size_t W = g.n_cols * scale, H = g.n_rows * scale;
  out << "P6\n" << W << ' ' << H << "\n255\n";
  std::vector<char> row(W * 3);
  for (std::size_t yy = 0; yy < H; ++yy) {
    const std::size_t r = g.n_rows - 1 - yy / scale;
    for (std::size_t xx = 0; xx < W; ++xx) {
      const std::size_t p = g.index(r, xx / scale);
      const double v = values[p];
      Rgb c{160, 160, 160};
      if (g.valid(p) && !is_missing(v) && !(log_scale && !(v > 0.0)))
        c = colour_ramp(hi > lo ? (tr(v) - lo) / (hi - lo) : 0.5);
      row[3 * xx] = static_cast<char>(c.r);
      row[3 * xx + 1] = static_cast<char>(c.g);
      row[3 * xx + 2] = static_cast<char>(c.b);
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
}

// ---------------------------------------------------------------------------
// Manifest

inline std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read file for hashing: " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw NumericError("SHA-256 initialisation failed");
  }
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

/// Writes `manifest.csv` listing every regular file under `dir` (sorted
/// relative paths) except the manifest itself and `excluded` names, with a
/// SHA-256 hash. Extra key/value notes go first as comment lines.
inline void write_manifest(const std::string& dir, const std::vector<std::string>& excluded,
                           const std::map<std::string, std::string>& notes = {}) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel == "manifest.csv" || std::find(excluded.begin(), excluded.end(), rel) != excluded.end()) continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  auto out = detail::open_output((fs::path(dir) / "manifest.csv").string());
  for (const auto& [k, v] : notes) out << "# " << k << '=' << v << '\n';
  out << "file,sha256\n";
  for (const auto& f : files) out << f << ',' << sha256_file((fs::path(dir) / f).string()) << '\n';
}

} // namespace vfmap
