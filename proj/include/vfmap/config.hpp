#pragma once

// Run configuration (JSON). Every constant has a default; unknown keys are
// rejected so that typos do not silently fall back to defaults.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vfmap/constitutive.hpp"
#include "vfmap/error.hpp"
#include "vfmap/field.hpp"
#include "vfmap/identification.hpp"
#include "vfmap/parameterisation.hpp"
#include "vfmap/synthetic.hpp"

namespace vfmap {

using nlohmann::json;

struct InputPaths {
  std::string strain_csv, load_csv;
  GridMeta meta;
};

struct ParamConfig {
  Designation designation = Designation::homogeneous;
  double initial = 0.0;
  BasisKind basis = BasisKind::bivariate;
  std::size_t mesh_nx = 0, mesh_ny = 0; ///< > 0 selects a zero-order mesh
  std::string known_csv;                ///< per-point values for a known parameter
};

struct ReferenceRegion {
  double lo = 0.0, hi = 0.0; ///< along the loading axis [mm]
};

struct RunConfig {
  std::optional<InputPaths> input;
  std::optional<OracleSpec> oracle;
  ElasticProps elastic;
  Axis axis = Axis::y;
  ParamConfig yield{Designation::heterogeneous, 320.0, BasisKind::bivariate, 0, 0, {}};
  ParamConfig hardening{Designation::homogeneous, 3000.0, BasisKind::bivariate, 0, 0, {}};
  Phase1Options phase1;
  Phase2Settings phase2;
  std::size_t margin_trim = 0;
  std::optional<ReferenceRegion> reference_region;
  std::string target_csv; ///< optional target yield map for reports
  std::string output = "vfmap_out";
  std::uint64_t seed = 1;
  unsigned workers = 1;
};

namespace detail {

class ConfigReader {
 public:
  explicit ConfigReader(std::string base) : base_(std::move(base)) {}

  [[noreturn]] static void fail(const std::string& key, const std::string& what) {
    throw ValidationError("config key '" + key + "': " + what);
  }

  static void only(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
    if (!j.is_object()) fail(where, "expected an object");
    std::set<std::string> ok;
    for (auto k : keys) ok.insert(k);
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!ok.count(it.key())) fail(where.empty() ? it.key() : where + "." + it.key(), "unknown key");
  }

  static std::string join(const std::string& where, const char* key) { return where.empty() ? key : where + "." + key; }

  template <class T>
  static void get(const json& j, const std::string& where, const char* key, T& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) fail(join(where, key), "expected a number");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0))
          fail(join(where, key), "expected a non-negative integer");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) fail(join(where, key), "expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) fail(join(where, key), "expected a string");
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      fail(join(where, key), e.what());
    }
  }

  std::string path(const json& j, const std::string& where, const char* key) const {
    std::string s;
    get(j, where, key, s);
    if (s.empty()) return s;
    std::filesystem::path p(s);
    if (p.is_relative() && !base_.empty()) p = std::filesystem::path(base_) / p;
    return p.lexically_normal().string();
  }

  static Axis axis(const json& j, const std::string& where, const char* key, Axis def) {
    std::string s = def == Axis::y ? "y" : "x";
    get(j, where, key, s);
    if (s == "x") return Axis::x;
    if (s == "y") return Axis::y;
    fail(join(where, key), "expected \"x\" or \"y\"");
  }

 private:
  std::string base_;
};

inline ParamConfig read_param(const ConfigReader& rd, const json& j, const std::string& where, ParamConfig p) {
  ConfigReader::only(j, where, {"designation", "initial", "basis", "mesh", "known_csv"});
  std::string d;
  ConfigReader::get(j, where, "designation", d);
  if (!d.empty()) {
    if (d == "known") p.designation = Designation::known;
    else if (d == "homogeneous") p.designation = Designation::homogeneous;
    else if (d == "heterogeneous") p.designation = Designation::heterogeneous;
    else ConfigReader::fail(where + ".designation", "expected known, homogeneous or heterogeneous");
  }
  ConfigReader::get(j, where, "initial", p.initial);
  std::string b;
  ConfigReader::get(j, where, "basis", b);
  if (!b.empty()) {
    if (b == "univariate") p.basis = BasisKind::univariate;
    else if (b == "bivariate") p.basis = BasisKind::bivariate;
    else ConfigReader::fail(where + ".basis", "expected univariate or bivariate");
  }
  if (j.contains("mesh")) {
    const auto& m = j.at("mesh");
    ConfigReader::only(m, where + ".mesh", {"n_x", "n_y"});
    ConfigReader::get(m, where + ".mesh", "n_x", p.mesh_nx);
    ConfigReader::get(m, where + ".mesh", "n_y", p.mesh_ny);
    if (p.mesh_nx == 0 || p.mesh_ny == 0) ConfigReader::fail(where + ".mesh", "n_x and n_y must be positive");
  }
  p.known_csv = rd.path(j, where, "known_csv");
  if (p.designation == Designation::known && p.known_csv.empty() && !(p.initial > 0.0))
    ConfigReader::fail(where, "a known parameter needs known_csv or a positive initial value");
  if (p.designation != Designation::known && !(p.initial > 0.0))
    ConfigReader::fail(where + ".initial", "must be positive");
  return p;
}

inline OracleSpec read_oracle(const json& j) {
  const std::string w = "oracle";
  ConfigReader::only(j, w,
                     {"n_rows", "n_cols", "pitch", "thickness", "loading_axis", "stress_levels", "forces", "yield",
                      "hardening", "noise_sigma", "max_stress"});
  OracleSpec o;
  ConfigReader::get(j, w, "n_rows", o.n_rows);
  ConfigReader::get(j, w, "n_cols", o.n_cols);
  ConfigReader::get(j, w, "pitch", o.pitch);
  ConfigReader::get(j, w, "thickness", o.thickness);
  o.loading_axis = ConfigReader::axis(j, w, "loading_axis", o.loading_axis);
  ConfigReader::get(j, w, "stress_levels", o.stress_levels);
  ConfigReader::get(j, w, "forces", o.forces);
  ConfigReader::get(j, w, "hardening", o.hardening);
  ConfigReader::get(j, w, "noise_sigma", o.noise_sigma);
  double cap = kMissing;
  ConfigReader::get(j, w, "max_stress", cap);
  o.max_stress = cap;
  if (j.contains("yield")) {
    const auto& y = j.at("yield");
    const std::string wy = "oracle.yield";
    ConfigReader::only(y, wy,
                       {"shape", "base", "weld", "weld_width", "haz_width", "deficit_amplitude", "deficit_sigma",
                        "center"});
    std::string shape;
    ConfigReader::get(y, wy, "shape", shape);
    if (shape == "uniform") o.yield.shape = ProfileShape::uniform;
    else if (shape == "weld" || shape.empty()) o.yield.shape = ProfileShape::weld;
    else if (shape == "gaussian_deficit") o.yield.shape = ProfileShape::gaussian_deficit;
    else ConfigReader::fail(wy + ".shape", "expected uniform, weld or gaussian_deficit");
    ConfigReader::get(y, wy, "base", o.yield.base);
    ConfigReader::get(y, wy, "weld", o.yield.weld);
    ConfigReader::get(y, wy, "weld_width", o.yield.weld_width);
    ConfigReader::get(y, wy, "haz_width", o.yield.haz_width);
    ConfigReader::get(y, wy, "deficit_amplitude", o.yield.deficit_amplitude);
    ConfigReader::get(y, wy, "deficit_sigma", o.yield.deficit_sigma);
    double c = kMissing;
    ConfigReader::get(y, wy, "center", c);
    o.yield.center = c;
  }
  if (o.n_rows < 3 || o.n_cols < 3) ConfigReader::fail("oracle", "n_rows and n_cols must be at least 3");
  if (!(o.pitch > 0.0)) ConfigReader::fail("oracle.pitch", "must be positive");
  if (!(o.thickness > 0.0)) ConfigReader::fail("oracle.thickness", "must be positive");
  if (!(o.noise_sigma >= 0.0)) ConfigReader::fail("oracle.noise_sigma", "must be non-negative");
  const auto levels = o.forces.empty() ? o.stress_levels : o.forces;
  const char* lk = o.forces.empty() ? "oracle.stress_levels" : "oracle.forces";
  if (levels.empty()) ConfigReader::fail(lk, "needs at least one step");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] > 0.0)) ConfigReader::fail(lk, "values must be positive");
    if (i > 0 && !(levels[i] > levels[i - 1])) ConfigReader::fail(lk, "values must increase");
  }
  return o;
}

} // namespace detail

/// Parses a configuration document. Relative paths are resolved against
/// `base_dir` (normally the config file's directory).
inline RunConfig parse_config(const json& j, const std::string& base_dir = "") {
  using detail::ConfigReader;
  const ConfigReader rd(base_dir);
  ConfigReader::only(j, "",
                     {"input", "oracle", "elastic", "loading_axis", "parameters", "metrics", "identification",
                      "optimizer", "margin_trim", "target_csv", "output", "seed", "workers"});
  RunConfig c;
  if (j.contains("input")) {
    const auto& in = j.at("input");
    ConfigReader::only(in, "input", {"strain_csv", "load_csv", "meta"});
    InputPaths ip;
    ip.strain_csv = rd.path(in, "input", "strain_csv");
    ip.load_csv = rd.path(in, "input", "load_csv");
    if (ip.strain_csv.empty()) ConfigReader::fail("input.strain_csv", "required");
    if (ip.load_csv.empty()) ConfigReader::fail("input.load_csv", "required");
    if (in.contains("meta")) {
      const auto& m = in.at("meta");
      ConfigReader::only(m, "input.meta", {"spacing_x", "spacing_y", "thickness", "origin_x", "origin_y", "n_rows", "n_cols"});
      ConfigReader::get(m, "input.meta", "spacing_x", ip.meta.spacing_x);
      ConfigReader::get(m, "input.meta", "spacing_y", ip.meta.spacing_y);
      ConfigReader::get(m, "input.meta", "thickness", ip.meta.thickness);
      if (m.contains("origin_x")) {
        double v = 0.0;
        ConfigReader::get(m, "input.meta", "origin_x", v);
        ip.meta.origin_x = v;
      }
      if (m.contains("origin_y")) {
        double v = 0.0;
        ConfigReader::get(m, "input.meta", "origin_y", v);
        ip.meta.origin_y = v;
      }
      ConfigReader::get(m, "input.meta", "n_rows", ip.meta.n_rows);
      ConfigReader::get(m, "input.meta", "n_cols", ip.meta.n_cols);
    }
    c.input = ip;
  }
  if (j.contains("oracle")) c.oracle = detail::read_oracle(j.at("oracle"));

  if (j.contains("elastic")) {
    const auto& e = j.at("elastic");
    ConfigReader::only(e, "elastic", {"young_modulus", "poisson_ratio"});
    ConfigReader::get(e, "elastic", "young_modulus", c.elastic.young_modulus);
    ConfigReader::get(e, "elastic", "poisson_ratio", c.elastic.poisson_ratio);
  }
  try {
    c.elastic.validate();
  } catch (const ValidationError& e) {
    ConfigReader::fail("elastic", e.what());
  }
  c.axis = ConfigReader::axis(j, "", "loading_axis", c.oracle ? c.oracle->loading_axis : Axis::y);
  if (c.oracle) {
    c.oracle->elastic = c.elastic;
    c.oracle->loading_axis = c.axis;
  }

  if (j.contains("parameters")) {
    const auto& p = j.at("parameters");
    ConfigReader::only(p, "parameters", {"yield", "hardening"});
    if (p.contains("yield")) c.yield = detail::read_param(rd, p.at("yield"), "parameters.yield", c.yield);
    if (p.contains("hardening"))
      c.hardening = detail::read_param(rd, p.at("hardening"), "parameters.hardening", c.hardening);
  }
  if (c.hardening.designation == Designation::heterogeneous)
    ConfigReader::fail("parameters.hardening.designation", "heterogeneous hardening is not supported");

  auto& ms = c.phase2.metrics;
  if (j.contains("metrics")) {
    const auto& m = j.at("metrics");
    ConfigReader::only(m, "metrics", {"lambda", "window_fractions", "slice_width_points", "smoothing_mm", "egi_stride"});
    ConfigReader::get(m, "metrics", "lambda", ms.lambda);
    ConfigReader::get(m, "metrics", "window_fractions", ms.window_fractions);
    ConfigReader::get(m, "metrics", "slice_width_points", ms.slice_width_points);
    ConfigReader::get(m, "metrics", "smoothing_mm", ms.smoothing_mm);
    ConfigReader::get(m, "metrics", "egi_stride", ms.egi_stride);
  }
  try {
    ms.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }

  if (j.contains("identification")) {
    const auto& id = j.at("identification");
    const std::string w = "identification";
    ConfigReader::only(id, w,
                       {"threshold", "perturbation_fraction", "multistart_iterations", "max_bases",
                        "phase1_max_iterations", "virtual_mesh", "reference_region"});
    ConfigReader::get(id, w, "threshold", c.phase2.threshold);
    ConfigReader::get(id, w, "perturbation_fraction", c.phase2.perturbation_fraction);
    ConfigReader::get(id, w, "multistart_iterations", c.phase2.multistart_iterations);
    ConfigReader::get(id, w, "max_bases", c.phase2.max_bases);
    ConfigReader::get(id, w, "phase1_max_iterations", c.phase1.lm.max_iterations);
    if (id.contains("virtual_mesh")) {
      const auto& vm = id.at("virtual_mesh");
      ConfigReader::only(vm, w + ".virtual_mesh", {"n_trans", "n_long"});
      ConfigReader::get(vm, w + ".virtual_mesh", "n_trans", c.phase1.mesh.n_trans);
      ConfigReader::get(vm, w + ".virtual_mesh", "n_long", c.phase1.mesh.n_long);
    }
    if (id.contains("reference_region")) {
      const auto& rr = id.at("reference_region");
      ConfigReader::only(rr, w + ".reference_region", {"lo", "hi"});
      ReferenceRegion r;
      ConfigReader::get(rr, w + ".reference_region", "lo", r.lo);
      ConfigReader::get(rr, w + ".reference_region", "hi", r.hi);
      if (!(r.lo < r.hi)) ConfigReader::fail(w + ".reference_region", "lo must be below hi");
      c.reference_region = r;
    }
    if (!(c.phase2.threshold >= 0.0 && c.phase2.threshold < 1.0))
      ConfigReader::fail(w + ".threshold", "must lie in [0, 1)");
    if (!(c.phase2.perturbation_fraction >= 0.0 && c.phase2.perturbation_fraction <= 1.0))
      ConfigReader::fail(w + ".perturbation_fraction", "must lie in [0, 1]");
    if (c.phase2.multistart_iterations < 0) ConfigReader::fail(w + ".multistart_iterations", "must be non-negative");
    if (c.phase1.lm.max_iterations < 0) ConfigReader::fail(w + ".phase1_max_iterations", "must be non-negative");
  }
  c.phase2.basis_kind = c.yield.basis;

  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    const std::string w = "optimizer";
    auto& s = c.phase2.search;
    ConfigReader::only(o, w,
                       {"initial_step", "expansion", "contraction", "min_step", "max_iterations", "stagnation_tol",
                        "stagnation_iterations", "parallel_poll"});
    ConfigReader::get(o, w, "initial_step", s.initial_step);
    ConfigReader::get(o, w, "expansion", s.expansion);
    ConfigReader::get(o, w, "contraction", s.contraction);
    ConfigReader::get(o, w, "min_step", s.min_step);
    ConfigReader::get(o, w, "max_iterations", s.max_iterations);
    ConfigReader::get(o, w, "stagnation_tol", s.stagnation_tol);
    ConfigReader::get(o, w, "stagnation_iterations", s.stagnation_iterations);
    ConfigReader::get(o, w, "parallel_poll", s.parallel_poll);
    try {
      s.validate();
    } catch (const ValidationError& e) {
      ConfigReader::fail(w, e.what());
    }
  }

  ConfigReader::get(j, "", "margin_trim", c.margin_trim);
  c.target_csv = rd.path(j, "", "target_csv");
  ConfigReader::get(j, "", "output", c.output);
  ConfigReader::get(j, "", "seed", c.seed);
  ConfigReader::get(j, "", "workers", c.workers);
  if (c.workers == 0) ConfigReader::fail("workers", "must be at least 1");
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ValidationError("config file " + path + ": " + e.what());
  }
  return parse_config(j, std::filesystem::absolute(path).parent_path().string());
}

/// Effective configuration with every default written out. The output
/// directory is left out so that runs into different directories produce
/// identical files.
inline json config_to_json(const RunConfig& c) {
  json j;
  if (c.input) {
    json m = {{"spacing_x", c.input->meta.spacing_x},
              {"spacing_y", c.input->meta.spacing_y},
              {"thickness", c.input->meta.thickness},
              {"n_rows", c.input->meta.n_rows},
              {"n_cols", c.input->meta.n_cols}};
    if (c.input->meta.origin_x) m["origin_x"] = *c.input->meta.origin_x;
    if (c.input->meta.origin_y) m["origin_y"] = *c.input->meta.origin_y;
    j["input"] = {{"strain_csv", c.input->strain_csv}, {"load_csv", c.input->load_csv}, {"meta", m}};
  }
  if (c.oracle) {
    const auto& o = *c.oracle;
    json y = {{"shape", o.yield.shape == ProfileShape::uniform ? "uniform"
                        : o.yield.shape == ProfileShape::weld  ? "weld"
                                                               : "gaussian_deficit"},
              {"base", o.yield.base},
              {"weld", o.yield.weld},
              {"weld_width", o.yield.weld_width},
              {"haz_width", o.yield.haz_width},
              {"deficit_amplitude", o.yield.deficit_amplitude},
              {"deficit_sigma", o.yield.deficit_sigma}};
    if (!is_missing(o.yield.center)) y["center"] = o.yield.center;
    json oj = {{"n_rows", o.n_rows},       {"n_cols", o.n_cols},         {"pitch", o.pitch},
               {"thickness", o.thickness}, {"hardening", o.hardening},   {"noise_sigma", o.noise_sigma},
               {"yield", y}};
    if (o.forces.empty()) oj["stress_levels"] = o.stress_levels;
    else oj["forces"] = o.forces;
    if (!is_missing(o.max_stress)) oj["max_stress"] = o.max_stress;
    j["oracle"] = oj;
  }
  j["elastic"] = {{"young_modulus", c.elastic.young_modulus}, {"poisson_ratio", c.elastic.poisson_ratio}};
  j["loading_axis"] = c.axis == Axis::y ? "y" : "x";
  auto param = [](const ParamConfig& p) {
    json r = {{"designation", p.designation == Designation::known         ? "known"
                              : p.designation == Designation::homogeneous ? "homogeneous"
                                                                          : "heterogeneous"},
              {"initial", p.initial},
              {"basis", p.basis == BasisKind::univariate ? "univariate" : "bivariate"}};
    if (p.mesh_nx > 0) r["mesh"] = {{"n_x", p.mesh_nx}, {"n_y", p.mesh_ny}};
    if (!p.known_csv.empty()) r["known_csv"] = p.known_csv;
    return r;
  };
  j["parameters"] = {{"yield", param(c.yield)}, {"hardening", param(c.hardening)}};
  const auto& ms = c.phase2.metrics;
  j["metrics"] = {{"lambda", ms.lambda},
                  {"window_fractions", ms.window_fractions},
                  {"slice_width_points", ms.slice_width_points},
                  {"smoothing_mm", ms.smoothing_mm},
                  {"egi_stride", ms.egi_stride}};
  json id = {{"threshold", c.phase2.threshold},
             {"perturbation_fraction", c.phase2.perturbation_fraction},
             {"multistart_iterations", c.phase2.multistart_iterations},
             {"max_bases", c.phase2.max_bases},
             {"phase1_max_iterations", c.phase1.lm.max_iterations},
             {"virtual_mesh", {{"n_trans", c.phase1.mesh.n_trans}, {"n_long", c.phase1.mesh.n_long}}}};
  if (c.reference_region) id["reference_region"] = {{"lo", c.reference_region->lo}, {"hi", c.reference_region->hi}};
  j["identification"] = id;
  const auto& s = c.phase2.search;
  j["optimizer"] = {{"initial_step", s.initial_step},
                    {"expansion", s.expansion},
                    {"contraction", s.contraction},
                    {"min_step", s.min_step},
                    {"max_iterations", s.max_iterations},
                    {"stagnation_tol", s.stagnation_tol},
                    {"stagnation_iterations", s.stagnation_iterations},
                    {"parallel_poll", s.parallel_poll}};
  j["margin_trim"] = c.margin_trim;
  if (!c.target_csv.empty()) j["target_csv"] = c.target_csv;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  return j;
}

/// Requested parameter layout for identification (initial values in place).
inline ParameterSpec requested_spec(const RunConfig& c, const FieldGrid& g) {
  auto slot = [&](const ParamConfig& p, const char* key) -> ParameterSlot {
    if (p.designation == Designation::known) {
      if (p.known_csv.empty()) return {Designation::known, Known{std::vector<double>(g.size(), p.initial)}};
      auto v = ingest_scalar_csv(g, p.known_csv);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (g.valid(i) && is_missing(v[i]))
          throw ValidationError(std::string("config key 'parameters.") + key + ".known_csv': no value for point (row " +
                                std::to_string(g.row_of(i)) + ", col " + std::to_string(g.col_of(i)) + ")");
      for (auto& x : v)
        if (is_missing(x)) x = 0.0;
      return {Designation::known, Known{std::move(v)}};
    }
    if (p.designation == Designation::homogeneous) return {Designation::homogeneous, Homogeneous{p.initial}};
    if (p.mesh_nx > 0) return {Designation::heterogeneous, ZeroOrderMesh::covering(g, p.mesh_nx, p.mesh_ny, p.initial)};
    return {Designation::heterogeneous, FloorPlusBases{p.initial, {}}};
  };
  return {slot(c.yield, "yield"), slot(c.hardening, "hardening")};
}

} // namespace vfmap
