// vfmap: command-line front end.
//
//   vfmap generate --config run.json --out dir
//   vfmap identify --config run.json --out dir
//   vfmap metrics  --config run.json --out dir
//   vfmap report   --config run.json --out dir

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "vfmap/config.hpp"
#include "vfmap/field.hpp"
#include "vfmap/identification.hpp"
#include "vfmap/report.hpp"
#include "vfmap/synthetic.hpp"

namespace fs = std::filesystem;
using namespace vfmap;

namespace {

constexpr int kExitOk = 0, kExitConfig = 2, kExitNoBasis = 3, kExitNumeric = 4;

struct Options {
  std::string config, out;
  std::optional<unsigned> workers;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

struct Dataset {
  StrainHistory strains;
  std::optional<ParameterField> target;
};

RunConfig resolve(const Options& o) {
  RunConfig c = load_config(o.config);
  if (o.workers) {
    if (*o.workers == 0) throw ValidationError("--workers must be at least 1");
    c.workers = *o.workers;
  }
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.output = o.out;
  return c;
}

std::string prepare_out(const RunConfig& c) {
  std::error_code ec;
  fs::create_directories(c.output, ec);
  if (ec || !fs::is_directory(c.output)) throw ValidationError("cannot create output directory: " + c.output);
  return c.output;
}

std::string at(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void write_effective(const RunConfig& c, const std::string& dir) {
  auto out = detail::open_output(at(dir, "effective_config.json"));
  out << config_to_json(c).dump(2) << '\n';
}

Dataset load_dataset(const RunConfig& c) {
  if (c.input && c.oracle) throw ValidationError("config must contain exactly one of 'input' and 'oracle'");
  if (!c.input && !c.oracle) throw ValidationError("config must contain one of 'input' and 'oracle'");
  Dataset d;
  if (c.oracle) {
    OracleSpec spec = *c.oracle;
    spec.seed = c.seed;
    auto o = generate_noisy_oracle(spec);
    d.strains = std::move(o.strains);
    d.target = std::move(o.target);
  } else {
    for (const auto& p : {c.input->strain_csv, c.input->load_csv})
      if (!fs::exists(p)) throw ValidationError("input file does not exist: " + p);
    d.strains = ingest_strain_csv(c.input->strain_csv, c.input->load_csv, c.input->meta);
  }
  if (!c.target_csv.empty()) {
    if (!fs::exists(c.target_csv)) throw ValidationError("config key 'target_csv': file does not exist: " + c.target_csv);
    auto y = ingest_scalar_csv(d.strains.grid, c.target_csv);
    ParameterField t = d.target.value_or(ParameterField{y, std::vector<double>(y.size(), kMissing)});
    t.yield_strength = y;
    d.target = t;
  }
  d.strains = trim_margin(d.strains, c.margin_trim);
  return d;
}

ProgressFn progress_fn(bool verbose) {
  if (!verbose) return {};
  return [](const std::string& s) { std::cerr << s << '\n'; };
}

std::vector<double> percent_error(const FieldGrid& g, const std::vector<double>& id, const std::vector<double>& tgt) {
  std::vector<double> e(g.size(), kMissing);
  for (std::size_t p = 0; p < g.size(); ++p) {
    if (!g.valid(p) || is_missing(id[p]) || is_missing(tgt[p])) continue;
    if (tgt[p] == 0.0) throw ValidationError("target map contains zero values");
    e[p] = 100.0 * std::abs(id[p] - tgt[p]) / std::abs(tgt[p]);
  }
  return e;
}

void write_metric_maps(const FieldGrid& g, const CombinedCost& cost, const MetricMaps& m, const std::string& dir,
                       const std::string& tag, bool plots) {
  for (std::size_t k = 0; k < m.egi.size(); ++k) {
    const auto side = std::to_string(cost.windows()[k].side);
    emit_scalar_csv(g, m.egi[k], "egi_rms", at(dir, "egi_w" + side + tag + ".csv"));
    if (plots) write_ppm(g, m.egi[k], at(dir, "egi_w" + side + tag + ".ppm"), true);
  }
  emit_scalar_csv(g, m.combined, "egi_combined", at(dir, "egi_combined" + tag + ".csv"));
  emit_slice_csv(cost.slices(), m.fre, "fre_rms", at(dir, "fre_slices" + tag + ".csv"));
  if (plots) write_ppm(g, m.combined, at(dir, "egi_combined" + tag + ".ppm"), true);
}

// ---------------------------------------------------------------------------

int cmd_generate(const Options& o) {
  const auto c = resolve(o);
  if (!c.oracle) throw ValidationError("generate requires an 'oracle' section");
  OracleSpec spec = *c.oracle;
  spec.seed = c.seed;
  const auto d = generate_noisy_oracle(spec);
  const auto dir = prepare_out(c);
  emit_strain_csv(d.strains, at(dir, "strains.csv"), at(dir, "loads.csv"));
  emit_scalar_csv(d.strains.grid, d.target.yield_strength, "yield_strength", at(dir, "target_yield.csv"));
  emit_scalar_csv(d.strains.grid, d.target.hardening_modulus, "hardening_modulus", at(dir, "target_hardening.csv"));
  write_effective(c, dir);
  write_manifest(dir, {}, {{"noise", detail::format_double(spec.noise_sigma)}, {"seed", std::to_string(c.seed)}});

  const double smax = d.strains.forces.back() / spec.section_area();
  double epmax = 0.0;
  for (std::size_t p = 0; p < d.strains.grid.size(); ++p)
    epmax = std::max(epmax, uniaxial_closed_form(smax, d.target.yield_strength[p], d.target.hardening_modulus[p],
                                                 spec.elastic)
                                .plastic);
  std::cout << "points: " << d.strains.grid.valid_count() << "\nsteps: " << d.strains.n_steps()
            << "\nmax plastic strain: " << detail::format_double(epmax) << "\nnoise: "
            << detail::format_double(spec.noise_sigma) << '\n';
  return kExitOk;
}

int cmd_identify(const Options& o) {
  const auto c = resolve(o);
  const auto data = load_dataset(c);
  const auto dir = prepare_out(c);
  const auto& g = data.strains.grid;
  const auto progress = progress_fn(o.verbose);
  Problem pb{&data.strains, c.elastic, c.axis, c.workers};
  const auto requested = requested_spec(c, g);

  Phase1Result p1;
  if (c.reference_region) {
    const auto region = crop_region(data.strains, c.reference_region->lo, c.reference_region->hi, c.axis);
    Problem sub{&region, c.elastic, c.axis, c.workers};
    ParameterSpec sub_spec = requested;
    for (Param p : {Param::yield_strength, Param::hardening_modulus})
      if (sub_spec.slot(p).designation == Designation::known)
        throw ValidationError("identification.reference_region cannot be combined with known parameters");
    p1 = phase1_identify(sub, sub_spec, c.phase1, progress);
    p1.reference = reconstruct_stress_history(data.strains, p1.spec.evaluate(g), c.elastic, c.workers);
  } else {
    p1 = phase1_identify(pb, requested, c.phase1, progress);
  }
  for (const auto& w : p1.warnings) std::cerr << "warning: " << w << '\n';

  std::vector<std::string> names;
  {
    DofBoundsPolicy b;
    for (const auto& l : pack_dofs(p1.spec, b).labels) names.push_back(l.name());
  }
  emit_lm_trace_csv(p1.trace, names, at(dir, "phase1_trace.csv"));

  const auto p2 = phase2_identify(pb, p1, requested, c.phase2, progress);
  const auto& st = p2.state;

  emit_scalar_csv(g, p2.parameters.yield_strength, "yield_strength", at(dir, "identified_yield.csv"));
  emit_scalar_csv(g, p2.parameters.hardening_modulus, "hardening_modulus", at(dir, "identified_hardening.csv"));
  write_ppm(g, p2.parameters.yield_strength, at(dir, "identified_yield.ppm"));
  {
    auto out = detail::open_output(at(dir, "scheme.json"));
    out << spec_to_json(st.spec).dump(2) << '\n';
  }
  emit_ledger_csv(st.ledger, at(dir, "ledger.csv"));
  emit_timing_csv(st.ledger, at(dir, "timing.csv"));
  const auto mask = reliability_mask(p2.stress);
  emit_scalar_csv(g, std::vector<double>(mask.begin(), mask.end()), "reliable", at(dir, "reliability_mask.csv"));

  CombinedCost cost = assemble_cost(pb, c.phase2.metrics, p1.reference);
  for (std::size_t i = 0; i < p2.maps.size(); ++i) {
    const bool final_maps = i + 1 == p2.maps.size();
    const std::string tag = final_maps ? "_final" : "_iter" + std::to_string(i + 1);
    write_metric_maps(g, cost, p2.maps[i], dir, tag, final_maps);
  }
  if (data.target) {
    const auto e = percent_error(g, p2.parameters.yield_strength, data.target->yield_strength);
    emit_scalar_csv(g, e, "yield_abs_pct_error", at(dir, "yield_error_pct.csv"));
  }
  write_effective(c, dir);
  write_manifest(dir, {"timing.csv"}, {{"seed", std::to_string(c.seed)}});

  std::cout << "phase 1:";
  for (std::size_t i = 0; i < names.size(); ++i) std::cout << ' ' << names[i] << '=' << detail::format_double(p1.trace.x[i]);
  std::cout << " (" << p1.trace.iterations << " iterations)\n";
  std::cout << "phase 2: " << st.accepted << " accepted, phi=" << detail::format_double(p2.cost.phi) << '\n';
  if (c.yield.designation == Designation::heterogeneous && c.yield.mesh_nx == 0 && st.accepted == 0) {
    std::cerr << "no basis function was accepted\n";
    return kExitNoBasis;
  }
  return kExitOk;
}

ParameterField params_from_config(const RunConfig& c, const FieldGrid& g) {
  ParameterSpec s = requested_spec(c, g);
  for (Param p : {Param::yield_strength, Param::hardening_modulus}) {
    auto& slot = s.slot(p);
    if (slot.designation == Designation::heterogeneous) {
      const auto& pc = p == Param::yield_strength ? c.yield : c.hardening;
      slot = {Designation::homogeneous, Homogeneous{pc.initial}};
    }
  }
  return s.evaluate(g);
}

int cmd_metrics(const Options& o) {
  const auto c = resolve(o);
  const auto data = load_dataset(c);
  const auto dir = prepare_out(c);
  const auto& g = data.strains.grid;
  Problem pb{&data.strains, c.elastic, c.axis, c.workers};
  const auto k = params_from_config(c, g);
  CombinedCost cost(pb, c.phase2.metrics);
  const auto stress = cost.stress(k, c.workers);
  const auto m = cost.maps(stress);
  write_metric_maps(g, cost, m, dir, "", true);

  const auto alpha = cost.alpha();
  json summary;
  EgiOptions eo{c.axis, c.phase2.metrics.egi_stride, c.workers};
  summary["egi_rms"] = json::array();
  for (const auto& w : cost.windows())
    summary["egi_rms"].push_back({{"side", w.side}, {"value", egi_weighted_rms(egi_field(stress, w, eo), alpha).overall}});
  summary["fre_rms"] = fre_weighted_rms(fre_field(stress, cost.slices()), alpha).overall;
  std::vector<VirtualField> vfs;
  for (const auto& s : cost.slices().slices) vfs.push_back(slice_virtual_field(g, s, c.axis));
  summary["sbvf_slice_cost"] = sbvf_cost(stress, vfs, c.axis);
  {
    auto out = detail::open_output(at(dir, "metrics_summary.json"));
    out << summary.dump(2) << '\n';
  }
  write_effective(c, dir);
  write_manifest(dir, {}, {{"seed", std::to_string(c.seed)}});
  std::cout << summary.dump(2) << '\n';
  return kExitOk;
}

int cmd_report(const Options& o) {
  const auto c = resolve(o);
  const auto data = load_dataset(c);
  const auto& g = data.strains.grid;
  const auto dir = c.output;
  const auto yield_path = at(dir, "identified_yield.csv"), h_path = at(dir, "identified_hardening.csv");
  for (const auto& p : {yield_path, h_path})
    if (!fs::exists(p)) throw ValidationError("identification output missing: " + p);
  ParameterField k{ingest_scalar_csv(g, yield_path), ingest_scalar_csv(g, h_path)};
  for (std::size_t p = 0; p < g.size(); ++p)
    if (g.valid(p) && (is_missing(k.yield_strength[p]) || is_missing(k.hardening_modulus[p])))
      throw ShapeError("identified maps do not cover the data grid (row " + std::to_string(g.row_of(p)) + ", col " +
                       std::to_string(g.col_of(p)) + ")");
  const auto rdir = at(dir, "report");
  std::error_code ec;
  fs::create_directories(rdir, ec);
  if (ec) throw ValidationError("cannot create report directory: " + rdir);

  Problem pb{&data.strains, c.elastic, c.axis, c.workers};
  CombinedCost cost(pb, c.phase2.metrics);
  const auto stress = cost.stress(k, c.workers);
  write_metric_maps(g, cost, cost.maps(stress), rdir, "", true);
  if (data.target) {
    auto check = [&](const std::vector<double>& t) {
      for (std::size_t p = 0; p < g.size(); ++p)
        if (g.valid(p) && is_missing(t[p]))
          throw ShapeError("target map does not cover the data grid (row " + std::to_string(g.row_of(p)) + ", col " +
                           std::to_string(g.col_of(p)) + ")");
    };
    check(data.target->yield_strength);
    const auto ey = percent_error(g, k.yield_strength, data.target->yield_strength);
    emit_scalar_csv(g, ey, "yield_abs_pct_error", at(rdir, "yield_error_pct.csv"));
    write_ppm(g, ey, at(rdir, "yield_error_pct.ppm"), true);
    bool have_h = true;
    for (std::size_t p = 0; p < g.size(); ++p)
      if (g.valid(p) && is_missing(data.target->hardening_modulus[p])) have_h = false;
    if (have_h) {
      const auto eh = percent_error(g, k.hardening_modulus, data.target->hardening_modulus);
      emit_scalar_csv(g, eh, "hardening_abs_pct_error", at(rdir, "hardening_error_pct.csv"));
      write_ppm(g, eh, at(rdir, "hardening_error_pct.ppm"), true);
    }
    double emax = 0.0, esum = 0.0;
    std::size_t n = 0;
    for (double v : ey)
      if (!is_missing(v)) {
        emax = std::max(emax, v);
        esum += v;
        ++n;
      }
    std::cout << "yield error: max " << detail::format_double(emax) << " %, mean "
              << detail::format_double(n ? esum / static_cast<double>(n) : 0.0) << " %\n";
  }
  write_manifest(rdir, {}, {{"seed", std::to_string(c.seed)}});
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heterogeneous elastoplastic parameter identification from full-field strain data"};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "JSON run configuration")->required();
    sub->add_option("--out", opt.out, "output directory (overrides the config)");
    sub->add_option("--workers", opt.workers, "worker threads for cost evaluation");
    sub->add_option("--seed", opt.seed, "noise seed (overrides the config)");
    sub->add_flag("--verbose", opt.verbose, "progress messages on stderr");
  };
  auto* gen = app.add_subcommand("generate", "write a synthetic stacked-slice dataset");
  auto* ident = app.add_subcommand("identify", "run the homogeneous and heterogeneous identification");
  auto* met = app.add_subcommand("metrics", "equilibrium metrics for the configured parameters");
  auto* rep = app.add_subcommand("report", "error and metric maps for identified parameters");
  for (auto* s : {gen, ident, met, rep}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  try {
    if (gen->parsed()) return cmd_generate(opt);
    if (ident->parsed()) return cmd_identify(opt);
    if (met->parsed()) return cmd_metrics(opt);
    if (rep->parsed()) return cmd_report(opt);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitOk;
}
