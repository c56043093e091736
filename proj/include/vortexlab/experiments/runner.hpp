#pragma once

// Sweep execution: one cell per swept value, each writing its own CSV and SVG
// files, followed by a serial pass that writes summary.csv, config.resolved
// and manifest.json into the output directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"
#include "vortexlab/error.hpp"
#include "vortexlab/euler3d_spectral.hpp"
#include "vortexlab/experiments/config.hpp"
#include "vortexlab/experiments/csv.hpp"
#include "vortexlab/experiments/format.hpp"
#include "vortexlab/experiments/svg.hpp"
#include "vortexlab/intermediate_flow.hpp"
#include "vortexlab/parallel.hpp"
#include "vortexlab/rate_fit.hpp"
#include "vortexlab/smallscale_linear.hpp"

namespace vortexlab::experiments {

struct Metric {
  std::string name;
  double value = 0.0;
  std::string bound;    // human-readable acceptance bound, empty if reported only
  bool checked = false;
  bool pass = true;
};

struct RunRecord {
  std::string name;
  bool acceptance = true;  // failures make the sweep fail
  bool ok = false;         // finished without an error
  bool passed = false;     // ok and every checked metric passed
  std::string error;
  std::vector<std::string> outputs;
  double wall_seconds = 0.0;
  std::vector<Metric> metrics;

  const Metric* metric(std::string_view n) const {
    for (const auto& m : metrics)
      if (m.name == n) return &m;
    return nullptr;
  }
};

struct RunManifest {
  ExperimentConfig config;
  std::string config_hash;
  std::string code_hash;
  std::vector<RunRecord> runs;
  std::string summary_path;
  std::string manifest_path;
  std::string config_path;
  double wall_seconds = 0.0;

  bool success() const {
    return std::all_of(runs.begin(), runs.end(),
                       [](const RunRecord& r) { return !r.acceptance || r.passed; });
  }
  const RunRecord* run(std::string_view n) const {
    for (const auto& r : runs)
      if (r.name == n) return &r;
    return nullptr;
  }
};

namespace detail {

inline void report(RunRecord& r, std::string name, double value) {
  r.metrics.push_back({std::move(name), value, "", false, true});
}

inline void check_le(RunRecord& r, std::string name, double value, double bound) {
  r.metrics.push_back({std::move(name), value, "<= " + format_double(bound), true, value <= bound});
}

inline void check_ge(RunRecord& r, std::string name, double value, double bound) {
  r.metrics.push_back({std::move(name), value, ">= " + format_double(bound), true, value >= bound});
}

inline void check_near(RunRecord& r, std::string name, double value, double target, double tol) {
  r.metrics.push_back({std::move(name), value,
                       format_double(target) + " +- " + format_double(tol), true,
                       std::abs(value - target) <= tol});
}

/// Cell-name token for a swept value: 2 -> "2", 0.5 -> "0.5".
inline std::string token(double v) { return format_double(v); }

inline std::string path_in(const ExperimentConfig& cfg, const std::string& file) {
  return (std::filesystem::path(cfg.output_dir) / file).string();
}

struct TimePlan {
  double horizon = 0.0;
  double dt = 0.0;
  int steps = 0;
};

inline IntermediateState make_state(const ExperimentConfig& cfg, double M, double h, int threads) {
  QuadrupoleSpec spec;
  spec.spacing = h;
  FlowSettings fs;
  fs.backend = cfg.backend;
  fs.symmetry = cfg.symmetry;
  fs.domain = TorusDomain2D{cfg.backend == Backend::grid ? cfg.grid_domain_half_length
                                                          : cfg.domain_half_length};
  fs.grid_resolution = cfg.grid_resolution;
  fs.cfl = cfg.cfl;
  fs.kernel.image_radius = cfg.image_radius;
  fs.kernel.threads = threads;
  fs.kernel.deterministic = cfg.deterministic_sum;
  return init_quadrupole(spec, StrainParams{M}, fs);
}

inline TimePlan plan(const ExperimentConfig& cfg, const IntermediateState& s, double horizon) {
  TimePlan p;
  p.horizon = horizon;
  if (cfg.dt_rule == DtRule::automatic) {
    p.dt = recommended_dt(s, horizon);
    p.steps = static_cast<int>(std::lround(horizon / p.dt));
  } else {
    p.steps = std::max(1, static_cast<int>(std::ceil(horizon / cfg.dt_value - 1e-9)));
    p.dt = horizon / p.steps;
  }
  return p;
}

// One row of the intermediate diagnostics.
struct IntermediateRow {
  double t, l1, l2, linf, det, max_a2, max_a3, probe;
};

struct IntermediateTrace {
  TimePlan plan;
  double delta = 0.0;
  std::vector<IntermediateRow> rows;
  double symmetry = 0.0;  // max mirror mismatch, full mode only
  FlowSeries flow;
  IntermediateState final_state;
};

/// Evolves the quadrupole to the horizon, sampling every step. With
/// `diagnostics` false only the flow series is kept.
inline IntermediateTrace simulate_intermediate(const ExperimentConfig& cfg, double M, double h,
                                               int threads, bool diagnostics) {
  IntermediateTrace tr;
  auto s = make_state(cfg, M, h, threads);
  tr.plan = plan(cfg, s, cfg.horizon(M));
  tr.delta = probe_radius(M, cfg.probe_c, cfg.probe_gamma);
  const Vec2 label = s.spec.center;
  if (diagnostics) seed_jacobian_tracers(s, label, cfg.fd_step);
  const double inf = std::numeric_limits<double>::infinity();
  tr.flow = evolve(s, tr.plan.dt, tr.plan.steps, [&](const IntermediateState& st) {
    if (!diagnostics) return;
    const auto b = support_bounds(st);
    tr.rows.push_back({st.t, lp_norm(st, 1.0), lp_norm(st, 2.0), lp_norm(st, inf),
                       flow_map_jacobian(st, label, cfg.fd_step), b.max_A2, b.max_A3,
                       gradient_probe(st, tr.delta, cfg.probe_samples)});
    tr.symmetry = std::max(tr.symmetry, symmetry_mismatch(st));
  });
  tr.final_state = std::move(s);
  return tr;
}

inline std::vector<double> column(const std::vector<IntermediateRow>& rows,
                                  double IntermediateRow::*f) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.*f);
  return out;
}

/// Fits of the intermediate series shared by the intermediate and rates runs.
struct IntermediateFits {
  RateFit probe;
  RateFit max_a2;
};

inline IntermediateFits fit_intermediate(const IntermediateTrace& tr) {
  const auto t = column(tr.rows, &IntermediateRow::t);
  return {fit_exponential(t, column(tr.rows, &IntermediateRow::probe)),
          fit_exponential(t, column(tr.rows, &IntermediateRow::max_a2))};
}

inline RunRecord intermediate_cell(const ExperimentConfig& cfg, double M, double h,
                                   const std::string& name, int threads) {
  RunRecord r;
  r.name = name;
  auto tr = simulate_intermediate(cfg, M, h, threads, true);

  const std::string csv = path_in(cfg, name + ".csv");
  CsvWriter w(csv, schemas::intermediate());
  for (const auto& x : tr.rows)
    w.row({x.t, x.l1, x.l2, x.linf, x.det, x.max_a2, x.max_a3, x.probe});
  w.close();
  r.outputs.push_back(csv);

  const auto& first = tr.rows.front();
  double l1 = 0.0, l2 = 0.0, linf = 0.0;
  for (const auto& x : tr.rows) {
    l1 = std::max(l1, std::abs(x.l1 / first.l1 - 1.0));
    l2 = std::max(l2, std::abs(x.l2 / first.l2 / std::exp(0.5 * M * x.t) - 1.0));
    linf = std::max(linf, std::abs(x.linf / first.linf / std::exp(M * x.t) - 1.0));
  }
  report(r, "horizon", tr.plan.horizon);
  report(r, "dt", tr.plan.dt);
  report(r, "steps", tr.plan.steps);
  check_le(r, "l1_drift", l1, 1e-12);
  check_le(r, "l2_law_error", l2, 1e-12);
  check_le(r, "linf_law_error", linf, 1e-12);

  // The grid remap is only meaningful while the stretched support stays
  // resolved by the sampling grid; beyond M = 4 it is skipped.
  if (M <= 4.0) {
    const auto s0 = make_state(cfg, M, h, threads);
    const TorusDomain2D box{2.5};
    const double g0 = grid_lp_norm(s0, 2.0, box, cfg.grid_resolution);
    const double g1 = grid_lp_norm(tr.final_state, 2.0, box, cfg.grid_resolution);
    check_le(r, "grid_l2_error", std::abs(g1 / g0 / std::exp(0.5 * M * tr.plan.horizon) - 1.0), 0.02);
  }

  const double det_target = std::exp(-M * tr.plan.horizon);
  check_le(r, "det_error", std::abs(tr.rows.back().det / det_target - 1.0), 0.01);
  if (cfg.symmetry == SymmetryMode::full) check_le(r, "symmetry_mismatch", tr.symmetry, 1e-6);

  const auto fits = fit_intermediate(tr);
  if (M > 0.0) {
    check_le(r, "probe_rate", fits.probe.rate, -0.1 * M);
  } else {
    report(r, "probe_rate", fits.probe.rate);
  }
  report(r, "probe_r2", fits.probe.r_squared);
  report(r, "max_a2_rate", fits.max_a2.rate);
  report(r, "log_lipschitz_ratio", log_lipschitz_ratio(tr.final_state, 200, cfg.seed));

  const auto t = column(tr.rows, &IntermediateRow::t);
  PlotSpec p;
  p.title = "gradient probe, M = " + token(M);
  p.x_label = "t";
  p.y_label = "max |grad u| on B(0, delta)";
  p.log_y = true;
  p.series.push_back({"probe", t, column(tr.rows, &IntermediateRow::probe), true, "#1f77b4"});
  p.series.push_back(fitted_curve("fit", t.front(), t.back(), fits.probe.rate,
                                  fits.probe.intercept, false));
  p.notes.push_back("rate = " + format_double(fits.probe.rate) +
                    ", rate / M = " + format_double(M > 0.0 ? fits.probe.rate / M : 0.0));
  const std::string svg = path_in(cfg, name + "_probe.svg");
  write_svg(svg, p);
  r.outputs.push_back(svg);
  return r;
}

// Small-scale vorticity along characteristics through one intermediate run.
struct SmallScaleTrace {
  double ell = 0.0;
  double delta = 0.0;
  std::vector<Characteristic3D> inside;
  std::vector<Characteristic3D> outside;
  std::vector<RateFit> omega2_fits;
  double worst_rate = -std::numeric_limits<double>::infinity();
  double best_rate = std::numeric_limits<double>::infinity();
  double late_worst_rate = -std::numeric_limits<double>::infinity();
  double max_omega1 = 0.0;
  double max_omega3 = 0.0;
  ConfinementReport confinement;
};

inline SmallScaleTrace simulate_smallscale(const ExperimentConfig& cfg, double M,
                                           const FlowSeries& flow, int threads) {
  SmallScaleTrace tr;
  tr.delta = probe_radius(M, cfg.probe_c, cfg.probe_gamma);
  tr.ell = cfg.ell_ratio * default_ell(M, tr.delta);
  check_confinement_radii(tr.ell, tr.delta, M);
  SmallScaleSpec spec;
  spec.epsilon = cfg.smallscale_epsilon;
  spec.ell = tr.ell;
  spec.validate();

  SmallScaleOptions opts;
  opts.substeps = cfg.substeps;
  opts.threads = threads;
  const auto seeds = ball_seeds(tr.ell, cfg.smallscale_seeds);
  std::vector<Vec3> w0;
  w0.reserve(seeds.size());
  for (const auto& a : seeds) w0.push_back(spec.initial_vorticity(a));
  tr.inside = evolve_small_vortex(seeds, w0, flow, opts);
  const auto out = outside_seeds(tr.ell, std::max(cfg.smallscale_seeds / 4, 16));
  tr.outside = evolve_small_vortex(out, std::vector<Vec3>(out.size()), flow, opts);
  tr.confinement = summarize_confinement(tr.inside, tr.outside, tr.delta);

  const double t_mid = 0.5 * (flow.t_begin() + flow.t_end());
  for (const auto& c : tr.inside) {
    const auto fit = decay_rate_fit(omega_component_series(c, 2));
    tr.omega2_fits.push_back(fit);
    tr.worst_rate = std::max(tr.worst_rate, fit.rate);
    tr.best_rate = std::min(tr.best_rate, fit.rate);
    tr.late_worst_rate =
        std::max(tr.late_worst_rate, decay_rate_fit(omega_component_series(c, 2, t_mid)).rate);
    for (const auto& w : c.omega) {
      tr.max_omega1 = std::max(tr.max_omega1, std::abs(w.x1));
      tr.max_omega3 = std::max(tr.max_omega3, std::abs(w.x3));
    }
  }
  return tr;
}

/// Decay rate of omega_2 with the intermediate ensemble removed (pure strain).
inline double strain_only_rate(const ExperimentConfig& cfg, double M, const TimePlan& p,
                               double ell, int seeds) {
  QuadrupoleSpec spec;
  spec.amplitude = 0.0;
  auto s = init_quadrupole(spec, StrainParams{M});
  const auto flow = evolve(s, p.dt, p.steps);
  SmallScaleSpec ss;
  ss.epsilon = cfg.smallscale_epsilon;
  ss.ell = ell;
  SmallScaleOptions opts;
  opts.substeps = cfg.substeps;
  const auto a = ball_seeds(ell, seeds);
  std::vector<Vec3> w0;
  for (const auto& x : a) w0.push_back(ss.initial_vorticity(x));
  double worst = 0.0;
  for (const auto& c : evolve_small_vortex(a, w0, flow, opts)) {
    const double rate = decay_rate_fit(omega_component_series(c, 2)).rate;
    worst = std::max(worst, std::abs(rate + M));
  }
  return worst;
}

inline RunRecord smallscale_cell(const ExperimentConfig& cfg, double M, double h,
                                 const std::string& name, int threads) {
  RunRecord r;
  r.name = name;
  const auto flow_run = simulate_intermediate(cfg, M, h, threads, false);
  const auto tr = simulate_smallscale(cfg, M, flow_run.flow, threads);
  const double eps = cfg.smallscale_epsilon;

  report(r, "horizon", flow_run.plan.horizon);
  report(r, "ell", tr.ell);
  report(r, "delta", tr.delta);
  report(r, "seeds", static_cast<double>(tr.inside.size()));
  check_le(r, "omega2_rate_worst", tr.worst_rate, -0.8 * M);
  report(r, "omega2_rate_best", tr.best_rate);
  report(r, "omega2_rate_worst_over_M", M > 0.0 ? tr.worst_rate / M : 0.0);
  report(r, "omega2_rate_worst_late", tr.late_worst_rate);
  check_le(r, "omega1_max_over_eps", tr.max_omega1 / eps, 1e-14);
  report(r, "C3", M > 0.0 ? tr.max_omega3 * M / eps : tr.max_omega3 / eps);
  check_le(r, "strain_only_rate_error", strain_only_rate(cfg, M, flow_run.plan, tr.ell, 16), 1e-6);
  check_le(r, "inside_violations", static_cast<double>(tr.confinement.inside_violations), 0.0);
  report(r, "inside_max_radius_over_delta", tr.confinement.inside_max_ratio);
  check_le(r, "axis_violations", static_cast<double>(tr.confinement.axis_violations), 0.0);
  report(r, "outside_min_radius", tr.confinement.outside_min_radius);

  const auto& times = tr.inside.front().t;
  const std::string csv = path_in(cfg, name + ".csv");
  CsvWriter w(csv, schemas::smallscale());
  std::vector<double> hi2, lo2;
  for (std::size_t k = 0; k < times.size(); ++k) {
    double m1 = 0.0, m2 = 0.0, n2 = std::numeric_limits<double>::infinity(), m3 = 0.0, rad = 0.0;
    for (const auto& c : tr.inside) {
      m1 = std::max(m1, std::abs(c.omega[k].x1));
      m2 = std::max(m2, std::abs(c.omega[k].x2));
      n2 = std::min(n2, std::abs(c.omega[k].x2));
      m3 = std::max(m3, std::abs(c.omega[k].x3));
      rad = std::max(rad, norm(c.path[k]) / tr.delta);
    }
    w.row({times[k], m1, m2, n2, m3, rad});
    hi2.push_back(m2);
    lo2.push_back(n2);
  }
  w.close();
  r.outputs.push_back(csv);

  const std::string traj = path_in(cfg, name + "_seeds.csv");
  CsvWriter tw(traj, schemas::trajectories());
  const std::size_t keep = cfg.trajectory_seeds < 0
                               ? tr.inside.size()
                               : std::min(tr.inside.size(),
                                          static_cast<std::size_t>(cfg.trajectory_seeds));
  for (std::size_t i = 0; i < keep; ++i) {
    const auto& c = tr.inside[i];
    for (std::size_t k = 0; k < c.t.size(); ++k)
      tw.row({i, c.t[k], c.path[k].x1, c.path[k].x2, c.path[k].x3, c.omega[k].x1, c.omega[k].x2,
              c.omega[k].x3});
  }
  tw.close();
  r.outputs.push_back(traj);

  PlotSpec p;
  p.title = "small-scale omega_2 along inside seeds, M = " + token(M);
  p.x_label = "t";
  p.y_label = "|omega_2|";
  p.log_y = true;
  p.series.push_back({"max over seeds", times, hi2, true, "#1f77b4"});
  p.series.push_back({"min over seeds", times, lo2, true, "#2ca02c"});
  p.series.push_back(fitted_curve("eps exp(-M t)", times.front(), times.back(), -M,
                                  std::log(hi2.front()), false));
  p.notes.push_back("worst fitted rate = " + format_double(tr.worst_rate) +
                    ", threshold -0.8 M = " + format_double(-0.8 * M));
  const std::string svg = path_in(cfg, name + "_omega2.svg");
  write_svg(svg, p);
  r.outputs.push_back(svg);
  return r;
}

inline RunRecord principles_cell(const ExperimentConfig& cfg, int n, const std::string& name,
                                 int threads) {
  RunRecord r;
  r.name = name;
  const auto base0 = taylor_green(n, std::numbers::pi);
  const auto pert0 = default_perturbation(n, std::numbers::pi);
  ScalingOptions opts;
  opts.dt = cfg.principles_dt;
  opts.threads = threads;
  const double s = cfg.sobolev_s;
  const auto res =
      epsilon_scaling_experiment(base0, pert0, cfg.epsilon_values, cfg.principles_horizon, s, opts);
  const auto zero = run_epsilon(base0, pert0, 0.0, cfg.principles_horizon, s, opts);

  report(r, "horizon", res.horizon);
  report(r, "dt", res.dt);
  report(r, "steps", res.steps);
  if (res.exact_zero) {
    check_le(r, "perturbation_norm", 0.0, 0.0);
  } else {
    check_near(r, "slope_vorticity_inf", res.vorticity_inf.rate, 2.0, 0.1);
    check_near(r, "slope_modified_hs", res.modified_hs.rate, 1.0, 0.1);
    report(r, "slope_vorticity_hs", res.vorticity_hs.rate);
    report(r, "slope_linear_l2", res.linear_l2.rate);
    report(r, "slope_perturbation_l2", res.perturbation_l2.rate);
  }
  check_le(r, "modified_gap_at_zero_epsilon", zero.max_gaps.modified_hs, 1e-12);
  double tail = 0.0;
  for (const auto& run : res.runs) tail = std::max(tail, run.max_tail_fraction);
  report(r, "max_tail_fraction", tail);

  const std::string csv = path_in(cfg, name + ".csv");
  CsvWriter w(csv, schemas::principles());
  for (const auto& run : res.runs)
    for (const auto& x : run.rows)
      w.row({x.epsilon, x.t, x.gaps.vorticity_inf, x.gaps.vorticity_hs, x.gaps.modified_hs,
             x.energy, x.base_hs, x.perturbed_hs, x.gaps.linear_l2, x.gaps.perturbation_l2});
  w.close();
  r.outputs.push_back(csv);

  if (!res.exact_zero) {
    std::vector<double> e, g1, g2;
    for (const auto& run : res.runs) {
      e.push_back(run.epsilon);
      g1.push_back(run.max_gaps.vorticity_inf);
      g2.push_back(run.max_gaps.modified_hs);
    }
    const auto [lo, hi] = std::minmax_element(e.begin(), e.end());
    PlotSpec p;
    p.title = "perturbation gaps, N = " + std::to_string(n);
    p.x_label = "epsilon";
    p.y_label = "max over t";
    p.log_x = p.log_y = true;
    p.series.push_back({"|omega - omega_lin|_inf", e, g1, true, "#1f77b4"});
    p.series.push_back({"|u* - u|_Hs", e, g2, true, "#2ca02c"});
    auto f1 = fitted_curve("fit", *lo, *hi, res.vorticity_inf.rate, res.vorticity_inf.intercept, true);
    auto f2 = fitted_curve("", *lo, *hi, res.modified_hs.rate, res.modified_hs.intercept, true);
    p.series.push_back(f1);
    p.series.push_back(f2);
    p.notes.push_back("slopes " + format_double(res.vorticity_inf.rate) + " and " +
                      format_double(res.modified_hs.rate));
    const std::string svg = path_in(cfg, name + ".svg");
    write_svg(svg, p);
    r.outputs.push_back(svg);
  }
  return r;
}

struct RatesRow {
  double M = 0.0, horizon = 0.0;
  IntermediateFits fits;
  double omega2_rate = 0.0;
};

inline RunRecord rates_cell(const ExperimentConfig& cfg, double M, double h,
                            const std::string& name, int threads, RatesRow& row) {
  RunRecord r;
  r.name = name;
  const auto tr = simulate_intermediate(cfg, M, h, threads, true);
  const auto ss = simulate_smallscale(cfg, M, tr.flow, threads);
  row.M = M;
  row.horizon = tr.plan.horizon;
  row.fits = fit_intermediate(tr);
  row.omega2_rate = ss.worst_rate;
  report(r, "horizon", tr.plan.horizon);
  check_le(r, "probe_rate", row.fits.probe.rate, -0.1 * M);
  report(r, "max_a2_rate", row.fits.max_a2.rate);
  check_le(r, "omega2_rate_worst", ss.worst_rate, -0.8 * M);
  check_le(r, "inside_violations", static_cast<double>(ss.confinement.inside_violations), 0.0);
  return r;
}

inline std::string cell_name(std::string_view kind, std::string_view var, double v,
                             const ExperimentConfig& cfg, std::size_t h_index) {
  std::string n = std::string(kind) + "_" + std::string(var) + token(v);
  if (cfg.spacings.size() > 1) n += "_h" + std::to_string(h_index);
  return n;
}

inline void finish_record(RunRecord& r) {
  r.ok = r.error.empty();
  r.passed = r.ok && std::all_of(r.metrics.begin(), r.metrics.end(),
                                 [](const Metric& m) { return !m.checked || m.pass; });
}

inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["acceptance"] = r.acceptance;
  j["ok"] = r.ok;
  j["passed"] = r.passed;
  j["error"] = r.error;
  j["outputs"] = r.outputs;
  j["wall_seconds"] = r.wall_seconds;
  auto& ms = j["metrics"] = nlohmann::json::array();
  for (const auto& m : r.metrics) {
    nlohmann::json e;
    e["name"] = m.name;
    if (std::isfinite(m.value)) e["value"] = m.value;
    else e["value"] = format_double(m.value);
    e["bound"] = m.bound;
    e["checked"] = m.checked;
    e["pass"] = m.pass;
    ms.push_back(std::move(e));
  }
  return j;
}

}  // namespace detail

/// Runs the configured sweep. Per-cell failures are recorded in the manifest;
/// only a bad configuration or an unusable output directory throws.
inline RunManifest run(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();

  if (cfg.backend == Backend::grid &&
      (cfg.kind == ExperimentKind::smallscale || cfg.kind == ExperimentKind::theorem_rates))
    fail(ErrorCode::BackendUnavailable,
         "small-scale characteristics need velocity gradients, which only the direct backend provides");
  require(!cfg.M_values.empty() && !cfg.epsilon_values.empty() && !cfg.resolutions.empty() &&
              !cfg.spacings.empty(),
          ErrorCode::InvalidArgument, "sweep lists must be non-empty");
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec || !fs::is_directory(cfg.output_dir))
    fail(ErrorCode::IoError, "cannot create output directory " + cfg.output_dir);

  RunManifest man;
  man.config = cfg;
  man.config_hash = config_hash(cfg);
  man.code_hash = code_hash();

  struct Cell {
    std::string name;
    std::function<RunRecord(int)> body;
  };
  std::vector<Cell> cells;
  std::vector<detail::RatesRow> rates_rows;
  switch (cfg.kind) {
    case ExperimentKind::intermediate:
    case ExperimentKind::smallscale:
      for (std::size_t hi = 0; hi < cfg.spacings.size(); ++hi)
        for (double M : cfg.M_values) {
          const double h = cfg.spacings[hi];
          const bool inter = cfg.kind == ExperimentKind::intermediate;
          const auto name = detail::cell_name(inter ? "intermediate" : "smallscale", "M", M, cfg, hi);
          cells.push_back({name, [&cfg, M, h, name, inter](int threads) {
                             return inter ? detail::intermediate_cell(cfg, M, h, name, threads)
                                          : detail::smallscale_cell(cfg, M, h, name, threads);
                           }});
        }
      break;
    case ExperimentKind::principles:
      for (int n : cfg.resolutions) {
        const auto name = "principles_N" + std::to_string(n);
        cells.push_back({name, [&cfg, n, name](int threads) {
                           return detail::principles_cell(cfg, n, name, threads);
                         }});
      }
      break;
    case ExperimentKind::theorem_rates:
      rates_rows.resize(cfg.M_values.size() * cfg.spacings.size());
      for (std::size_t hi = 0; hi < cfg.spacings.size(); ++hi)
        for (std::size_t mi = 0; mi < cfg.M_values.size(); ++mi) {
          const double M = cfg.M_values[mi], h = cfg.spacings[hi];
          const auto name = detail::cell_name("rates", "M", M, cfg, hi);
          auto* row = &rates_rows[hi * cfg.M_values.size() + mi];
          cells.push_back({name, [&cfg, M, h, name, row](int threads) {
                             return detail::rates_cell(cfg, M, h, name, threads, *row);
                           }});
        }
      break;
  }

  // Cells share the worker budget: with several cells in flight each one
  // evaluates its kernels single-threaded.
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(resolve_threads(cfg.threads), cells.size()));
  const int inner = workers > 1 ? 1 : cfg.threads;
  man.runs.resize(cells.size());
  parallel_tasks(cells.size(), static_cast<int>(workers), [&](std::size_t i) {
    const auto t0 = clock::now();
    RunRecord r;
    try {
      r = cells[i].body(inner);
    } catch (const Error& e) {
      r.error = e.what();
    } catch (const std::exception& e) {
      r.error = std::string("unexpected: ") + e.what();
    }
    r.name = cells[i].name;
    r.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    man.runs[i] = std::move(r);
  });
  for (auto& r : man.runs) detail::finish_record(r);

  // Cross-cell products.
  if (cfg.kind == ExperimentKind::theorem_rates) {
    RunRecord agg;
    agg.name = "rates_table";
    agg.acceptance = false;
    try {
      const std::string csv = detail::path_in(cfg, "rates.csv");
      CsvWriter w(csv, schemas::rates());
      std::vector<double> Ms, probe_over_M, omega_over_M;
      for (std::size_t i = 0; i < rates_rows.size(); ++i) {
        if (!man.runs[i].ok) continue;
        const auto& x = rates_rows[i];
        const double pm = x.M > 0.0 ? x.fits.probe.rate / x.M : 0.0;
        const double om = x.M > 0.0 ? x.omega2_rate / x.M : 0.0;
        w.row({x.M, x.horizon, x.fits.probe.rate, pm, x.fits.probe.r_squared, x.fits.max_a2.rate,
               x.omega2_rate, om});
        Ms.push_back(x.M);
        probe_over_M.push_back(pm);
        omega_over_M.push_back(om);
      }
      w.close();
      agg.outputs.push_back(csv);
      PlotSpec p;
      p.title = "fitted decay rates over M";
      p.x_label = "M";
      p.y_label = "rate / M";
      p.series.push_back({"grad u probe", Ms, probe_over_M, true, "#1f77b4"});
      p.series.push_back({"omega_2 (worst seed)", Ms, omega_over_M, true, "#2ca02c"});
      p.notes.push_back("thresholds: -0.1 (probe), -0.8 (omega_2)");
      const std::string svg = detail::path_in(cfg, "rates.svg");
      write_svg(svg, p);
      agg.outputs.push_back(svg);
    } catch (const Error& e) {
      agg.error = e.what();
    }
    detail::finish_record(agg);
    man.runs.push_back(std::move(agg));
  }
  if (cfg.kind == ExperimentKind::smallscale) {
    // Closest approach of outside seeds against M, fitted as c (M+1)^-gamma.
    std::vector<double> x, y;
    for (std::size_t i = 0; i < man.runs.size(); ++i) {
      const auto* m = man.runs[i].metric("outside_min_radius");
      if (!man.runs[i].ok || !m || !(m->value > 0.0)) continue;
      x.push_back(cfg.M_values[i % cfg.M_values.size()] + 1.0);
      y.push_back(m->value);
    }
    const bool distinct = !x.empty() && std::any_of(x.begin(), x.end(), [&](double v) { return v != x[0]; });
    if (x.size() >= 2 && distinct && cfg.spacings.size() == 1) {
      RunRecord agg;
      agg.name = "smallscale_outside_radius_fit";
      agg.acceptance = false;
      const auto fit = fit_power_law(x, y);
      detail::report(agg, "c", std::exp(fit.intercept));
      detail::report(agg, "gamma", -fit.rate);
      detail::report(agg, "r_squared", fit.r_squared);
      detail::finish_record(agg);
      man.runs.push_back(std::move(agg));
    }
  }

  // Every referenced output must exist.
  for (auto& r : man.runs)
    for (const auto& o : r.outputs)
      if (!fs::exists(o)) {
        r.error = "IoError: output " + o + " was not written";
        detail::finish_record(r);
      }

  man.config_path = detail::path_in(cfg, "config.resolved");
  {
    std::ofstream f(man.config_path, std::ios::binary | std::ios::trunc);
    f << serialize_config(cfg);
    if (!f) fail(ErrorCode::IoError, "cannot write " + man.config_path);
  }

  man.summary_path = detail::path_in(cfg, "summary.csv");
  {
    CsvWriter w(man.summary_path, schemas::summary());
    for (const auto& r : man.runs) {
      if (!r.ok) {
        const auto colon = r.error.find(':');
        w.row({r.name, "error", r.error.substr(0, colon), "", false});
        continue;
      }
      for (const auto& m : r.metrics) w.row({r.name, m.name, m.value, m.bound, m.pass});
    }
    w.close();
  }

  man.wall_seconds = std::chrono::duration<double>(clock::now() - t_start).count();
  man.manifest_path = detail::path_in(cfg, "manifest.json");
  nlohmann::json j;
  j["version"] = std::string(kVersion);
  j["kind"] = std::string(to_string(cfg.kind));
  j["config_hash"] = man.config_hash;
  j["code_hash"] = man.code_hash;
  auto& params = j["parameters"] = nlohmann::json::object();
  for (const auto& [k, v] : config_entries(cfg)) params[k] = v;
  j["config_path"] = man.config_path;
  j["summary_path"] = man.summary_path;
  j["success"] = man.success();
  j["wall_seconds"] = man.wall_seconds;
  auto& runs = j["runs"] = nlohmann::json::array();
  for (const auto& r : man.runs) runs.push_back(detail::to_json(r));
  {
    std::ofstream f(man.manifest_path, std::ios::binary | std::ios::trunc);
    f << j.dump(2) << "\n";
    if (!f) fail(ErrorCode::IoError, "cannot write " + man.manifest_path);
  }
  return man;
}

}  // namespace vortexlab::experiments
