#pragma once

// Characteristics A(t, a) of the strain + intermediate flow and the
// linearized small-scale vorticity carried along them:
//
//   A1 = a1 e^{Mt},  dA2/dt = u2(A) - M A2,  dA3/dt = u3(A),
//   dw1/dt = M w1,
//   dw2/dt = (-M + d2u2) w2 + d3u2 w3,
//   dw3/dt = d2u3 w2 + d3u3 w3.
//
// The constant strain terms are integrated exactly (integrating factor
// e^{-M(t - t_n)} on A2 and w2 within each step) and the remainder by
// classical RK4, so with no intermediate flow the solution is exact.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "vortexlab/error.hpp"
#include "vortexlab/intermediate_flow.hpp"
#include "vortexlab/rate_fit.hpp"
#include "vortexlab/torus_kernels.hpp"
#include "vortexlab/vec.hpp"

namespace vortexlab {

struct SmallScaleSpec {
  double epsilon = 1e-3;
  double ell = 0.01;         // support radius of the small vortex
  double psi_radius = 2.0;   // support of psi, in units of ell

  void validate() const {
    require(epsilon > 0.0 && std::isfinite(epsilon), ErrorCode::InvalidArgument, "epsilon must be > 0");
    require(ell > 0.0 && std::isfinite(ell), ErrorCode::InvalidArgument, "ell must be > 0");
    require(psi_radius > 1.0, ErrorCode::InvalidArgument, "psi support must extend beyond the unit ball");
  }

  double psi(const Vec3& y) const {
    return smooth_bump(y.x1 * y.x1 + y.x2 * y.x2 + y.x3 * y.x3, psi_radius);
  }

  /// omega^S_0(a) = epsilon (0, psi(a / ell), 0) for |a| <= ell.
  Vec3 initial_vorticity(const Vec3& a) const {
    return {0.0, epsilon * psi({a.x1 / ell, a.x2 / ell, a.x3 / ell}), 0.0};
  }
};

/// ell = delta / (M + 1).
inline double default_ell(double M, double delta) { return delta / (M + 1.0); }

struct Characteristic3D {
  Vec3 label;
  std::vector<double> t;
  std::vector<Vec3> path;
  std::vector<Vec3> omega;
};

struct SmallScaleOptions {
  int substeps = 4;   // characteristic steps per stored flow step
  bool check_region = true;
  int threads = 0;
};

namespace detail {

struct ProbeState {
  double B2, A3, v2, w3;  // B2 = e^{M s} A2, v2 = e^{M s} w2, s = t - t_n
};

inline void check_series(const FlowSeries& flow) {
  require(flow.snapshots().size() >= 2, ErrorCode::FlowSeriesGap, "flow series needs at least two snapshots");
}

/// Velocity and gradient of u^I at time t for a batch of cross-section points.
inline VelocityAndGradient flow_coefficients(const FlowSeries& flow, double t,
                                             std::span<const Vec2> pts, bool check_region,
                                             int threads) {
  const auto src = flow.sources_at(t);
  VelocityAndGradient out;
  if (src.empty()) {
    out.velocity.assign(pts.size(), Vec2{});
    out.gradient.assign(pts.size(), Grad2{});
    out.empty_ensemble = true;
    return out;
  }
  auto opts = flow.base().settings.kernel;
  if (threads != 0) opts.threads = threads;
  if (check_region) {
    const double lim = 3.0 * src.front().radius;
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t k = 0; k < src.size(); ++k)
        if (norm2(pts[i] - src[k].position) <= lim * lim)
          fail(ErrorCode::RegionViolation,
               "characteristic " + std::to_string(i) + " entered the intermediate support at t = " +
                   std::to_string(t) + " (within 3 sigma of particle " + std::to_string(k) + ")");
  }
  return velocity_and_gradient_direct(src, pts, flow.base().settings.domain, opts);
}

}  // namespace detail

/// Integrates characteristics and small-scale vorticity for a batch of seeds,
/// storing samples at every step. All seeds share each velocity evaluation.
inline std::vector<Characteristic3D> evolve_small_vortex(std::span<const Vec3> labels,
                                                         std::span<const Vec3> omega0,
                                                         const FlowSeries& flow,
                                                         const SmallScaleOptions& opts = {}) {
  require(labels.size() == omega0.size(), ErrorCode::InvalidArgument, "labels/omega length mismatch");
  require(opts.substeps >= 1, ErrorCode::InvalidArgument, "substeps must be >= 1");
  detail::check_series(flow);
  const double M = flow.base().strain.M;
  const auto& snaps = flow.snapshots();
  const std::size_t n = labels.size();

  std::vector<Characteristic3D> out(n);
  std::vector<Vec2> A(n);
  std::vector<Vec3> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].label = labels[i];
    A[i] = {labels[i].x2, labels[i].x3};
    w[i] = omega0[i];
  }
  const double t0 = snaps.front().t;
  auto record = [&](double t) {
    for (std::size_t i = 0; i < n; ++i) {
      out[i].t.push_back(t);
      out[i].path.push_back({labels[i].x1 * std::exp(M * (t - t0)), A[i].x2, A[i].x3});
      out[i].omega.push_back(w[i]);
    }
  };
  record(t0);
  if (n == 0) return out;

  using detail::ProbeState;
  std::vector<ProbeState> k[4];
  for (auto& kk : k) kk.resize(n);
  std::vector<Vec2> pts(n);
  for (std::size_t seg = 0; seg + 1 < snaps.size(); ++seg) {
    const double dt = (snaps[seg + 1].t - snaps[seg].t) / opts.substeps;
    for (int sub = 0; sub < opts.substeps; ++sub) {
      const double tn = snaps[seg].t + sub * dt;
      // Stage derivatives of (B2, A3, v2, w3) at local time s, given the stage state.
      auto rhs = [&](double s, const std::vector<ProbeState>& y, std::vector<ProbeState>& dy) {
        const double decay = std::exp(-M * s), grow = std::exp(M * s);
        for (std::size_t i = 0; i < n; ++i) pts[i] = {decay * y[i].B2, y[i].A3};
        const auto c = detail::flow_coefficients(flow, std::min(tn + s, flow.t_end()), pts,
                                                 opts.check_region, opts.threads);
        for (std::size_t i = 0; i < n; ++i) {
          const Vec2& u = c.velocity[i];
          const Grad2& g = c.gradient[i];
          const double w2 = decay * y[i].v2;
          dy[i].B2 = grow * u.x2;
          dy[i].A3 = u.x3;
          dy[i].v2 = g.d2u2 * y[i].v2 + grow * g.d3u2 * y[i].w3;
          dy[i].w3 = g.d2u3 * w2 + g.d3u3 * y[i].w3;
        }
      };
      std::vector<ProbeState> y0(n), y(n);
      for (std::size_t i = 0; i < n; ++i) y0[i] = {A[i].x2, A[i].x3, w[i].x2, w[i].x3};
      auto axpy = [&](double c, const std::vector<ProbeState>& d) {
        for (std::size_t i = 0; i < n; ++i)
          y[i] = {y0[i].B2 + c * d[i].B2, y0[i].A3 + c * d[i].A3, y0[i].v2 + c * d[i].v2,
                  y0[i].w3 + c * d[i].w3};
      };
      rhs(0.0, y0, k[0]);
      axpy(0.5 * dt, k[0]);
      rhs(0.5 * dt, y, k[1]);
      axpy(0.5 * dt, k[1]);
      rhs(0.5 * dt, y, k[2]);
      axpy(dt, k[2]);
      rhs(dt, y, k[3]);
      const double decay = std::exp(-M * dt);
      for (std::size_t i = 0; i < n; ++i) {
        auto comb = [&](double ProbeState::*f) {
          return y0[i].*f + dt / 6.0 * (k[0][i].*f + 2.0 * k[1][i].*f + 2.0 * k[2][i].*f + k[3][i].*f);
        };
        A[i] = {decay * comb(&ProbeState::B2), comb(&ProbeState::A3)};
        w[i] = {w[i].x1 * std::exp(M * dt), decay * comb(&ProbeState::v2), comb(&ProbeState::w3)};
      }
      record(sub + 1 == opts.substeps ? snaps[seg + 1].t : tn + dt);
    }
  }
  return out;
}

/// Single-seed convenience overload; the initial vector is taken from `c.omega[0]`.
inline Characteristic3D evolve_small_vortex(const Characteristic3D& c, const FlowSeries& flow,
                                            const SmallScaleOptions& opts = {}) {
  require(!c.omega.empty(), ErrorCode::InvalidArgument, "characteristic has no initial vorticity");
  const Vec3 a = c.label, w = c.omega.front();
  return evolve_small_vortex(std::span<const Vec3>(&a, 1), std::span<const Vec3>(&w, 1), flow, opts)
      .front();
}

/// Path only (the attached vorticity is identically zero).
inline Characteristic3D trace_characteristic(const Vec3& a, const FlowSeries& flow,
                                             const SmallScaleOptions& opts = {}) {
  const Vec3 zero{};
  return evolve_small_vortex(std::span<const Vec3>(&a, 1), std::span<const Vec3>(&zero, 1), flow, opts)
      .front();
}

/// Fits |value| ~ exp(intercept + rate t).
inline RateFit decay_rate_fit(std::span<const Sample> series) { return fit_exponential(series, 10); }

inline std::vector<Sample> omega_component_series(const Characteristic3D& c, int component,
                                                  double t_from = -1e300) {
  std::vector<Sample> s;
  for (std::size_t i = 0; i < c.t.size(); ++i) {
    if (c.t[i] < t_from) continue;
    const Vec3& w = c.omega[i];
    const double v = component == 1 ? w.x1 : component == 2 ? w.x2 : w.x3;
    s.push_back({c.t[i], std::abs(v)});
  }
  return s;
}

// ---------------------------------------------------------------------------
// Seeds

inline double radical_inverse(unsigned i, unsigned base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= base;
    r += f * (i % base);
    i /= base;
  }
  return r;
}

/// Deterministic low-discrepancy points with r_inner <= |a| < r_outer
/// (Halton bases 2, 3, 5 mapped volume-uniformly).
inline std::vector<Vec3> shell_seeds(double r_inner, double r_outer, int count) {
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(std::max(count, 0)));
  const double lo3 = r_inner * r_inner * r_inner, hi3 = r_outer * r_outer * r_outer;
  for (int k = 1; k <= count; ++k) {
    const double u = radical_inverse(static_cast<unsigned>(k), 2);
    const double v = radical_inverse(static_cast<unsigned>(k), 3);
    const double q = radical_inverse(static_cast<unsigned>(k), 5);
    const double r = std::cbrt(lo3 + u * (hi3 - lo3));
    const double z = 1.0 - 2.0 * v;
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = 2.0 * std::numbers::pi * q;
    pts.push_back({r * z, r * rho * std::cos(phi), r * rho * std::sin(phi)});
  }
  return pts;
}

inline std::vector<Vec3> ball_seeds(double radius, int count) { return shell_seeds(0.0, radius, count); }

// ---------------------------------------------------------------------------
// Confinement

struct ConfinementReport {
  std::size_t inside_seeds = 0;
  std::size_t inside_violations = 0;  // seeds in B_0(ell) leaving B_0(delta)
  double inside_max_ratio = 0.0;      // max_t |A| / delta over inside seeds
  std::size_t outside_seeds = 0;
  double outside_min_radius = 0.0;    // min_t |A| over seeds outside B_0(ell)
  std::size_t axis_violations = 0;    // x1-axis seeds with |A1| < |a1|
  std::vector<std::size_t> violating_seeds;
};

/// Seeds from ell <= |a| < 2 ell plus a few on the stretching axis.
inline std::vector<Vec3> outside_seeds(double ell, int count) {
  auto out = shell_seeds(ell, 2.0 * ell, count);
  for (double f : {1.0, 1.25, 1.5, 1.9}) {
    out.push_back({f * ell, 0.0, 0.0});
    out.push_back({-f * ell, 0.0, 0.0});
  }
  return out;
}

/// Confinement statistics of already integrated characteristics.
inline ConfinementReport summarize_confinement(std::span<const Characteristic3D> inside,
                                               std::span<const Characteristic3D> outside,
                                               double delta) {
  ConfinementReport rep;
  rep.inside_seeds = inside.size();
  for (std::size_t i = 0; i < inside.size(); ++i) {
    double worst = 0.0;
    for (const auto& p : inside[i].path) worst = std::max(worst, norm(p));
    rep.inside_max_ratio = std::max(rep.inside_max_ratio, worst / delta);
    if (worst > delta) {
      ++rep.inside_violations;
      rep.violating_seeds.push_back(i);
    }
  }
  rep.outside_seeds = outside.size();
  rep.outside_min_radius = std::numeric_limits<double>::infinity();
  for (const auto& c : outside) {
    for (const auto& p : c.path) rep.outside_min_radius = std::min(rep.outside_min_radius, norm(p));
    if (c.label.x2 == 0.0 && c.label.x3 == 0.0)
      for (const auto& p : c.path)
        if (std::abs(p.x1) < std::abs(c.label.x1)) ++rep.axis_violations;
  }
  return rep;
}

inline void check_confinement_radii(double ell, double delta, double M) {
  require(ell > 0.0 && delta > 0.0, ErrorCode::InvalidArgument, "radii must be positive");
  require(ell <= delta / (M + 1.0) * (1.0 + 1e-12), ErrorCode::InvalidArgument,
          "ell must not exceed delta / (M + 1)");
}

/// Checks that seeds in B_0(ell) stay inside B_0(delta) and records how close
/// seeds from ell <= |a| < 2 ell come to the origin.
inline ConfinementReport confinement_check(double ell, double delta, const FlowSeries& flow,
                                           int n_samples, const SmallScaleOptions& opts = {}) {
  check_confinement_radii(ell, delta, flow.base().strain.M);
  const auto inside = ball_seeds(ell, n_samples);
  const auto outside = outside_seeds(ell, n_samples);
  const std::vector<Vec3> zeros_in(inside.size()), zeros_out(outside.size());
  const auto in = evolve_small_vortex(inside, zeros_in, flow, opts);
  const auto out = evolve_small_vortex(outside, zeros_out, flow, opts);
  return summarize_confinement(in, out, delta);
}

}  // namespace vortexlab
