#pragma once

// Lagrangian evolution of the intermediate-scale vorticity omega_1 of a
// vortex quadrupole under the large-scale strain u^L = (M x1, -M x2, 0).
//
// In the (x2, x3) cross-section each particle follows
//   dA2/dt = u2(A) - M A2,   dA3/dt = u3(A),
// and carries the value e^{Mt} omega_0(a) on an area element e^{-Mt} h^2, so
// its circulation omega_0(a) h^2 never changes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vortexlab/error.hpp"
#include "vortexlab/torus_kernels.hpp"
#include "vortexlab/vec.hpp"

namespace vortexlab {

struct StrainParams {
  double M = 0.0;

  void validate() const {
    require(std::isfinite(M) && M >= 0.0, ErrorCode::InvalidArgument,
            "strain rate M must be finite and >= 0, got " + std::to_string(M));
  }
  /// log(1 + M) / M, continued by 1 at M = 0.
  double T_M() const { return M == 0.0 ? 1.0 : std::log1p(M) / M; }
};

/// Smooth compactly supported radial bump with peak value 1 at the centre.
inline double smooth_bump(double r2, double radius) {
  const double s = r2 / (radius * radius);
  if (s >= 1.0) return 0.0;
  return std::exp(1.0 - 1.0 / (1.0 - s));
}

struct QuadrupoleSpec {
  double amplitude = 1.0;
  // Placed towards the (1, 2) corner so that a2 < a3 / sqrt(3) on most of the
  // support: there the strain-driven collapse of a2 already weakens grad u^I
  // at the origin, instead of first strengthening it.
  Vec2 center{1.25, 1.75};
  double bump_radius = 0.25;  // support of phi is the disk of this radius, inside [1,2]^2
  double spacing = 1.0 / 64;  // particle lattice spacing h
  double core_ratio = 2.0;    // blob core sigma = core_ratio * h

  void validate() const {
    require(std::isfinite(amplitude) && amplitude >= 0.0, ErrorCode::InvalidArgument,
            "quadrupole amplitude must be >= 0");
    require(center.x2 - bump_radius >= 1.0 - 1e-12 && center.x2 + bump_radius <= 2.0 + 1e-12 &&
                center.x3 - bump_radius >= 1.0 - 1e-12 && center.x3 + bump_radius <= 2.0 + 1e-12,
            ErrorCode::InvalidArgument, "bump support must lie inside [1,2]x[1,2]");
    require(spacing > 0.0 && core_ratio > 0.0, ErrorCode::InvalidArgument,
            "spacing and core ratio must be positive");
  }

  /// phi(x): the non-negative first-quadrant bump.
  double phi(const Vec2& x) const { return amplitude * smooth_bump(norm2(x - center), bump_radius); }

  /// omega_{1,0}(x) = sum over the four mirror images, odd in x2 and in x3.
  double omega0(const Vec2& x) const {
    return phi({x.x2, x.x3}) - phi({-x.x2, x.x3}) - phi({x.x2, -x.x3}) + phi({-x.x2, -x.x3});
  }
};

enum class Backend { direct, grid };

// mirror_reduced integrates only first-quadrant particles and supplies the
// three mirror images as velocity sources; full integrates all four copies.
enum class SymmetryMode { mirror_reduced, full };

struct FlowSettings {
  Backend backend = Backend::direct;
  SymmetryMode symmetry = SymmetryMode::mirror_reduced;
  TorusDomain2D domain{100.0};
  KernelEvalOptions kernel{};
  int grid_resolution = 512;
  int grid_interpolation_nodes = 4;
  double cfl = 0.5;
};

struct Particle {
  Vec2 label;
  Vec2 position;
  double circulation = 0.0;
  double omega0 = 0.0;       // omega_{1,0}(label)
  int lattice_i = 0;         // lattice index of the first-quadrant label
  int lattice_j = 0;
  std::uint8_t quadrant = 0;  // 0: (+,+), 1: (-,+), 2: (+,-), 3: (-,-)
};

struct JacobianProbe {
  Vec2 label;
  double fd_step = 0.0;
  std::size_t first_tracer = 0;  // tracers at a+h e2, a-h e2, a+h e3, a-h e3
};

struct IntermediateState {
  double t = 0.0;
  StrainParams strain;
  QuadrupoleSpec spec;
  FlowSettings settings;
  std::vector<Particle> particles;
  std::vector<Vec2> tracers;  // passive markers, advected by the same field
  std::vector<JacobianProbe> probes;

  double blob_radius() const { return spec.core_ratio * spec.spacing; }
  /// Copies of each particle that the quadrature must count.
  double multiplicity() const {
    return settings.symmetry == SymmetryMode::mirror_reduced ? 4.0 : 1.0;
  }
  bool empty() const { return particles.empty(); }
};

namespace detail {

inline Vec2 mirror(const Vec2& x, int quadrant) {
  return {(quadrant & 1) ? -x.x2 : x.x2, (quadrant & 2) ? -x.x3 : x.x3};
}

inline double mirror_sign(int quadrant) { return (quadrant == 1 || quadrant == 2) ? -1.0 : 1.0; }

/// Velocity sources for particle positions `pos` (one per particle).
inline std::vector<VortexBlob> sources(const IntermediateState& s, std::span<const Vec2> pos) {
  std::vector<VortexBlob> out;
  const double sigma = s.blob_radius();
  if (s.settings.symmetry == SymmetryMode::mirror_reduced) {
    out.reserve(4 * pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i) {
      const auto& p = s.particles[i];
      for (int q = 0; q < 4; ++q)
        out.push_back({mirror(p.label, q), mirror(pos[i], q), mirror_sign(q) * p.circulation, sigma});
    }
  } else {
    out.reserve(pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i) {
      const auto& p = s.particles[i];
      out.push_back({p.label, pos[i], p.circulation, sigma});
    }
  }
  return out;
}

/// u^I at targets, from sources, with the configured backend.
inline std::vector<Vec2> induced_velocity(const IntermediateState& s,
                                          std::span<const VortexBlob> src,
                                          std::span<const Vec2> targets) {
  if (src.empty()) return std::vector<Vec2>(targets.size());
  if (s.settings.backend == Backend::direct)
    return biot_savart_direct(src, targets, s.settings.domain, s.settings.kernel).velocity;
  GridBackendOptions g;
  g.domain = s.settings.domain;
  g.resolution = s.settings.grid_resolution;
  g.interpolation_nodes = s.settings.grid_interpolation_nodes;
  return grid_velocity_at(src, targets, g);
}

struct MoverVelocity {
  std::vector<Vec2> total;  // u^I + strain, particles then tracers
  double max_induced = 0.0;
};

/// Right-hand side for all moving points: particles first, then tracers.
inline MoverVelocity mover_velocity(const IntermediateState& s, std::span<const Vec2> movers) {
  const std::size_t np = s.particles.size();
  const auto src = sources(s, movers.subspan(0, np));
  MoverVelocity out;
  out.total = induced_velocity(s, src, movers);
  for (std::size_t i = 0; i < movers.size(); ++i) {
    out.max_induced = std::max(out.max_induced, norm(out.total[i]));
    out.total[i].x2 -= s.strain.M * movers[i].x2;
  }
  return out;
}

inline std::vector<Vec2> mover_positions(const IntermediateState& s) {
  std::vector<Vec2> x;
  x.reserve(s.particles.size() + s.tracers.size());
  for (const auto& p : s.particles) x.push_back(p.position);
  for (const auto& t : s.tracers) x.push_back(t);
  return x;
}

}  // namespace detail

/// Seeds particles on the lattice of spacing h over the bump support, one per
/// cell centre with phi > 0; circulation omega_{1,0}(a) h^2.
inline IntermediateState init_quadrupole(const QuadrupoleSpec& spec, const StrainParams& strain,
                                         const FlowSettings& settings = {}) {
  spec.validate();
  strain.validate();
  settings.domain.validate();
  settings.kernel.validate();
  const double per_unit = 1.0 / spec.spacing;
  require(std::abs(per_unit - std::round(per_unit)) < 1e-9, ErrorCode::UnderResolvedBump,
          "spacing must divide the unit support box, got h = " + std::to_string(spec.spacing));
  require(spec.bump_radius / spec.spacing >= 16.0 - 1e-9, ErrorCode::UnderResolvedBump,
          "need >= 16 particles across the bump radius, have " +
              std::to_string(spec.bump_radius / spec.spacing));
  IntermediateState s;
  s.strain = strain;
  s.spec = spec;
  s.settings = settings;
  if (spec.amplitude == 0.0) return s;
  const int cells = static_cast<int>(std::lround(per_unit));
  const double h = spec.spacing;
  const int copies = settings.symmetry == SymmetryMode::mirror_reduced ? 1 : 4;
  for (int i = 0; i < cells; ++i)
    for (int j = 0; j < cells; ++j) {
      const Vec2 a{1.0 + (i + 0.5) * h, 1.0 + (j + 0.5) * h};
      const double w = spec.omega0(a);
      if (w == 0.0) continue;
      for (int q = 0; q < copies; ++q) {
        Particle p;
        p.label = detail::mirror(a, q);
        p.position = p.label;
        p.omega0 = detail::mirror_sign(q) * w;
        p.circulation = p.omega0 * h * h;
        p.lattice_i = i;
        p.lattice_j = j;
        p.quadrant = static_cast<std::uint8_t>(q);
        s.particles.push_back(p);
      }
    }
  for (const auto& p : s.particles)
    require(settings.domain.contains(p.position), ErrorCode::InvalidArgument,
            "quadrupole does not fit in the torus");
  return s;
}

/// Full source ensemble (mirror images included) at the current time.
inline std::vector<VortexBlob> source_blobs(const IntermediateState& s) {
  std::vector<Vec2> pos;
  pos.reserve(s.particles.size());
  for (const auto& p : s.particles) pos.push_back(p.position);
  return detail::sources(s, pos);
}

inline double total_circulation(const IntermediateState& s) {
  double c = 0.0;
  for (const auto& b : source_blobs(s)) c += b.circulation;
  return c;
}

/// Induced velocity u^I (without strain) at arbitrary points.
inline std::vector<Vec2> intermediate_velocity(const IntermediateState& s,
                                               std::span<const Vec2> points) {
  const auto src = source_blobs(s);
  return detail::induced_velocity(s, src, points);
}

namespace detail {

inline void check_step(const IntermediateState& s, double dt, double max_induced) {
  require(std::isfinite(dt) && dt > 0.0, ErrorCode::InvalidArgument, "dt must be positive");
  if (s.strain.M * dt > 0.1 + 1e-12)
    fail(ErrorCode::CFLViolation,
         "dt * M = " + std::to_string(s.strain.M * dt) + " exceeds 0.1");
  if (max_induced > 0.0 && dt * max_induced > s.settings.cfl * s.spec.spacing * (1.0 + 1e-12))
    fail(ErrorCode::CFLViolation, "dt = " + std::to_string(dt) + " exceeds CFL h / max|u| = " +
                                      std::to_string(s.settings.cfl * s.spec.spacing / max_induced));
}

inline void check_region(const std::vector<Vec2>& movers) {
  for (std::size_t i = 0; i < movers.size(); ++i) {
    const double r = norm(movers[i]);
    if (!std::isfinite(r)) fail(ErrorCode::NonFiniteInput, "particle " + std::to_string(i) + " diverged");
    if (r > 10.0)
      fail(ErrorCode::BlowupGuard, "point " + std::to_string(i) + " left |x| <= 10 (|x| = " +
                                       std::to_string(r) + ")");
  }
}

/// One RK4 step. `k1` may carry the already-known stage-1 velocity.
inline void rk4_step(IntermediateState& s, double dt, const MoverVelocity* k1_known,
                     MoverVelocity* k1_out) {
  const std::vector<Vec2> x0 = mover_positions(s);
  MoverVelocity k1 = k1_known ? *k1_known : mover_velocity(s, x0);
  check_step(s, dt, k1.max_induced);
  auto stage = [&](const std::vector<Vec2>& k, double c) {
    std::vector<Vec2> x(x0.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = x0[i] + (c * dt) * k[i];
    check_region(x);
    return x;
  };
  const auto k2 = mover_velocity(s, stage(k1.total, 0.5)).total;
  const auto k3 = mover_velocity(s, stage(k2, 0.5)).total;
  const auto k4 = mover_velocity(s, stage(k3, 1.0)).total;
  std::vector<Vec2> x1(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i)
    x1[i] = x0[i] + (dt / 6.0) * (k1.total[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  check_region(x1);
  const std::size_t np = s.particles.size();
  for (std::size_t i = 0; i < np; ++i) s.particles[i].position = x1[i];
  for (std::size_t i = 0; i < s.tracers.size(); ++i) s.tracers[i] = x1[np + i];
  s.t += dt;
  if (k1_out) *k1_out = std::move(k1);
}

}  // namespace detail

/// Advances particles and tracers by one RK4 step of size dt.
inline void step(IntermediateState& s, double dt) { detail::rk4_step(s, dt, nullptr, nullptr); }

/// Largest induced speed |u^I| over the particles.
inline double max_induced_speed(const IntermediateState& s) {
  if (s.empty()) return 0.0;
  return detail::mover_velocity(s, detail::mover_positions(s)).max_induced;
}

/// Step size for a run of length `horizon`: min(0.1/M, CFL h / max|u^I|),
/// shortened so that an integer number (>= min_steps) of steps lands on the horizon.
inline double recommended_dt(const IntermediateState& s, double horizon, int min_steps = 40) {
  require(horizon > 0.0, ErrorCode::InvalidArgument, "horizon must be positive");
  double dt = horizon / std::max(min_steps, 1);
  if (s.strain.M > 0.0) dt = std::min(dt, 0.1 / s.strain.M);
  const double umax = max_induced_speed(s);
  // Headroom for the growth of |u^I| during the run.
  if (umax > 0.0) dt = std::min(dt, 0.5 * s.settings.cfl * s.spec.spacing / umax);
  const double steps = std::ceil(horizon / dt - 1e-9);
  return horizon / steps;
}

// ---------------------------------------------------------------------------
// Flow series: positions and velocities at every step, for tracing
// characteristics through the evolving intermediate field.

struct FlowSnapshot {
  double t = 0.0;
  std::vector<Vec2> positions;   // evolved particles only
  std::vector<Vec2> velocities;  // dA/dt (induced + strain) at the snapshot
};

class FlowSeries {
 public:
  FlowSeries() = default;
  explicit FlowSeries(const IntermediateState& s) : base_(s) {
    base_.tracers.clear();
    base_.probes.clear();
  }

  void push(FlowSnapshot snap) {
    require(snapshots_.empty() || snap.t > snapshots_.back().t, ErrorCode::InvalidArgument,
            "snapshots must be strictly increasing in time");
    snapshots_.push_back(std::move(snap));
  }

  const std::vector<FlowSnapshot>& snapshots() const { return snapshots_; }
  const IntermediateState& base() const { return base_; }
  double t_begin() const { return snapshots_.empty() ? 0.0 : snapshots_.front().t; }
  double t_end() const { return snapshots_.empty() ? 0.0 : snapshots_.back().t; }

  /// Particle positions at time t by cubic Hermite interpolation.
  std::vector<Vec2> positions_at(double t) const {
    require(!snapshots_.empty(), ErrorCode::FlowSeriesGap, "flow series is empty");
    const double tol = 1e-12 * std::max(1.0, std::abs(t_end()));
    if (t < t_begin() - tol || t > t_end() + tol)
      fail(ErrorCode::FlowSeriesGap, "time " + std::to_string(t) + " outside stored series [" +
                                         std::to_string(t_begin()) + ", " +
                                         std::to_string(t_end()) + "]");
    if (snapshots_.size() == 1) return snapshots_.front().positions;
    auto it = std::upper_bound(snapshots_.begin(), snapshots_.end(), t,
                               [](double v, const FlowSnapshot& s) { return v < s.t; });
    std::size_t i = it == snapshots_.begin() ? 0 : static_cast<std::size_t>(it - snapshots_.begin()) - 1;
    i = std::min(i, snapshots_.size() - 2);
    const auto& a = snapshots_[i];
    const auto& b = snapshots_[i + 1];
    const double h = b.t - a.t;
    const double th = std::clamp((t - a.t) / h, 0.0, 1.0);
    const double th2 = th * th, th3 = th2 * th;
    const double h00 = 2 * th3 - 3 * th2 + 1, h10 = th3 - 2 * th2 + th;
    const double h01 = -2 * th3 + 3 * th2, h11 = th3 - th2;
    std::vector<Vec2> out(a.positions.size());
    for (std::size_t k = 0; k < out.size(); ++k)
      out[k] = h00 * a.positions[k] + (h10 * h) * a.velocities[k] + h01 * b.positions[k] +
               (h11 * h) * b.velocities[k];
    return out;
  }

  /// Source blobs (mirror images included) at time t.
  std::vector<VortexBlob> sources_at(double t) const { return detail::sources(base_, positions_at(t)); }

 private:
  IntermediateState base_;
  std::vector<FlowSnapshot> snapshots_;
};

/// Runs `steps` RK4 steps of size dt, recording a snapshot before the first
/// step and after every step. `observe(state)` is called at each snapshot.
template <class Observer>
FlowSeries evolve(IntermediateState& s, double dt, int steps, Observer&& observe) {
  require(steps >= 1, ErrorCode::InvalidArgument, "need at least one step");
  FlowSeries series(s);
  const std::size_t np = s.particles.size();
  auto record = [&](const detail::MoverVelocity& v) {
    FlowSnapshot snap;
    snap.t = s.t;
    snap.positions.reserve(np);
    for (const auto& p : s.particles) snap.positions.push_back(p.position);
    snap.velocities.assign(v.total.begin(), v.total.begin() + static_cast<std::ptrdiff_t>(np));
    series.push(std::move(snap));
  };
  detail::MoverVelocity k1 = detail::mover_velocity(s, detail::mover_positions(s));
  record(k1);
  observe(static_cast<const IntermediateState&>(s));
  for (int n = 0; n < steps; ++n) {
    detail::rk4_step(s, dt, &k1, nullptr);
    k1 = detail::mover_velocity(s, detail::mover_positions(s));
    record(k1);
    observe(static_cast<const IntermediateState&>(s));
  }
  return series;
}

inline FlowSeries evolve(IntermediateState& s, double dt, int steps) {
  return evolve(s, dt, steps, [](const IntermediateState&) {});
}

// ---------------------------------------------------------------------------
// Diagnostics

/// ||omega_1(t)||_p in the particle representation: values e^{Mt} omega_0(a)
/// on area elements e^{-Mt} h^2 (p = infinity allowed).
inline double lp_norm(const IntermediateState& s, double p) {
  require(p >= 1.0, ErrorCode::InvalidArgument, "p must be >= 1");
  if (s.empty()) return 0.0;
  const double Mt = s.strain.M * s.t;
  if (std::isinf(p)) {
    double m = 0.0;
    for (const auto& q : s.particles) m = std::max(m, std::abs(q.omega0));
    return std::exp(Mt) * m;
  }
  if (p == 1.0) {
    double c = 0.0;
    for (const auto& q : s.particles) c += std::abs(q.circulation);
    return s.multiplicity() * c;
  }
  double acc = 0.0;
  for (const auto& q : s.particles) acc += std::pow(std::abs(q.omega0), p);
  const double h2 = s.spec.spacing * s.spec.spacing;
  return std::exp(Mt * (p - 1.0) / p) * std::pow(s.multiplicity() * acc * h2, 1.0 / p);
}

/// Samples omega_1(t) on a grid by piecewise-linear remapping of the deformed
/// particle lattice: each lattice triangle is mapped to its current position,
/// the label is interpolated barycentrically and the value is e^{Mt} omega_0(label).
inline GridField2D remap_to_grid(const IntermediateState& s, const TorusDomain2D& domain, int n) {
  GridField2D grid(domain, n);
  if (s.empty()) return grid;
  const int cells = static_cast<int>(std::lround(1.0 / s.spec.spacing));
  const double amp = std::exp(s.strain.M * s.t);
  // Index first-quadrant lattice points per quadrant copy.
  const int copies = s.settings.symmetry == SymmetryMode::mirror_reduced ? 1 : 4;
  std::vector<std::vector<int>> index(static_cast<std::size_t>(copies),
                                      std::vector<int>(static_cast<std::size_t>(cells * cells), -1));
  for (std::size_t k = 0; k < s.particles.size(); ++k) {
    const auto& p = s.particles[k];
    index[p.quadrant][static_cast<std::size_t>(p.lattice_i * cells + p.lattice_j)] = static_cast<int>(k);
  }
  const double h = grid.spacing();
  const double L = domain.half_length;
  auto fill_triangle = [&](const std::array<Vec2, 3>& x, const std::array<Vec2, 3>& a) {
    const double lo2 = std::min({x[0].x2, x[1].x2, x[2].x2}), hi2 = std::max({x[0].x2, x[1].x2, x[2].x2});
    const double lo3 = std::min({x[0].x3, x[1].x3, x[2].x3}), hi3 = std::max({x[0].x3, x[1].x3, x[2].x3});
    const int i0 = std::max(0, static_cast<int>(std::ceil((lo2 + L) / h - 0.5)));
    const int i1 = std::min(n - 1, static_cast<int>(std::floor((hi2 + L) / h - 0.5)));
    const int j0 = std::max(0, static_cast<int>(std::ceil((lo3 + L) / h - 0.5)));
    const int j1 = std::min(n - 1, static_cast<int>(std::floor((hi3 + L) / h - 0.5)));
    const Vec2 e1 = x[1] - x[0], e2 = x[2] - x[0];
    const double det = e1.x2 * e2.x3 - e1.x3 * e2.x2;
    if (det == 0.0) return;
    for (int i = i0; i <= i1; ++i)
      for (int j = j0; j <= j1; ++j) {
        const Vec2 c = grid.cell_center(i, j) - x[0];
        const double l1 = (c.x2 * e2.x3 - c.x3 * e2.x2) / det;
        const double l2 = (e1.x2 * c.x3 - e1.x3 * c.x2) / det;
        const double l0 = 1.0 - l1 - l2;
        const double eps = -1e-12;
        if (l0 < eps || l1 < eps || l2 < eps) continue;
        // Points on a shared edge are claimed once.
        if (grid.at(i, j) != 0.0) continue;
        const Vec2 label = l0 * a[0] + l1 * a[1] + l2 * a[2];
        grid.at(i, j) = amp * s.spec.omega0(label);
      }
  };
  for (int q = 0; q < copies; ++q) {
    const auto& idx = index[static_cast<std::size_t>(q)];
    for (int i = 0; i + 1 < cells; ++i)
      for (int j = 0; j + 1 < cells; ++j) {
        const int v00 = idx[static_cast<std::size_t>(i * cells + j)];
        const int v10 = idx[static_cast<std::size_t>((i + 1) * cells + j)];
        const int v01 = idx[static_cast<std::size_t>(i * cells + j + 1)];
        const int v11 = idx[static_cast<std::size_t>((i + 1) * cells + j + 1)];
        if (v00 < 0 || v10 < 0 || v01 < 0 || v11 < 0) continue;
        const auto P = [&](int v) { return s.particles[static_cast<std::size_t>(v)]; };
        const int images = copies == 1 ? 4 : 1;
        for (int m = 0; m < images; ++m) {
          auto X = [&](int v) { return copies == 1 ? detail::mirror(P(v).position, m) : P(v).position; };
          auto A = [&](int v) { return copies == 1 ? detail::mirror(P(v).label, m) : P(v).label; };
          fill_triangle({X(v00), X(v10), X(v11)}, {A(v00), A(v10), A(v11)});
          fill_triangle({X(v00), X(v11), X(v01)}, {A(v00), A(v11), A(v01)});
        }
      }
  }
  return grid;
}

/// L^p norm of the remapped grid field (see remap_to_grid).
inline double grid_lp_norm(const IntermediateState& s, double p, const TorusDomain2D& domain = TorusDomain2D{2.5},
                           int n = 512) {
  return remap_to_grid(s, domain, n).lp_norm(p);
}

/// Adds four passive tracers around label a at a +- fd e2, a +- fd e3. Must be
/// called before the flow is evolved.
inline void seed_jacobian_tracers(IntermediateState& s, const Vec2& a, double fd_step) {
  require(s.t == 0.0, ErrorCode::InvalidArgument, "tracers must be seeded at t = 0");
  require(fd_step > 0.0, ErrorCode::InvalidArgument, "finite-difference step must be positive");
  JacobianProbe probe{a, fd_step, s.tracers.size()};
  s.tracers.push_back(a + Vec2{fd_step, 0.0});
  s.tracers.push_back(a - Vec2{fd_step, 0.0});
  s.tracers.push_back(a + Vec2{0.0, fd_step});
  s.tracers.push_back(a - Vec2{0.0, fd_step});
  s.probes.push_back(probe);
}

/// Centered-difference determinant of the numerical flow map at label a.
inline double flow_map_jacobian(const IntermediateState& s, const Vec2& a, double fd_step) {
  for (const auto& p : s.probes) {
    if (p.label == a && p.fd_step == fd_step) {
      const Vec2* x = &s.tracers[p.first_tracer];
      const Vec2 d2 = (1.0 / (2.0 * fd_step)) * (x[0] - x[1]);
      const Vec2 d3 = (1.0 / (2.0 * fd_step)) * (x[2] - x[3]);
      return d2.x2 * d3.x3 - d2.x3 * d3.x2;
    }
  }
  fail(ErrorCode::TracersNotSeeded, "no Jacobian tracers seeded at label (" + std::to_string(a.x2) +
                                        ", " + std::to_string(a.x3) + ")");
}

struct SupportBounds {
  double min_A2 = 0.0, max_A2 = 0.0;
  double min_A3 = 0.0, max_A3 = 0.0;
  bool empty = true;
};

/// Extrema of the current positions of particles labelled in [1,2]^2.
inline SupportBounds support_bounds(const IntermediateState& s) {
  SupportBounds b;
  b.min_A2 = b.min_A3 = std::numeric_limits<double>::infinity();
  b.max_A2 = b.max_A3 = -std::numeric_limits<double>::infinity();
  for (const auto& p : s.particles) {
    if (p.quadrant != 0) continue;
    b.empty = false;
    b.min_A2 = std::min(b.min_A2, p.position.x2);
    b.max_A2 = std::max(b.max_A2, p.position.x2);
    b.min_A3 = std::min(b.min_A3, p.position.x3);
    b.max_A3 = std::max(b.max_A3, p.position.x3);
  }
  if (b.empty) b = SupportBounds{};
  return b;
}

/// Largest mirror mismatch |reflect(x_q) - x_0| over lattice sites (full mode only).
inline double symmetry_mismatch(const IntermediateState& s) {
  if (s.settings.symmetry != SymmetryMode::full) return 0.0;
  double m = 0.0;
  for (std::size_t k = 0; k + 3 < s.particles.size(); k += 4) {
    const Vec2 ref = s.particles[k].position;
    for (int q = 1; q < 4; ++q)
      m = std::max(m, norm(detail::mirror(s.particles[k + static_cast<std::size_t>(q)].position, q) - ref));
  }
  return m;
}

/// delta = c (M+1)^-gamma.
inline double probe_radius(double M, double c = 0.1, double gamma = 1.0) {
  return c * std::pow(M + 1.0, -gamma);
}

/// Points in the disk of radius `radius`: the centre followed by a Halton(2,3)
/// sequence mapped area-uniformly.
inline std::vector<Vec2> disk_samples(double radius, int count) {
  auto halton = [](int i, int base) {
    double f = 1.0, r = 0.0;
    while (i > 0) {
      f /= base;
      r += f * (i % base);
      i /= base;
    }
    return r;
  };
  std::vector<Vec2> pts;
  if (count <= 0) return pts;
  pts.push_back({0.0, 0.0});
  for (int k = 1; k < count; ++k) {
    const double r = radius * std::sqrt(halton(k, 2));
    const double th = 2.0 * std::numbers::pi * halton(k, 3);
    pts.push_back({r * std::cos(th), r * std::sin(th)});
  }
  return pts;
}

/// max |grad u^I|_F over a deterministic sample of B_0(delta).
inline double gradient_probe(const IntermediateState& s, double delta, int sample_count = 64) {
  if (s.empty()) return 0.0;
  const auto src = source_blobs(s);
  for (std::size_t k = 0; k < src.size(); ++k)
    if (norm(src[k].position) < 3.0 * delta)
      fail(ErrorCode::SupportIntrudesProbeBall,
           "particle " + std::to_string(k) + " at distance " + std::to_string(norm(src[k].position)) +
               " is inside B_0(3 delta), 3 delta = " + std::to_string(3.0 * delta));
  const auto pts = disk_samples(delta, sample_count);
  const auto g = velocity_gradient_direct(src, pts, s.settings.domain, s.settings.kernel).gradient;
  double m = 0.0;
  for (const auto& x : g) m = std::max(m, frobenius(x));
  return m;
}

/// Empirical log-Lipschitz constant of u^I, normalized by ||omega_1(t)||_inf:
/// max over random pairs of |u(x) - u(x')| / (d (1 + log(3L/d))) / ||omega||_inf.
inline double log_lipschitz_ratio(const IntermediateState& s, int pairs, std::uint64_t seed,
                                  double box = 3.0) {
  if (s.empty()) return 0.0;
  std::mt19937_64 rng(seed);
  auto uniform = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  std::vector<Vec2> pts;
  std::vector<double> sep;
  for (int k = 0; k < pairs; ++k) {
    const Vec2 x{box * (2.0 * uniform() - 1.0), box * (2.0 * uniform() - 1.0)};
    const double d = std::pow(10.0, -6.0 + 6.0 * uniform());
    const double th = 2.0 * std::numbers::pi * uniform();
    pts.push_back(x);
    pts.push_back(x + Vec2{d * std::cos(th), d * std::sin(th)});
    sep.push_back(d);
  }
  const auto u = intermediate_velocity(s, pts);
  const double L = s.settings.domain.half_length;
  const double winf = lp_norm(s, std::numeric_limits<double>::infinity());
  double m = 0.0;
  for (int k = 0; k < pairs; ++k) {
    const double d = sep[static_cast<std::size_t>(k)];
    const double du = norm(u[2 * static_cast<std::size_t>(k)] - u[2 * static_cast<std::size_t>(k) + 1]);
    m = std::max(m, du / (d * (1.0 + std::log(3.0 * L / d))));
  }
  return m / winf;
}

}  // namespace vortexlab
