#pragma once

// Pseudo-spectral incompressible Euler on the periodic cube [-L, L)^3.
//
// Fields are stored as normalized Fourier coefficients (forward FFT / n^3)
// in FFTW's r2c layout, one array per velocity component. Products are
// formed on the n^3 grid and truncated with the 2/3 rule (|m_i| <= n/3 per
// axis), which removes all aliasing of quadratic terms. Time integration is
// classical RK4; coupled evolutions are advanced as one joint RK4 system so
// every equation sees the others at the same stage times.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "vortexlab/error.hpp"
#include "vortexlab/fft.hpp"
#include "vortexlab/parallel.hpp"
#include "vortexlab/rate_fit.hpp"
#include "vortexlab/vec.hpp"

namespace vortexlab {

using fft::Complex;

namespace detail {

inline std::shared_ptr<const fft::RealTransform> transform3d(int n) {
  static std::mutex m;
  static std::map<int, std::shared_ptr<const fft::RealTransform>> cache;
  std::lock_guard lock(m);
  auto& slot = cache[n];
  if (!slot) slot = std::make_shared<const fft::RealTransform>(3, n);
  return slot;
}

}  // namespace detail

/// Real 3-component vector field on the periodic cube of side 2L, sampled on
/// n^3 points x = -L + i h.
class SpectralField3D {
 public:
  SpectralField3D() : SpectralField3D(32, std::numbers::pi) {}

  SpectralField3D(int n, double half_length) : n_(n), half_length_(half_length) {
    require(n >= 4 && (n & (n - 1)) == 0, ErrorCode::InvalidArgument,
            "resolution must be a power of two >= 4, got " + std::to_string(n));
    require(half_length > 0.0 && std::isfinite(half_length), ErrorCode::InvalidArgument,
            "half-length must be positive");
    const std::size_t size = static_cast<std::size_t>(n) * n * (n / 2 + 1);
    for (auto& c : coeff_) c.assign(size, Complex{});
  }

  int n() const { return n_; }
  double half_length() const { return half_length_; }
  double spacing() const { return 2.0 * half_length_ / n_; }
  double volume() const { return std::pow(2.0 * half_length_, 3); }
  int half() const { return n_ / 2 + 1; }
  std::size_t size() const { return coeff_[0].size(); }
  /// Largest retained |m| per axis.
  int dealias_cutoff() const { return n_ / 3; }
  /// Physical wavenumber of one integer mode.
  double k_unit() const { return std::numbers::pi / half_length_; }

  std::vector<Complex>& component(int c) { return coeff_[c]; }
  const std::vector<Complex>& component(int c) const { return coeff_[c]; }

  std::size_t index(int i, int j, int l) const {
    return (static_cast<std::size_t>(i) * n_ + j) * half() + l;
  }

  /// Integer modes of a storage index triple.
  std::array<int, 3> modes(int i, int j, int l) const {
    return {fft::wavenumber(i, n_), fft::wavenumber(j, n_), l};
  }

  bool in_mask(int i, int j, int l) const {
    const auto m = modes(i, j, l);
    const int c = dealias_cutoff();
    return std::abs(m[0]) <= c && std::abs(m[1]) <= c && m[2] <= c;
  }

  /// Calls f(index, k, weight) for every stored mode; k is the physical
  /// wavevector and weight counts the mode and its conjugate (1 or 2).
  template <class F>
  void for_each_mode(F&& f) const {
    const double ku = k_unit();
    const int h = half();
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j)
        for (int l = 0; l < h; ++l) {
          const auto m = modes(i, j, l);
          const double w = (l == 0 || (l == n_ / 2)) ? 1.0 : 2.0;
          f(index(i, j, l), std::array<double, 3>{ku * m[0], ku * m[1], ku * m[2]}, w);
        }
  }

  bool same_grid(const SpectralField3D& o) const {
    return n_ == o.n_ && half_length_ == o.half_length_;
  }

  SpectralField3D& operator+=(const SpectralField3D& o) {
    check_grid(o);
    for (int c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < size(); ++k) coeff_[c][k] += o.coeff_[c][k];
    return *this;
  }
  SpectralField3D& operator-=(const SpectralField3D& o) {
    check_grid(o);
    for (int c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < size(); ++k) coeff_[c][k] -= o.coeff_[c][k];
    return *this;
  }
  SpectralField3D& operator*=(double s) {
    for (auto& c : coeff_)
      for (auto& v : c) v *= s;
    return *this;
  }
  /// this += s * o
  SpectralField3D& axpy(double s, const SpectralField3D& o) {
    check_grid(o);
    for (int c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < size(); ++k) coeff_[c][k] += s * o.coeff_[c][k];
    return *this;
  }
  friend SpectralField3D operator+(SpectralField3D a, const SpectralField3D& b) { return a += b; }
  friend SpectralField3D operator-(SpectralField3D a, const SpectralField3D& b) { return a -= b; }
  friend SpectralField3D operator*(double s, SpectralField3D a) { return a *= s; }

  bool is_zero() const {
    for (const auto& c : coeff_)
      for (const auto& v : c)
        if (v != Complex{}) return false;
    return true;
  }

 private:
  void check_grid(const SpectralField3D& o) const {
    require(same_grid(o), ErrorCode::InvalidArgument, "fields live on different grids");
  }

  int n_;
  double half_length_;
  std::array<std::vector<Complex>, 3> coeff_;
};

using GridVector3D = std::array<std::vector<double>, 3>;

/// Point values of the field, index (i n + j) n + l for x = -L + (i, j, l) h.
inline GridVector3D to_grid(const SpectralField3D& f) {
  const auto tr = detail::transform3d(f.n());
  GridVector3D out;
  for (int c = 0; c < 3; ++c) {
    out[c].resize(tr->real_size());
    tr->backward(f.component(c), out[c]);
  }
  return out;
}

inline SpectralField3D from_grid(int n, double half_length, const GridVector3D& g) {
  SpectralField3D f(n, half_length);
  const auto tr = detail::transform3d(n);
  const double scale = 1.0 / tr->real_size();
  for (int c = 0; c < 3; ++c) {
    require(g[c].size() == tr->real_size(), ErrorCode::InvalidArgument, "grid size mismatch");
    tr->forward(g[c], f.component(c));
    for (auto& v : f.component(c)) v *= scale;
  }
  return f;
}

/// Samples f(x) on the grid and transforms.
inline SpectralField3D sample_field(int n, double half_length,
                                    const std::function<Vec3(const Vec3&)>& f) {
  const double h = 2.0 * half_length / n;
  GridVector3D g;
  for (auto& c : g) c.resize(static_cast<std::size_t>(n) * n * n);
  std::size_t k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < n; ++l, ++k) {
        const Vec3 v = f({-half_length + i * h, -half_length + j * h, -half_length + l * h});
        require(std::isfinite(v.x1) && std::isfinite(v.x2) && std::isfinite(v.x3),
                ErrorCode::NonFiniteInput, "sampled field is not finite");
        g[0][k] = v.x1;
        g[1][k] = v.x2;
        g[2][k] = v.x3;
      }
  return from_grid(n, half_length, g);
}

/// Zeroes every coefficient outside the 2/3 mask.
inline SpectralField3D dealias(SpectralField3D f) {
  const int n = f.n(), h = f.half();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < h; ++l)
        if (!f.in_mask(i, j, l))
          for (int c = 0; c < 3; ++c) f.component(c)[f.index(i, j, l)] = Complex{};
  return f;
}

/// Leray projection: removes the component of each coefficient along k.
inline SpectralField3D project_divfree(SpectralField3D f) {
  auto& a = f.component(0);
  auto& b = f.component(1);
  auto& c = f.component(2);
  f.for_each_mode([&](std::size_t idx, const std::array<double, 3>& k, double) {
    const double k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
    if (k2 == 0.0) return;
    const Complex dot = (k[0] * a[idx] + k[1] * b[idx] + k[2] * c[idx]) / k2;
    a[idx] -= k[0] * dot;
    b[idx] -= k[1] * dot;
    c[idx] -= k[2] * dot;
  });
  return f;
}

/// max_k |k . u_k|.
inline double max_divergence(const SpectralField3D& f) {
  double worst = 0.0;
  f.for_each_mode([&](std::size_t idx, const std::array<double, 3>& k, double) {
    const Complex d = k[0] * f.component(0)[idx] + k[1] * f.component(1)[idx] +
                      k[2] * f.component(2)[idx];
    worst = std::max(worst, std::abs(d));
  });
  return worst;
}

/// sqrt(sum_k |u_k|^2), the coefficient l2 norm over the full (Hermitian) spectrum.
inline double coefficient_norm(const SpectralField3D& f) {
  double s = 0.0;
  f.for_each_mode([&](std::size_t idx, const std::array<double, 3>&, double w) {
    for (int c = 0; c < 3; ++c) s += w * std::norm(f.component(c)[idx]);
  });
  return std::sqrt(s);
}

inline SpectralField3D curl(const SpectralField3D& f) {
  SpectralField3D w(f.n(), f.half_length());
  const Complex I{0.0, 1.0};
  f.for_each_mode([&](std::size_t idx, const std::array<double, 3>& k, double) {
    const Complex a = f.component(0)[idx], b = f.component(1)[idx], c = f.component(2)[idx];
    w.component(0)[idx] = I * (k[1] * c - k[2] * b);
    w.component(1)[idx] = I * (k[2] * a - k[0] * c);
    w.component(2)[idx] = I * (k[0] * b - k[1] * a);
  });
  return w;
}

/// H^s norm with multiplier (1 + |k|^2)^{s/2}; s = 0 is the L^2 norm.
inline double sobolev_norm(const SpectralField3D& f, double s) {
  require(s >= 0.0, ErrorCode::InvalidArgument, "Sobolev index must be >= 0");
  double sum = 0.0;
  f.for_each_mode([&](std::size_t idx, const std::array<double, 3>& k, double w) {
    double a = 0.0;
    for (int c = 0; c < 3; ++c) a += std::norm(f.component(c)[idx]);
    if (a == 0.0) return;
    const double k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
    sum += w * std::pow(1.0 + k2, s) * a;
  });
  return std::sqrt(f.volume() * sum);
}

inline double l2_norm(const SpectralField3D& f) { return sobolev_norm(f, 0.0); }

inline double energy(const SpectralField3D& f) {
  const double n = l2_norm(f);
  return 0.5 * n * n;
}

/// Integral of u . curl u.
inline double helicity(const SpectralField3D& f) {
  const auto w = curl(f);
  double sum = 0.0;
  f.for_each_mode([&](std::size_t idx, const std::array<double, 3>&, double wt) {
    for (int c = 0; c < 3; ++c)
      sum += wt * std::real(f.component(c)[idx] * std::conj(w.component(c)[idx]));
  });
  return f.volume() * sum;
}

/// Largest pointwise Euclidean magnitude on the grid.
inline double max_norm(const SpectralField3D& f) {
  const auto g = to_grid(f);
  double worst = 0.0;
  for (std::size_t k = 0; k < g[0].size(); ++k)
    worst = std::max(worst, g[0][k] * g[0][k] + g[1][k] * g[1][k] + g[2][k] * g[2][k]);
  return std::sqrt(worst);
}

/// Fraction of energy in modes with max_i |m_i| above 2/3 of the dealias
/// cutoff; 0 for a zero field.
inline double tail_energy_fraction(const SpectralField3D& f) {
  const double edge = 2.0 / 3.0 * f.dealias_cutoff();
  const double ku = f.k_unit();
  double tail = 0.0, total = 0.0;
  f.for_each_mode([&](std::size_t idx, const std::array<double, 3>& k, double w) {
    double a = 0.0;
    for (int c = 0; c < 3; ++c) a += std::norm(f.component(c)[idx]);
    total += w * a;
    const double m = std::max({std::abs(k[0]), std::abs(k[1]), std::abs(k[2])}) / ku;
    if (m > edge + 1e-9) tail += w * a;
  });
  return total > 0.0 ? tail / total : 0.0;
}

/// Taylor-Green data (sin x cos y cos z, -cos x sin y cos z, 0) with x scaled
/// so that one period spans the box.
inline SpectralField3D taylor_green(int n = 32, double half_length = std::numbers::pi) {
  const double s = std::numbers::pi / half_length;
  return dealias(sample_field(n, half_length, [s](const Vec3& p) {
    const double x = s * p.x1, y = s * p.x2, z = s * p.x3;
    return Vec3{std::sin(x) * std::cos(y) * std::cos(z), -std::cos(x) * std::sin(y) * std::cos(z),
                0.0};
  }));
}

/// Divergence-free perturbation with modes outside the Taylor-Green shell.
inline SpectralField3D default_perturbation(int n = 32, double half_length = std::numbers::pi) {
  const double s = std::numbers::pi / half_length;
  return dealias(project_divfree(sample_field(n, half_length, [s](const Vec3& p) {
    const double x = s * p.x1, y = s * p.x2, z = s * p.x3;
    return Vec3{std::sin(2 * z + 0.3) + std::cos(y + 0.7), std::sin(x + 1.1) + std::cos(2 * z + 0.2),
                std::sin(y + 0.5) + std::cos(x + 1.3)};
  })));
}

namespace detail {

// Point values and all nine first derivatives, grad[3 i + j] = d_j f_i.
struct Expanded {
  GridVector3D value;
  std::array<std::vector<double>, 9> grad;
};

inline Expanded expand(const SpectralField3D& f) {
  const auto tr = detail::transform3d(f.n());
  Expanded e;
  e.value = to_grid(f);
  std::vector<Complex> tmp(f.size());
  const Complex I{0.0, 1.0};
  for (int c = 0; c < 3; ++c)
    for (int d = 0; d < 3; ++d) {
      const auto& src = f.component(c);
      f.for_each_mode([&](std::size_t idx, const std::array<double, 3>& k, double) {
        tmp[idx] = I * k[d] * src[idx];
      });
      auto& out = e.grad[3 * c + d];
      out.resize(tr->real_size());
      tr->backward(tmp, out);
    }
  return e;
}

// (a . grad) f, accumulated into out with weight s.
inline void add_advection(const GridVector3D& a, const Expanded& f, double s, GridVector3D& out) {
  const std::size_t n = a[0].size();
  for (int i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < n; ++k)
      out[i][k] += s * (a[0][k] * f.grad[3 * i][k] + a[1][k] * f.grad[3 * i + 1][k] +
                        a[2][k] * f.grad[3 * i + 2][k]);
}

inline GridVector3D zero_grid(std::size_t n) {
  GridVector3D g;
  for (auto& c : g) c.assign(n, 0.0);
  return g;
}

// -P D[g] for a grid-space nonlinear term g.
inline SpectralField3D finish_rhs(const SpectralField3D& like, const GridVector3D& g) {
  auto f = dealias(project_divfree(from_grid(like.n(), like.half_length(), g)));
  f *= -1.0;
  return f;
}

inline double max_speed(const GridVector3D& v) {
  double worst = 0.0;
  for (std::size_t k = 0; k < v[0].size(); ++k)
    worst = std::max(worst, v[0][k] * v[0][k] + v[1][k] * v[1][k] + v[2][k] * v[2][k]);
  return std::sqrt(worst);
}

using FieldTuple = std::vector<SpectralField3D>;

template <class Rhs>
FieldTuple rk4(const FieldTuple& y, double dt, Rhs&& rhs) {
  auto shifted = [&](const FieldTuple& k, double s) {
    FieldTuple out = y;
    for (std::size_t i = 0; i < y.size(); ++i) out[i].axpy(s, k[i]);
    return out;
  };
  const FieldTuple k1 = rhs(y);
  const FieldTuple k2 = rhs(shifted(k1, 0.5 * dt));
  const FieldTuple k3 = rhs(shifted(k2, 0.5 * dt));
  const FieldTuple k4 = rhs(shifted(k3, dt));
  FieldTuple out = y;
  for (std::size_t i = 0; i < y.size(); ++i) {
    out[i].axpy(dt / 6.0, k1[i]);
    out[i].axpy(dt / 3.0, k2[i]);
    out[i].axpy(dt / 3.0, k3[i]);
    out[i].axpy(dt / 6.0, k4[i]);
  }
  return out;
}

}  // namespace detail

/// -P D[(u . grad) u].
inline SpectralField3D euler_rhs(const SpectralField3D& u) {
  const auto e = detail::expand(u);
  auto g = detail::zero_grid(e.value[0].size());
  detail::add_advection(e.value, e, 1.0, g);
  return detail::finish_rhs(u, g);
}

/// -P D[base . grad p + p . grad base].
inline SpectralField3D linearized_rhs(const SpectralField3D& base, const SpectralField3D& p) {
  const auto eb = detail::expand(base);
  const auto ep = detail::expand(p);
  auto g = detail::zero_grid(eb.value[0].size());
  detail::add_advection(eb.value, ep, 1.0, g);
  detail::add_advection(ep.value, eb, 1.0, g);
  return detail::finish_rhs(base, g);
}

namespace detail {

// u . grad v - (grad v) . (u - v), with ((grad v) . w)_i = sum_j d_i v_j w_j.
inline GridVector3D modified_term(const Expanded& u, const Expanded& v) {
  auto g = zero_grid(u.value[0].size());
  add_advection(u.value, v, 1.0, g);
  const std::size_t n = g[0].size();
  for (int i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      double s = 0.0;
      for (int j = 0; j < 3; ++j) s += v.grad[3 * j + i][k] * (u.value[j][k] - v.value[j][k]);
      g[i][k] -= s;
    }
  return g;
}

}  // namespace detail

/// -P D[u . grad v - (grad v) . (u - v)].
inline SpectralField3D modified_rhs(const SpectralField3D& u, const SpectralField3D& v) {
  return detail::finish_rhs(u, detail::modified_term(detail::expand(u), detail::expand(v)));
}

struct EulerState {
  SpectralField3D u;
  double t = 0.0;
  // Largest tail energy fraction seen so far; the run is flagged once it
  // passes the tolerance.
  double tail_fraction = 0.0;
  bool resolution_lost = false;
};

struct EulerStepOptions {
  double cfl = 0.5;
  double tail_tolerance = 1e-6;
};

namespace detail {

inline void check_cfl(double dt, double speed, const SpectralField3D& f, double cfl) {
  const double c = dt * speed * f.n() / (2.0 * f.half_length());
  if (!(c <= cfl))
    fail(ErrorCode::CFLViolation, "dt*max|u|*N/(2L) = " + std::to_string(c) + " exceeds " +
                                      std::to_string(cfl));
}

inline void update_tail(EulerState& s, const EulerStepOptions& opts) {
  s.tail_fraction = std::max(s.tail_fraction, tail_energy_fraction(s.u));
  if (s.tail_fraction > opts.tail_tolerance) s.resolution_lost = true;
}

inline void check_sync(const EulerState& a, const EulerState& b, const char* what) {
  if (a.t != b.t || !a.u.same_grid(b.u))
    fail(ErrorCode::DesyncError, std::string(what) + ": states at t = " + std::to_string(a.t) +
                                     " and t = " + std::to_string(b.t) + " or on different grids");
}

}  // namespace detail

/// One RK4 step of the Euler equations.
inline void step_euler(EulerState& s, double dt, const EulerStepOptions& opts = {}) {
  require(dt > 0.0, ErrorCode::InvalidArgument, "dt must be positive");
  detail::check_cfl(dt, detail::max_speed(to_grid(s.u)), s.u, opts.cfl);
  auto y = detail::rk4({s.u}, dt, [](const detail::FieldTuple& f) {
    return detail::FieldTuple{euler_rhs(f[0])};
  });
  s.u = std::move(y[0]);
  s.t += dt;
  detail::update_tail(s, opts);
}

/// Advances the base flow and a linearized perturbation of it together.
inline void step_linearized(EulerState& base, EulerState& pert, double dt,
                            const EulerStepOptions& opts = {}) {
  detail::check_sync(base, pert, "linearized step");
  require(dt > 0.0, ErrorCode::InvalidArgument, "dt must be positive");
  detail::check_cfl(dt, detail::max_speed(to_grid(base.u)), base.u, opts.cfl);
  auto y = detail::rk4({base.u, pert.u}, dt, [](const detail::FieldTuple& f) {
    const auto eb = detail::expand(f[0]);
    const auto ep = detail::expand(f[1]);
    auto gb = detail::zero_grid(eb.value[0].size());
    auto gp = detail::zero_grid(eb.value[0].size());
    detail::add_advection(eb.value, eb, 1.0, gb);
    detail::add_advection(eb.value, ep, 1.0, gp);
    detail::add_advection(ep.value, eb, 1.0, gp);
    return detail::FieldTuple{detail::finish_rhs(f[0], gb), detail::finish_rhs(f[0], gp)};
  });
  base.u = std::move(y[0]);
  pert.u = std::move(y[1]);
  base.t += dt;
  pert.t += dt;
  detail::update_tail(base, opts);
  detail::update_tail(pert, opts);
}

/// Advances a flow u together with the modified state v driven by it.
inline void step_modified(EulerState& flow, EulerState& modified, double dt,
                          const EulerStepOptions& opts = {}) {
  detail::check_sync(flow, modified, "modified step");
  require(dt > 0.0, ErrorCode::InvalidArgument, "dt must be positive");
  detail::check_cfl(dt, detail::max_speed(to_grid(flow.u)), flow.u, opts.cfl);
  auto y = detail::rk4({flow.u, modified.u}, dt, [](const detail::FieldTuple& f) {
    const auto eu = detail::expand(f[0]);
    const auto ev = detail::expand(f[1]);
    auto gu = detail::zero_grid(eu.value[0].size());
    detail::add_advection(eu.value, eu, 1.0, gu);
    return detail::FieldTuple{detail::finish_rhs(f[0], gu),
                              detail::finish_rhs(f[0], detail::modified_term(eu, ev))};
  });
  flow.u = std::move(y[0]);
  modified.u = std::move(y[1]);
  flow.t += dt;
  modified.t += dt;
  detail::update_tail(flow, opts);
  detail::update_tail(modified, opts);
}

/// Base flow, perturbed flow, linearized perturbation and modified state
/// advanced in lockstep with a shared clock and step.
struct EulerRunTriple {
  double epsilon = 0.0;
  double dt = 0.0;
  double t = 0.0;
  EulerState base;
  EulerState perturbed;
  EulerState linearized;
  EulerState modified;

  bool resolution_lost() const {
    return base.resolution_lost || perturbed.resolution_lost || linearized.resolution_lost ||
           modified.resolution_lost;
  }
};

inline EulerRunTriple make_run(const SpectralField3D& base0, const SpectralField3D& pert0,
                               double epsilon, double dt) {
  require(base0.same_grid(pert0), ErrorCode::InvalidArgument, "fields live on different grids");
  require(std::isfinite(epsilon) && epsilon >= 0.0, ErrorCode::InvalidArgument,
          "epsilon must be finite and >= 0");
  require(dt > 0.0, ErrorCode::InvalidArgument, "dt must be positive");
  const auto b = dealias(project_divfree(base0));
  const auto p = epsilon * dealias(project_divfree(pert0));
  EulerRunTriple r;
  r.epsilon = epsilon;
  r.dt = dt;
  r.base.u = b;
  r.perturbed.u = b + p;
  r.linearized.u = p;
  r.modified.u = b;
  return r;
}

inline void step(EulerRunTriple& r, const EulerStepOptions& opts = {}) {
  for (const EulerState* s : {&r.base, &r.perturbed, &r.linearized, &r.modified})
    if (s->t != r.t) fail(ErrorCode::DesyncError, "run member clock differs from the run clock");
  const double speed = std::max(detail::max_speed(to_grid(r.base.u)),
                                detail::max_speed(to_grid(r.perturbed.u)));
  detail::check_cfl(r.dt, speed, r.base.u, opts.cfl);
  const detail::FieldTuple y0{r.base.u, r.perturbed.u, r.linearized.u, r.modified.u};
  auto y = detail::rk4(y0, r.dt, [](const detail::FieldTuple& f) {
    const auto eb = detail::expand(f[0]);
    const auto eu = detail::expand(f[1]);
    const auto ep = detail::expand(f[2]);
    const auto ev = detail::expand(f[3]);
    const std::size_t n = eb.value[0].size();
    auto gb = detail::zero_grid(n), gu = detail::zero_grid(n), gp = detail::zero_grid(n);
    detail::add_advection(eb.value, eb, 1.0, gb);
    detail::add_advection(eu.value, eu, 1.0, gu);
    detail::add_advection(eb.value, ep, 1.0, gp);
    detail::add_advection(ep.value, eb, 1.0, gp);
    return detail::FieldTuple{detail::finish_rhs(f[0], gb), detail::finish_rhs(f[0], gu),
                              detail::finish_rhs(f[0], gp),
                              detail::finish_rhs(f[0], detail::modified_term(eu, ev))};
  });
  r.t += r.dt;
  EulerState* members[] = {&r.base, &r.perturbed, &r.linearized, &r.modified};
  for (int i = 0; i < 4; ++i) {
    members[i]->u = std::move(y[i]);
    members[i]->t = r.t;
    detail::update_tail(*members[i], opts);
  }
}

/// Gap diagnostics of one run at its current time.
struct RunGaps {
  double vorticity_inf = 0.0;  // max_x |curl(u - base - lin)|
  double vorticity_hs = 0.0;   // same in H^{s-1}
  double modified_hs = 0.0;    // ||modified - base||_{H^s}
  double linear_l2 = 0.0;      // ||(u - base) - lin||_{L^2}
  double perturbation_l2 = 0.0;  // ||u - base||_{L^2}
};

inline RunGaps measure_gaps(const EulerRunTriple& r, double s) {
  RunGaps g;
  const auto du = r.perturbed.u - r.base.u;
  const auto d = du - r.linearized.u;
  const auto w = curl(d);
  g.vorticity_inf = max_norm(w);
  g.vorticity_hs = sobolev_norm(w, std::max(0.0, s - 1.0));
  g.modified_hs = sobolev_norm(r.modified.u - r.base.u, s);
  g.linear_l2 = l2_norm(d);
  g.perturbation_l2 = l2_norm(du);
  return g;
}

struct ScalingOptions {
  double dt = 0.005;
  int threads = 0;
  EulerStepOptions step;
};

/// One time sample of an epsilon run.
struct ScalingRow {
  double epsilon = 0.0;
  double t = 0.0;
  RunGaps gaps;
  double energy = 0.0;      // of the perturbed flow
  double base_hs = 0.0;     // ||base||_{H^s}
  double perturbed_hs = 0.0;
};

struct EpsilonRun {
  double epsilon = 0.0;
  RunGaps max_gaps;  // componentwise maxima over [0, T]
  double max_tail_fraction = 0.0;
  std::vector<ScalingRow> rows;
};

struct ScalingResult {
  std::vector<EpsilonRun> runs;
  RateFit vorticity_inf;  // slope of max_t ||omega - omega_lin||_inf against epsilon
  RateFit vorticity_hs;   // same gap in H^{s-1}
  RateFit modified_hs;    // slope of max_t ||modified - base||_{H^s}
  RateFit linear_l2;
  RateFit perturbation_l2;
  // The perturbation is zero: every gap vanishes and no slope is fitted.
  bool exact_zero = false;
  double horizon = 0.0;
  double dt = 0.0;
  int steps = 0;
};

/// Runs one triple to `horizon`, recording gaps after every step.
inline EpsilonRun run_epsilon(const SpectralField3D& base0, const SpectralField3D& pert0,
                              double epsilon, double horizon, double s,
                              const ScalingOptions& opts = {}) {
  require(horizon > 0.0, ErrorCode::InvalidArgument, "horizon must be positive");
  const int steps = std::max(1, static_cast<int>(std::ceil(horizon / opts.dt - 1e-9)));
  const double dt = horizon / steps;
  auto r = make_run(base0, pert0, epsilon, dt);
  EpsilonRun out;
  out.epsilon = epsilon;
  auto record = [&] {
    ScalingRow row;
    row.epsilon = epsilon;
    row.t = r.t;
    row.gaps = measure_gaps(r, s);
    row.energy = energy(r.perturbed.u);
    row.base_hs = sobolev_norm(r.base.u, s);
    row.perturbed_hs = sobolev_norm(r.perturbed.u, s);
    auto& m = out.max_gaps;
    m.vorticity_inf = std::max(m.vorticity_inf, row.gaps.vorticity_inf);
    m.vorticity_hs = std::max(m.vorticity_hs, row.gaps.vorticity_hs);
    m.modified_hs = std::max(m.modified_hs, row.gaps.modified_hs);
    m.linear_l2 = std::max(m.linear_l2, row.gaps.linear_l2);
    m.perturbation_l2 = std::max(m.perturbation_l2, row.gaps.perturbation_l2);
    out.rows.push_back(row);
  };
  record();
  for (int k = 0; k < steps; ++k) {
    step(r, opts.step);
    if (k == steps - 1) r.t = horizon;
    if (r.resolution_lost())
      fail(ErrorCode::ResolutionLoss, "epsilon = " + std::to_string(epsilon) +
                                          ": spectral tail above tolerance at t = " +
                                          std::to_string(r.t));
    record();
  }
  out.max_tail_fraction = std::max({r.base.tail_fraction, r.perturbed.tail_fraction,
                                    r.linearized.tail_fraction, r.modified.tail_fraction});
  return out;
}

/// Sweeps epsilon over a geometric list and fits log-log slopes of the
/// nonlinear-minus-linearized gap and the modified-minus-base gap.
inline ScalingResult epsilon_scaling_experiment(const SpectralField3D& base0,
                                                const SpectralField3D& pert0,
                                                const std::vector<double>& epsilons,
                                                double horizon, double s,
                                                const ScalingOptions& opts = {}) {
  require(epsilons.size() >= 3, ErrorCode::InvalidArgument, "need at least 3 epsilon values");
  for (double e : epsilons)
    require(e > 0.0 && std::isfinite(e), ErrorCode::InvalidArgument, "epsilon values must be > 0");
  const double q = epsilons[1] / epsilons[0];
  for (std::size_t i = 2; i < epsilons.size(); ++i)
    require(std::abs(epsilons[i] / epsilons[i - 1] - q) <= 1e-9 * std::abs(q),
            ErrorCode::InvalidArgument, "epsilon list is not geometric");
  require(s >= 0.0, ErrorCode::InvalidArgument, "Sobolev index must be >= 0");

  ScalingResult res;
  res.horizon = horizon;
  res.steps = std::max(1, static_cast<int>(std::ceil(horizon / opts.dt - 1e-9)));
  res.dt = horizon / res.steps;
  res.runs.resize(epsilons.size());
  parallel_tasks(epsilons.size(), opts.threads, [&](std::size_t i) {
    res.runs[i] = run_epsilon(base0, pert0, epsilons[i], horizon, s, opts);
  });

  res.exact_zero = dealias(project_divfree(pert0)).is_zero();
  if (res.exact_zero) return res;
  std::vector<double> e, g1, g1s, g2, lin, pert;
  for (const auto& r : res.runs) {
    e.push_back(r.epsilon);
    g1.push_back(r.max_gaps.vorticity_inf);
    g1s.push_back(r.max_gaps.vorticity_hs);
    g2.push_back(r.max_gaps.modified_hs);
    lin.push_back(r.max_gaps.linear_l2);
    pert.push_back(r.max_gaps.perturbation_l2);
  }
  res.vorticity_inf = fit_power_law(e, g1);
  res.vorticity_hs = fit_power_law(e, g1s);
  res.modified_hs = fit_power_law(e, g2);
  res.linear_l2 = fit_power_law(e, lin);
  res.perturbation_l2 = fit_power_law(e, pert);
  return res;
}

}  // namespace vortexlab
