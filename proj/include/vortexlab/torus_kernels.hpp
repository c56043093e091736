#pragma once

// Velocity and velocity-gradient of a 2D vorticity distribution on the
// periodic square [-L, L)^2, from two independent routes:
//
//   * direct: Gaussian vortex blobs summed over periodic images
//     |n2|, |n3| <= K (square shells);
//   * grid:   blobs deposited on a cell-centred grid, spectral Poisson solve,
//     high-order Lagrange interpolation back to the targets.
//
// Complex notation used below: z = x2 + i x3, and the conjugate velocity
// w = u2 - i u3. A point vortex of circulation G at z_b contributes
// w = G / (2 pi i (z - z_b)).

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "vortexlab/error.hpp"
#include "vortexlab/fft.hpp"
#include "vortexlab/parallel.hpp"
#include "vortexlab/vec.hpp"

namespace vortexlab {

struct TorusDomain2D {
  double half_length = 100.0;

  void validate() const {
    require(std::isfinite(half_length) && half_length > 0.0, ErrorCode::InvalidArgument,
            "torus half length must be positive, got " + std::to_string(half_length));
  }
  double period() const { return 2.0 * half_length; }

  double wrap(double x) const {
    const double p = period();
    double y = x - p * std::floor((x + half_length) / p);
    if (y >= half_length) y -= p;  // guards the rounding edge case
    if (y < -half_length) y = -half_length;
    return y;
  }
  Vec2 wrap(const Vec2& v) const { return {wrap(v.x2), wrap(v.x3)}; }

  bool contains(const Vec2& v) const {
    return v.x2 >= -half_length && v.x2 < half_length && v.x3 >= -half_length &&
           v.x3 < half_length;
  }
};

struct VortexBlob {
  Vec2 label;               // initial position
  Vec2 position;
  double circulation = 0.0;  // area-integrated vorticity
  double radius = 0.0;       // Gaussian core size sigma
};

enum class TailMode { truncate, pair_cancel };

// How image shells beyond the innermost ones are summed. Both compute the same
// finite sum over |n2|,|n3| <= K; `lattice_moments` expands the far shells in
// powers of the displacement using precomputed square-lattice sums, which is
// exact to round-off whenever the ensemble is small compared with the box.
enum class ImageSum { explicit_shells, lattice_moments };

struct KernelEvalOptions {
  int image_radius = 32;
  TailMode tail_mode = TailMode::pair_cancel;
  double target_tolerance = 1e-12;
  ImageSum image_sum = ImageSum::lattice_moments;
  int threads = 0;
  bool deterministic = false;  // single-threaded summation

  void validate() const {
    require(image_radius >= 1, ErrorCode::InvalidArgument, "image radius K must be >= 1");
    require(target_tolerance > 0.0, ErrorCode::InvalidArgument, "tolerance must be positive");
  }
  int worker_threads() const { return deterministic ? 1 : threads; }
};

struct VelocityField {
  std::vector<Vec2> velocity;
  bool empty_ensemble = false;
};

struct GradientField {
  std::vector<Grad2> gradient;
  bool empty_ensemble = false;
};

struct VelocityAndGradient {
  std::vector<Vec2> velocity;
  std::vector<Grad2> gradient;
  bool empty_ensemble = false;
};

namespace detail {

using cplx = std::complex<double>;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
// exp(-37) < 1e-16: beyond this the Gaussian core no longer changes the kernel.
inline constexpr double kCoreCutoff = 37.0;

/// Velocity induced at displacement d by a Gaussian blob (unit circulation).
inline Vec2 blob_kernel(const Vec2& d, double inv_two_sigma2) {
  const double r2 = norm2(d);
  if (r2 == 0.0) return {};
  const double x = r2 * inv_two_sigma2;
  const double q = x > kCoreCutoff ? 1.0 : -std::expm1(-x);
  const double f = q / (kTwoPi * r2);
  return {-d.x3 * f, d.x2 * f};
}

/// Gradient of blob_kernel. With g(s) = (1 - e^{-s/2s^2}) / (2 pi s), s = |d|^2,
/// u = g (-d3, d2) so the entries are combinations of g and g'.
inline Grad2 blob_kernel_gradient(const Vec2& d, double inv_two_sigma2) {
  const double s = norm2(d);
  const double x = s * inv_two_sigma2;
  double g, gp;
  if (x < 1e-3) {
    // series in x; avoids the cancellation in x e^{-x} - (1 - e^{-x})
    const double q_over_x = 1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0;
    g = q_over_x * inv_two_sigma2 / kTwoPi;
    const double c = -0.5 + x / 3.0 - x * x / 8.0 + x * x * x / 30.0;
    gp = c * inv_two_sigma2 * inv_two_sigma2 / kTwoPi;
  } else if (x > kCoreCutoff) {
    g = 1.0 / (kTwoPi * s);
    gp = -1.0 / (kTwoPi * s * s);
  } else {
    const double e = std::exp(-x);
    const double q = -std::expm1(-x);
    g = q / (kTwoPi * s);
    gp = (x * e - q) / (kTwoPi * s * s);
  }
  Grad2 out;
  const double c = 2.0 * d.x2 * d.x3 * gp;
  out.d2u2 = -c;
  out.d3u3 = c;
  out.d3u2 = -(g + 2.0 * d.x3 * d.x3 * gp);
  out.d2u3 = g + 2.0 * d.x2 * d.x2 * gp;
  return out;
}

/// sigma_{4j} = sum over K0 < max(|n2|,|n3|) <= K of n^{-4j}, n = n2 + i n3.
/// Only powers divisible by four survive on the square lattice, and those sums
/// are real. Summed from the outermost shell inwards.
inline std::vector<double> compute_lattice_sums(int inner, int outer, int terms) {
  std::vector<long double> acc(static_cast<std::size_t>(terms), 0.0L);
  // One representative per orbit of multiplication by i: n2 > 0, n3 >= 0.
  for (int shell = outer; shell > inner; --shell) {
    std::vector<long double> shell_acc(static_cast<std::size_t>(terms), 0.0L);
    auto add = [&](int a, int b) {
      const std::complex<long double> n(a, b);
      const std::complex<long double> n4 = 1.0L / ((n * n) * (n * n));
      std::complex<long double> p = n4;
      for (int j = 0; j < terms; ++j) {
        shell_acc[static_cast<std::size_t>(j)] += 4.0L * p.real();
        p *= n4;
      }
    };
    for (int b = 0; b < shell; ++b) add(shell, b);       // right edge, n3 in [0, shell)
    for (int a = 1; a <= shell; ++a) add(a, shell);      // top edge, n2 in (0, shell]
    for (int j = 0; j < terms; ++j) acc[static_cast<std::size_t>(j)] += shell_acc[static_cast<std::size_t>(j)];
  }
  return {acc.begin(), acc.end()};
}

inline std::shared_ptr<const std::vector<double>> lattice_sums(int inner, int outer, int terms) {
  static std::mutex mutex;
  static std::map<std::tuple<int, int, int>, std::shared_ptr<const std::vector<double>>> cache;
  const auto key = std::make_tuple(inner, outer, terms);
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  auto sums = std::make_shared<const std::vector<double>>(compute_lattice_sums(inner, outer, terms));
  std::lock_guard lock(mutex);
  return cache.emplace(key, std::move(sums)).first->second;
}

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Far-shell contribution as a polynomial in the scaled target coordinate
/// zeta = z / 2L: F(zeta) = sum_b G_b sum_j sigma_{4j} (zeta - zeta_b)^{4j-1}.
struct FarShells {
  int inner = 0;                 // explicit shells are 0..inner
  std::vector<cplx> coeff;       // F(zeta) = sum_r coeff[r] zeta^r
  double scale = 0.0;            // 1 / 2L
  bool active = false;

  cplx conj_velocity(cplx zeta) const {
    cplx f = 0.0;
    for (std::size_t r = coeff.size(); r-- > 0;) f = f * zeta + coeff[r];
    // w = -(1/2L) F / (2 pi i)
    return -scale * f / cplx(0.0, kTwoPi);
  }
  cplx conj_velocity_derivative(cplx zeta) const {
    cplx f = 0.0;
    for (std::size_t r = coeff.size(); r-- > 1;) f = f * zeta + static_cast<double>(r) * coeff[r];
    return -scale * scale * f / cplx(0.0, kTwoPi);
  }
};

inline FarShells build_far_shells(std::span<const VortexBlob> blobs, std::span<const Vec2> targets,
                                  const TorusDomain2D& domain, const KernelEvalOptions& opts) {
  FarShells far;
  far.scale = 1.0 / domain.period();
  if (opts.image_sum == ImageSum::explicit_shells) {
    far.inner = opts.image_radius;
    return far;
  }
  double rho = 0.0;
  double max_sigma = 0.0;
  for (const auto& b : blobs) {
    rho = std::max(rho, norm(b.position));
    max_sigma = std::max(max_sigma, b.radius);
  }
  for (const auto& t : targets) rho = std::max(rho, norm(t));
  rho *= far.scale;
  // Convergence ratio 2 rho / (inner + 1) <= 1/2.
  int inner = std::max(0, static_cast<int>(std::ceil(4.0 * rho)) - 1);
  // Far images must see point vortices: the core must be negligible at distance ~L.
  if (max_sigma > domain.half_length / 8.0) inner = opts.image_radius;
  if (inner >= opts.image_radius) {
    far.inner = opts.image_radius;
    return far;
  }
  far.inner = inner;
  const double q = std::max(2.0 * rho / (inner + 1), 1e-300);
  int terms = q < 1.0 ? static_cast<int>(std::ceil(std::log(1e-18) / (4.0 * std::log(q)))) : 40;
  terms = std::clamp(terms, 1, 40);
  const auto sums = lattice_sums(inner, opts.image_radius, terms);
  const int max_power = 4 * terms - 1;
  // Moments mu_q = sum_b G_b zeta_b^q.
  std::vector<cplx> mu(static_cast<std::size_t>(max_power) + 1, 0.0);
  for (const auto& b : blobs) {
    const cplx zb(b.position.x2 * far.scale, b.position.x3 * far.scale);
    cplx p = b.circulation;
    for (int k = 0; k <= max_power; ++k) {
      mu[static_cast<std::size_t>(k)] += p;
      p *= zb;
    }
  }
  far.coeff.assign(static_cast<std::size_t>(max_power) + 1, 0.0);
  for (int j = 1; j <= terms; ++j) {
    const int p = 4 * j - 1;
    const double sj = (*sums)[static_cast<std::size_t>(j - 1)];
    for (int r = 0; r <= p; ++r) {
      const int qexp = p - r;
      const double sign = (qexp % 2 == 0) ? 1.0 : -1.0;
      far.coeff[static_cast<std::size_t>(r)] +=
          sj * binomial(p, r) * sign * mu[static_cast<std::size_t>(qexp)];
    }
  }
  far.active = true;
  return far;
}

struct BlobArrays {
  std::vector<double> x2, x3, gamma, inv_two_sigma2;
  explicit BlobArrays(std::span<const VortexBlob> blobs) {
    const std::size_t n = blobs.size();
    x2.resize(n); x3.resize(n); gamma.resize(n); inv_two_sigma2.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      x2[i] = blobs[i].position.x2;
      x3[i] = blobs[i].position.x3;
      gamma[i] = blobs[i].circulation;
      inv_two_sigma2[i] = 1.0 / (2.0 * blobs[i].radius * blobs[i].radius);
    }
  }
  std::size_t size() const { return x2.size(); }
};

inline void validate_inputs(std::span<const VortexBlob> blobs, std::span<const Vec2> targets,
                            const TorusDomain2D& domain) {
  domain.validate();
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    const auto& b = blobs[i];
    if (!std::isfinite(b.position.x2) || !std::isfinite(b.position.x3) ||
        !std::isfinite(b.circulation) || !std::isfinite(b.radius))
      fail(ErrorCode::NonFiniteInput, "blob " + std::to_string(i) + " has a non-finite field");
    require(b.radius > 0.0, ErrorCode::InvalidArgument,
            "blob " + std::to_string(i) + " has non-positive radius");
    require(domain.contains(b.position), ErrorCode::InvalidArgument,
            "blob " + std::to_string(i) + " lies outside the torus");
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!std::isfinite(targets[i].x2) || !std::isfinite(targets[i].x3))
      fail(ErrorCode::NonFiniteInput, "target " + std::to_string(i) + " is not finite");
    require(domain.contains(targets[i]), ErrorCode::InvalidArgument,
            "target " + std::to_string(i) + " lies outside the torus");
  }
}

// Image offsets of the explicit shells in summation order. For pair_cancel
// the list holds one representative per +-n pair (outermost shells first)
// and the caller adds both members before accumulating; n = 0 comes last.
inline std::vector<std::pair<int, int>> explicit_offsets(int radius, TailMode mode) {
  std::vector<std::pair<int, int>> out;
  if (mode == TailMode::truncate) {
    for (int a = -radius; a <= radius; ++a)
      for (int b = -radius; b <= radius; ++b) out.emplace_back(a, b);
    return out;
  }
  for (int shell = radius; shell >= 1; --shell) {
    for (int a = -shell; a <= shell; ++a)
      for (int b = -shell; b <= shell; ++b) {
        if (std::max(std::abs(a), std::abs(b)) != shell) continue;
        if (a > 0 || (a == 0 && b > 0)) out.emplace_back(a, b);  // half lattice
      }
  }
  out.emplace_back(0, 0);
  return out;
}

template <bool WithVelocity, bool WithGradient>
void evaluate_direct(std::span<const VortexBlob> blobs, std::span<const Vec2> targets,
                     const TorusDomain2D& domain, const KernelEvalOptions& opts,
                     std::vector<Vec2>* velocity, std::vector<Grad2>* gradient) {
  const BlobArrays arr(blobs);
  const FarShells far = build_far_shells(blobs, targets, domain, opts);
  const auto offsets = explicit_offsets(far.inner, opts.tail_mode);
  const bool paired = opts.tail_mode == TailMode::pair_cancel;
  const double period = domain.period();
  if constexpr (WithVelocity) velocity->assign(targets.size(), Vec2{});
  if constexpr (WithGradient) gradient->assign(targets.size(), Grad2{});

  parallel_for(targets.size(), opts.worker_threads(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      const Vec2 x = targets[t];
      Vec2 u{};
      Grad2 g{};
      for (const auto& [a, b] : offsets) {
        const Vec2 shift{period * a, period * b};
        const bool pair = paired && (a != 0 || b != 0);
        Vec2 u_img{};
        Grad2 g_img{};
        for (std::size_t k = 0; k < arr.size(); ++k) {
          const Vec2 d{x.x2 - arr.x2[k], x.x3 - arr.x3[k]};
          const double gam = arr.gamma[k];
          if constexpr (WithVelocity) {
            Vec2 v = blob_kernel(d - shift, arr.inv_two_sigma2[k]);
            if (pair) v += blob_kernel(d + shift, arr.inv_two_sigma2[k]);
            u_img += gam * v;
          }
          if constexpr (WithGradient) {
            Grad2 h = blob_kernel_gradient(d - shift, arr.inv_two_sigma2[k]);
            if (pair) h += blob_kernel_gradient(d + shift, arr.inv_two_sigma2[k]);
            g_img.d2u2 += gam * h.d2u2;
            g_img.d3u2 += gam * h.d3u2;
            g_img.d2u3 += gam * h.d2u3;
            g_img.d3u3 += gam * h.d3u3;
          }
        }
        u += u_img;
        g += g_img;
      }
      if (far.active) {
        const cplx zeta(x.x2 * far.scale, x.x3 * far.scale);
        if constexpr (WithVelocity) {
          const cplx w = far.conj_velocity(zeta);
          u += Vec2{w.real(), -w.imag()};
        }
        if constexpr (WithGradient) {
          const cplx wp = far.conj_velocity_derivative(zeta);
          g.d2u2 += wp.real();
          g.d3u3 -= wp.real();
          g.d3u2 -= wp.imag();
          g.d2u3 -= wp.imag();
        }
      }
      if constexpr (WithVelocity) (*velocity)[t] = u;
      if constexpr (WithGradient) {
        // d2u2 = -d3u3 holds term by term; pin it against accumulated rounding.
        const double diag = 0.5 * (g.d2u2 - g.d3u3);
        g.d2u2 = diag;
        g.d3u3 = -diag;
        (*gradient)[t] = g;
      }
    }
  });
}

inline void check_gradient_separation(std::span<const VortexBlob> blobs,
                                      std::span<const Vec2> targets, const TorusDomain2D& domain) {
  for (std::size_t t = 0; t < targets.size(); ++t) {
    for (std::size_t k = 0; k < blobs.size(); ++k) {
      const Vec2 d = domain.wrap(targets[t] - blobs[k].position);
      const double limit = 3.0 * blobs[k].radius;
      if (norm2(d) <= limit * limit)
        fail(ErrorCode::TargetTooCloseToSupport,
             "target " + std::to_string(t) + " is within 3 sigma of blob " + std::to_string(k) +
                 " (distance " + std::to_string(norm(d)) + ", 3 sigma = " + std::to_string(limit) +
                 ")");
    }
  }
}

}  // namespace detail

/// Velocity at `targets` induced by `blobs`, summed over periodic images
/// |n2|, |n3| <= K.
inline VelocityField biot_savart_direct(std::span<const VortexBlob> blobs,
                                        std::span<const Vec2> targets,
                                        const TorusDomain2D& domain,
                                        const KernelEvalOptions& opts = {}) {
  opts.validate();
  detail::validate_inputs(blobs, targets, domain);
  VelocityField out;
  if (blobs.empty()) {
    out.velocity.assign(targets.size(), Vec2{});
    out.empty_ensemble = true;
    return out;
  }
  detail::evaluate_direct<true, false>(blobs, targets, domain, opts, &out.velocity, nullptr);
  return out;
}

/// Velocity gradient [[d2u2, d3u2], [d2u3, d3u3]] at targets separated from
/// every blob by more than three core radii.
inline GradientField velocity_gradient_direct(std::span<const VortexBlob> blobs,
                                              std::span<const Vec2> targets,
                                              const TorusDomain2D& domain,
                                              const KernelEvalOptions& opts = {}) {
  opts.validate();
  detail::validate_inputs(blobs, targets, domain);
  GradientField out;
  if (blobs.empty()) {
    out.gradient.assign(targets.size(), Grad2{});
    out.empty_ensemble = true;
    return out;
  }
  detail::check_gradient_separation(blobs, targets, domain);
  detail::evaluate_direct<false, true>(blobs, targets, domain, opts, nullptr, &out.gradient);
  return out;
}

/// Both quantities in one pass; same preconditions as velocity_gradient_direct.
inline VelocityAndGradient velocity_and_gradient_direct(std::span<const VortexBlob> blobs,
                                                        std::span<const Vec2> targets,
                                                        const TorusDomain2D& domain,
                                                        const KernelEvalOptions& opts = {}) {
  opts.validate();
  detail::validate_inputs(blobs, targets, domain);
  VelocityAndGradient out;
  if (blobs.empty()) {
    out.velocity.assign(targets.size(), Vec2{});
    out.gradient.assign(targets.size(), Grad2{});
    out.empty_ensemble = true;
    return out;
  }
  detail::check_gradient_separation(blobs, targets, domain);
  detail::evaluate_direct<true, true>(blobs, targets, domain, opts, &out.velocity, &out.gradient);
  return out;
}

// ---------------------------------------------------------------------------
// Grid backend

/// Cell-centred samples on an n x n grid over the torus; sample (i2, i3)
/// sits at (-L + (i2 + 1/2) h, -L + (i3 + 1/2) h).
struct GridField2D {
  TorusDomain2D domain;
  int n = 0;
  std::vector<double> samples;

  GridField2D() = default;
  GridField2D(TorusDomain2D d, int resolution) : domain(d), n(resolution) {
    domain.validate();
    require(n >= 4 && (n & (n - 1)) == 0, ErrorCode::InvalidArgument,
            "grid resolution must be a power of two >= 4, got " + std::to_string(n));
    samples.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0.0);
  }

  double spacing() const { return domain.period() / n; }
  double cell_area() const { return spacing() * spacing(); }
  Vec2 cell_center(int i2, int i3) const {
    const double h = spacing();
    return {-domain.half_length + (i2 + 0.5) * h, -domain.half_length + (i3 + 0.5) * h};
  }
  double& at(int i2, int i3) {
    return samples[static_cast<std::size_t>(i2) * static_cast<std::size_t>(n) + static_cast<std::size_t>(i3)];
  }
  double at(int i2, int i3) const {
    return samples[static_cast<std::size_t>(i2) * static_cast<std::size_t>(n) + static_cast<std::size_t>(i3)];
  }
  double integral() const {
    double s = 0.0;
    for (double v : samples) s += v;
    return s * cell_area();
  }
  double mean() const { return integral() / (domain.period() * domain.period()); }
  double max_abs() const {
    double m = 0.0;
    for (double v : samples) m = std::max(m, std::abs(v));
    return m;
  }
  /// Discrete L^p norm (p = infinity allowed).
  double lp_norm(double p) const {
    if (std::isinf(p)) return max_abs();
    double s = 0.0;
    for (double v : samples) s += std::pow(std::abs(v), p);
    return std::pow(s * cell_area(), 1.0 / p);
  }
};

namespace detail {

inline const fft::RealTransform& transform_2d(int n) {
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<fft::RealTransform>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<fft::RealTransform>(2, n);
  return *slot;
}

}  // namespace detail

struct GridVelocity {
  GridField2D u2;
  GridField2D u3;
};

/// Spectral solve u_hat = i k_perp w_hat / |k|^2 with k_perp = (k3, -k2) and the
/// mean mode removed. The vorticity must have zero mean.
inline GridVelocity grid_poisson_velocity(const GridField2D& vorticity) {
  const int n = vorticity.n;
  double total_abs = 0.0;
  for (double v : vorticity.samples) total_abs += std::abs(v);
  const double mean = vorticity.mean();
  if (std::abs(vorticity.integral()) > 1e-10 * total_abs * vorticity.cell_area())
    fail(ErrorCode::NonzeroMeanVorticity, "vorticity mean is " + std::to_string(mean));
  const auto& tr = detail::transform_2d(n);
  std::vector<fft::Complex> w_hat(tr.spectral_size()), a_hat(tr.spectral_size()), b_hat(tr.spectral_size());
  tr.forward(vorticity.samples, w_hat);
  const double k0 = std::numbers::pi / vorticity.domain.half_length;
  const int nh = n / 2 + 1;
  const double norm_factor = 1.0 / (static_cast<double>(n) * n);
  for (int i = 0; i < n; ++i) {
    const int m2 = fft::wavenumber(i, n);
    for (int l = 0; l < nh; ++l) {
      const std::size_t idx = static_cast<std::size_t>(i) * nh + l;
      const int m3 = l;
      if ((m2 == 0 && m3 == 0) || i == n / 2 || l == n / 2) {
        a_hat[idx] = 0.0;
        b_hat[idx] = 0.0;
        continue;
      }
      const double k2 = k0 * m2, k3 = k0 * m3;
      const fft::Complex psi = w_hat[idx] * (norm_factor / (k2 * k2 + k3 * k3));
      a_hat[idx] = fft::Complex(0.0, k3) * psi;
      b_hat[idx] = fft::Complex(0.0, -k2) * psi;
    }
  }
  GridVelocity out{GridField2D(vorticity.domain, n), GridField2D(vorticity.domain, n)};
  tr.backward(a_hat, out.u2.samples);
  tr.backward(b_hat, out.u3.samples);
  return out;
}

/// Spectral divergence of a grid velocity, relative to its spectral size:
/// max_k |k . u_hat_k| / max_k |k| |u_hat_k|.
inline double spectral_divergence(const GridVelocity& v) {
  const int n = v.u2.n;
  const auto& tr = detail::transform_2d(n);
  std::vector<fft::Complex> a(tr.spectral_size()), b(tr.spectral_size());
  tr.forward(v.u2.samples, a);
  tr.forward(v.u3.samples, b);
  const int nh = n / 2 + 1;
  double num = 0.0, den = 0.0;
  for (int i = 0; i < n; ++i) {
    const double k2 = fft::wavenumber(i, n);
    for (int l = 0; l < nh; ++l) {
      const std::size_t idx = static_cast<std::size_t>(i) * nh + l;
      const double k3 = l;
      num = std::max(num, std::abs(k2 * a[idx] + k3 * b[idx]));
      den = std::max(den, std::hypot(k2, k3) * std::hypot(std::abs(a[idx]), std::abs(b[idx])));
    }
  }
  return den > 0.0 ? num / den : 0.0;
}

struct DepositReport {
  double min_sigma_over_h = std::numeric_limits<double>::infinity();
  // Some blob is narrower than two grid spacings; the deposit is still
  // circulation-conserving but no longer a faithful sample of the blob.
  bool under_resolved = false;
};

/// Samples every Gaussian blob on the grid. Each blob's discrete weights are
/// renormalized so that sum(cell values) * cell area equals its circulation.
inline GridField2D deposit(std::span<const VortexBlob> blobs, const TorusDomain2D& domain, int n,
                           DepositReport* report = nullptr) {
  GridField2D grid(domain, n);
  DepositReport rep;
  const double h = grid.spacing();
  const double L = domain.half_length;
  for (const auto& b : blobs) {
    const double sigma = b.radius;
    rep.min_sigma_over_h = std::min(rep.min_sigma_over_h, sigma / h);
    if (sigma < 2.0 * h) rep.under_resolved = true;
    const int reach = std::min(n / 2, static_cast<int>(std::ceil(8.5 * sigma / h)) + 1);
    const int c2 = static_cast<int>(std::floor((b.position.x2 + L) / h));
    const int c3 = static_cast<int>(std::floor((b.position.x3 + L) / h));
    const int width = std::min(n, 2 * reach + 1);
    std::vector<double> w2(static_cast<std::size_t>(width)), w3(static_cast<std::size_t>(width));
    std::vector<int> i2s(static_cast<std::size_t>(width)), i3s(static_cast<std::size_t>(width));
    double s2 = 0.0, s3 = 0.0;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int k = 0; k < width; ++k) {
      const int i2 = ((c2 - reach + k) % n + n) % n;
      const int i3 = ((c3 - reach + k) % n + n) % n;
      const Vec2 c = grid.cell_center(i2, i3);
      const double d2 = domain.wrap(c.x2 - b.position.x2);
      const double d3 = domain.wrap(c.x3 - b.position.x3);
      w2[static_cast<std::size_t>(k)] = std::exp(-d2 * d2 * inv);
      w3[static_cast<std::size_t>(k)] = std::exp(-d3 * d3 * inv);
      i2s[static_cast<std::size_t>(k)] = i2;
      i3s[static_cast<std::size_t>(k)] = i3;
      s2 += w2[static_cast<std::size_t>(k)];
      s3 += w3[static_cast<std::size_t>(k)];
    }
    const double amp = b.circulation / (s2 * s3 * h * h);
    for (int a = 0; a < width; ++a) {
      const double wa = amp * w2[static_cast<std::size_t>(a)];
      double* row = &grid.at(i2s[static_cast<std::size_t>(a)], 0);
      for (int c = 0; c < width; ++c) row[i3s[static_cast<std::size_t>(c)]] += wa * w3[static_cast<std::size_t>(c)];
    }
  }
  if (report) *report = rep;
  return grid;
}

/// Tensor-product Lagrange interpolation with `points` nodes per axis
/// (4 gives fourth-order accuracy, 6 gives sixth-order).
inline std::vector<double> interpolate(const GridField2D& field, std::span<const Vec2> points,
                                       int nodes = 4) {
  require(nodes >= 2 && nodes % 2 == 0 && nodes <= 8, ErrorCode::InvalidArgument,
          "interpolation needs an even node count in [2, 8]");
  const int n = field.n;
  const double h = field.spacing();
  const double L = field.domain.half_length;
  const int back = nodes / 2 - 1;
  std::vector<double> out(points.size());
  std::array<double, 8> wa{}, wb{};
  auto weights = [&](double theta, std::array<double, 8>& w) {
    for (int j = 0; j < nodes; ++j) {
      const double xj = j - back;
      double num = 1.0, den = 1.0;
      for (int m = 0; m < nodes; ++m) {
        if (m == j) continue;
        const double xm = m - back;
        num *= theta - xm;
        den *= xj - xm;
      }
      w[static_cast<std::size_t>(j)] = num / den;
    }
  };
  for (std::size_t p = 0; p < points.size(); ++p) {
    const double xi2 = (field.domain.wrap(points[p].x2) + L) / h - 0.5;
    const double xi3 = (field.domain.wrap(points[p].x3) + L) / h - 0.5;
    const double f2 = std::floor(xi2), f3 = std::floor(xi3);
    weights(xi2 - f2, wa);
    weights(xi3 - f3, wb);
    const int b2 = static_cast<int>(f2) - back, b3 = static_cast<int>(f3) - back;
    double acc = 0.0;
    for (int a = 0; a < nodes; ++a) {
      const int i2 = ((b2 + a) % n + n) % n;
      double row = 0.0;
      for (int c = 0; c < nodes; ++c) {
        const int i3 = ((b3 + c) % n + n) % n;
        row += wb[static_cast<std::size_t>(c)] * field.at(i2, i3);
      }
      acc += wa[static_cast<std::size_t>(a)] * row;
    }
    out[p] = acc;
  }
  return out;
}

struct GridBackendOptions {
  TorusDomain2D domain{4.0};
  int resolution = 512;
  int interpolation_nodes = 4;
};

/// Velocity at targets through deposit -> spectral Poisson -> interpolation.
inline std::vector<Vec2> grid_velocity_at(std::span<const VortexBlob> blobs,
                                          std::span<const Vec2> targets,
                                          const GridBackendOptions& opts,
                                          DepositReport* report = nullptr) {
  if (blobs.empty()) return std::vector<Vec2>(targets.size());
  const GridField2D w = deposit(blobs, opts.domain, opts.resolution, report);
  const GridVelocity v = grid_poisson_velocity(w);
  const auto a = interpolate(v.u2, targets, opts.interpolation_nodes);
  const auto b = interpolate(v.u3, targets, opts.interpolation_nodes);
  std::vector<Vec2> out(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) out[i] = {a[i], b[i]};
  return out;
}

}  // namespace vortexlab
