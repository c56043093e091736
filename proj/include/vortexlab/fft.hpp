#pragma once

// Thin RAII layer over FFTW's real-to-complex transforms. Plans are created
// with FFTW_ESTIMATE so that the chosen algorithm (and hence the rounding) is
// the same on every run. Plan creation is serialized; execution uses the
// new-array interface and is safe from several threads.

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

namespace vortexlab::fft {

using Complex = std::complex<double>;

inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

template <class T>
struct FftwFree {
  void operator()(T* p) const { fftw_free(p); }
};

template <class T>
using AlignedBuffer = std::unique_ptr<T[], FftwFree<T>>;

template <class T>
AlignedBuffer<T> allocate(std::size_t count) {
  return AlignedBuffer<T>(static_cast<T*>(fftw_malloc(sizeof(T) * count)));
}

struct PlanDeleter {
  void operator()(fftw_plan p) const {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(p);
  }
};
using Plan = std::unique_ptr<std::remove_pointer_t<fftw_plan>, PlanDeleter>;

/// Unnormalized forward/backward real transforms on a d-dimensional cube of
/// side n (d = 2 or 3). Spectral arrays use FFTW's half-complex layout with
/// the last dimension of length n/2 + 1.
class RealTransform {
 public:
  RealTransform(int dims, int n) : dims_(dims), n_(n) {
    std::size_t real = 1, spec = 1;
    for (int d = 0; d < dims - 1; ++d) { real *= n; spec *= n; }
    real *= n;
    spec *= (n / 2 + 1);
    real_size_ = real;
    spectral_size_ = spec;
    auto in = allocate<double>(real_size_);
    auto out = allocate<fftw_complex>(spectral_size_);
    std::lock_guard lock(planner_mutex());
    if (dims == 2) {
      forward_.reset(fftw_plan_dft_r2c_2d(n, n, in.get(), out.get(), FFTW_ESTIMATE));
      backward_.reset(fftw_plan_dft_c2r_2d(n, n, out.get(), in.get(), FFTW_ESTIMATE));
    } else {
      forward_.reset(fftw_plan_dft_r2c_3d(n, n, n, in.get(), out.get(), FFTW_ESTIMATE));
      backward_.reset(fftw_plan_dft_c2r_3d(n, n, n, out.get(), in.get(), FFTW_ESTIMATE));
    }
  }

  int dims() const { return dims_; }
  int n() const { return n_; }
  std::size_t real_size() const { return real_size_; }
  std::size_t spectral_size() const { return spectral_size_; }

  /// Unnormalized forward transform.
  void forward(std::span<const double> in, std::span<Complex> out) const {
    auto a = allocate<double>(real_size_);
    auto b = allocate<fftw_complex>(spectral_size_);
    std::copy(in.begin(), in.end(), a.get());
    fftw_execute_dft_r2c(forward_.get(), a.get(), b.get());
    auto* src = reinterpret_cast<const Complex*>(b.get());
    std::copy(src, src + spectral_size_, out.begin());
  }

  /// Unnormalized backward transform (c2r overwrites its input, so a copy is made).
  void backward(std::span<const Complex> in, std::span<double> out) const {
    auto a = allocate<fftw_complex>(spectral_size_);
    auto b = allocate<double>(real_size_);
    std::copy(in.begin(), in.end(), reinterpret_cast<Complex*>(a.get()));
    fftw_execute_dft_c2r(backward_.get(), a.get(), b.get());
    std::copy(b.get(), b.get() + real_size_, out.begin());
  }

 private:
  int dims_;
  int n_;
  std::size_t real_size_ = 0;
  std::size_t spectral_size_ = 0;
  Plan forward_;
  Plan backward_;
};

/// Signed integer wavenumber of FFT index i on a grid of n points.
constexpr int wavenumber(int i, int n) { return i <= n / 2 ? i : i - n; }

}  // namespace vortexlab::fft
