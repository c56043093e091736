#pragma once

#include <cmath>

namespace vortexlab {

// Points and vectors of the (x2, x3) cross-section. Component names follow
// the coordinate axes so that u.x2 reads as "the x2-component of u".
struct Vec2 {
  double x2 = 0.0;
  double x3 = 0.0;

  constexpr Vec2& operator+=(const Vec2& o) { x2 += o.x2; x3 += o.x3; return *this; }
  constexpr Vec2& operator-=(const Vec2& o) { x2 -= o.x2; x3 -= o.x3; return *this; }
  constexpr Vec2& operator*=(double s) { x2 *= s; x3 *= s; return *this; }
  friend constexpr Vec2 operator+(Vec2 a, const Vec2& b) { return a += b; }
  friend constexpr Vec2 operator-(Vec2 a, const Vec2& b) { return a -= b; }
  friend constexpr Vec2 operator*(double s, Vec2 a) { return a *= s; }
  friend constexpr Vec2 operator*(Vec2 a, double s) { return a *= s; }
  friend constexpr bool operator==(const Vec2&, const Vec2&) = default;
};

inline double norm(const Vec2& v) { return std::hypot(v.x2, v.x3); }
constexpr double norm2(const Vec2& v) { return v.x2 * v.x2 + v.x3 * v.x3; }

struct Vec3 {
  double x1 = 0.0;
  double x2 = 0.0;
  double x3 = 0.0;

  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

inline double norm(const Vec3& v) { return std::sqrt(v.x1 * v.x1 + v.x2 * v.x2 + v.x3 * v.x3); }

/// Velocity gradient of a cross-section flow, laid out as the matrix
/// [[d2u2, d3u2], [d2u3, d3u3]].
struct Grad2 {
  double d2u2 = 0.0;
  double d3u2 = 0.0;
  double d2u3 = 0.0;
  double d3u3 = 0.0;

  constexpr Grad2& operator+=(const Grad2& o) {
    d2u2 += o.d2u2; d3u2 += o.d3u2; d2u3 += o.d2u3; d3u3 += o.d3u3;
    return *this;
  }
  constexpr double trace() const { return d2u2 + d3u3; }
};

inline double frobenius(const Grad2& g) {
  return std::sqrt(g.d2u2 * g.d2u2 + g.d3u2 * g.d3u2 + g.d2u3 * g.d2u3 + g.d3u3 * g.d3u3);
}

}  // namespace vortexlab
