#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace artrec {

// All numeric work is double precision end to end.

enum class Err {
  ShapeMismatch,
  NonPositiveDepth,
  DegenerateCloud,
  DegenerateDepths,
  InvalidNearFar,
  InvalidBounds,
  EmptySurface,
  EmptyCloud,
  SizeMismatch,
  LowOpacity,
  DivergedLoss,
  Io,
  Config,
  Checkpoint,
};

struct Error : std::runtime_error {
  Err code;
  Error(Err c, const std::string& what) : std::runtime_error(what), code(c) {}
};

[[noreturn]] inline void fail(Err c, const std::string& what) { throw Error(c, what); }

struct Vec2 {
  double x = 0, y = 0;
};

inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }

struct Vec3 {
  double x = 0, y = 0, z = 0;

  double& operator[](int i) { return (&x)[i]; }
  double operator[](int i) const { return (&x)[i]; }
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator-(Vec3 a) { return {-a.x, -a.y, -a.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline Vec3 operator*(Vec3 a, double s) { return s * a; }
inline Vec3 operator/(Vec3 a, double s) { return {a.x / s, a.y / s, a.z / s}; }
inline Vec3& operator+=(Vec3& a, Vec3 b) { a = a + b; return a; }
inline Vec3& operator-=(Vec3& a, Vec3 b) { a = a - b; return a; }

inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline double norm2(Vec3 a) { return dot(a, a); }
inline Vec3 normalized(Vec3 a) { return a / norm(a); }

// Row-major 3x3 matrix.
struct Mat3 {
  double m[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};

  static Mat3 identity() { return {{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }
  static Mat3 zero() { return {}; }

  double& operator()(int r, int c) { return m[3 * r + c]; }
  double operator()(int r, int c) const { return m[3 * r + c]; }

  Mat3 transposed() const {
    return {{m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}};
  }
};

inline Vec3 operator*(const Mat3& A, Vec3 v) {
  return {A.m[0] * v.x + A.m[1] * v.y + A.m[2] * v.z,
          A.m[3] * v.x + A.m[4] * v.y + A.m[5] * v.z,
          A.m[6] * v.x + A.m[7] * v.y + A.m[8] * v.z};
}

inline Mat3 operator*(const Mat3& A, const Mat3& B) {
  Mat3 C;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += A(r, k) * B(k, c);
      C(r, c) = s;
    }
  return C;
}

inline Mat3 operator+(const Mat3& A, const Mat3& B) {
  Mat3 C;
  for (int i = 0; i < 9; ++i) C.m[i] = A.m[i] + B.m[i];
  return C;
}

inline Mat3 operator*(double s, const Mat3& A) {
  Mat3 C;
  for (int i = 0; i < 9; ++i) C.m[i] = s * A.m[i];
  return C;
}

// v_a * w_b outer product.
inline Mat3 outer(Vec3 v, Vec3 w) {
  return {{v.x * w.x, v.x * w.y, v.x * w.z,
           v.y * w.x, v.y * w.y, v.y * w.z,
           v.z * w.x, v.z * w.y, v.z * w.z}};
}

// Rigid (or blended) transform as a 3x4 row-major matrix [R | t].
struct Mat34 {
  double m[12] = {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};

  static Mat34 identity() {
    return {{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0}};
  }
  static Mat34 from(const Mat3& R, Vec3 t) {
    return {{R.m[0], R.m[1], R.m[2], t.x,
             R.m[3], R.m[4], R.m[5], t.y,
             R.m[6], R.m[7], R.m[8], t.z}};
  }

  Mat3 rot() const {
    return {{m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]}};
  }
  Vec3 trans() const { return {m[3], m[7], m[11]}; }

  Vec3 apply(Vec3 v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z + m[3],
            m[4] * v.x + m[5] * v.y + m[6] * v.z + m[7],
            m[8] * v.x + m[9] * v.y + m[10] * v.z + m[11]};
  }
  // Linear part only.
  Vec3 apply_dir(Vec3 v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[4] * v.x + m[5] * v.y + m[6] * v.z,
            m[8] * v.x + m[9] * v.y + m[10] * v.z};
  }
};

// Rigid inverse, valid only when the 3x3 part is a rotation.
inline Mat34 rigid_inverse(const Mat34& T) {
  Mat3 Rt = T.rot().transposed();
  Vec3 t = T.trans();
  Vec3 ti = -(Rt * t);
  return Mat34::from(Rt, ti);
}

// Composition a∘b (apply b first).
inline Mat34 compose(const Mat34& a, const Mat34& b) {
  Mat3 R = a.rot() * b.rot();
  Vec3 t = a.rot() * b.trans() + a.trans();
  return Mat34::from(R, t);
}

constexpr double kPi = 3.14159265358979323846;

// Deterministic 64-bit mix for deriving per-purpose RNG streams from one seed.
inline uint64_t hash_mix(uint64_t a, uint64_t b) {
  uint64_t x = a + 0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2);
  x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27; x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace artrec
