#include "core/geom.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace artrec::geom {

namespace {

// Series coefficients of Rodrigues' formula:
//   R(w) X = X + a(th) (w x X) + b(th) (w x (w x X)),  th = |w|
// a = sin(th)/th, b = (1-cos(th))/th^2, plus the th->0 limits of a'/th, b'/th
// used by the pullback.
struct RodCoef {
  double a, b, ca, cb;  // ca = a'(th)/th, cb = b'(th)/th
};

RodCoef rod_coef(double th) {
  RodCoef c;
  double th2 = th * th;
  if (th < 1e-4) {
    c.a = 1.0 - th2 / 6.0 + th2 * th2 / 120.0;
    c.b = 0.5 - th2 / 24.0 + th2 * th2 / 720.0;
    c.ca = -1.0 / 3.0 + th2 / 30.0;
    c.cb = -1.0 / 12.0 + th2 / 180.0;
  } else {
    double s = std::sin(th), co = std::cos(th);
    c.a = s / th;
    c.b = (1.0 - co) / th2;
    c.ca = (th * co - s) / (th2 * th);
    c.cb = (th * s - 2.0 * (1.0 - co)) / (th2 * th2);
  }
  return c;
}

}  // namespace

Mat3 rodrigues(Vec3 w) {
  double th = norm(w);
  RodCoef c = rod_coef(th);
  Mat3 K = {{0, -w.z, w.y, w.z, 0, -w.x, -w.y, w.x, 0}};
  Mat3 R = Mat3::identity() + c.a * K + c.b * (K * K);
  return R;
}

Vec3 rotation_log(const Mat3& R) {
  double tr = R(0, 0) + R(1, 1) + R(2, 2);
  double cos_th = std::clamp((tr - 1.0) * 0.5, -1.0, 1.0);
  double th = std::acos(cos_th);
  Vec3 v = {R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1)};
  if (th < 1e-7) return 0.5 * v;  // R ~ I + [w]x
  if (th > kPi - 1e-5) {
    // Near pi the off-diagonal difference vanishes; recover the axis from
    // the symmetric part R + I = 2(axis axis^T) + (cos-ish corrections).
    Vec3 axis;
    double xx = (R(0, 0) + 1.0) * 0.5, yy = (R(1, 1) + 1.0) * 0.5, zz = (R(2, 2) + 1.0) * 0.5;
    xx = std::max(xx, 0.0); yy = std::max(yy, 0.0); zz = std::max(zz, 0.0);
    axis = {std::sqrt(xx), std::sqrt(yy), std::sqrt(zz)};
    // Fix signs from the largest component.
    if (axis.x >= axis.y && axis.x >= axis.z) {
      axis.y = std::copysign(axis.y, R(0, 1) + R(1, 0));
      axis.z = std::copysign(axis.z, R(0, 2) + R(2, 0));
    } else if (axis.y >= axis.z) {
      axis.x = std::copysign(axis.x, R(0, 1) + R(1, 0));
      axis.z = std::copysign(axis.z, R(1, 2) + R(2, 1));
    } else {
      axis.x = std::copysign(axis.x, R(0, 2) + R(2, 0));
      axis.y = std::copysign(axis.y, R(1, 2) + R(2, 1));
    }
    double n = norm(axis);
    if (n == 0.0) return {th, 0, 0};
    return (th / n) * axis;
  }
  return (th / (2.0 * std::sin(th))) * v;
}

void rodrigues_apply_vjp(Vec3 w, Vec3 X, Vec3 dY, Vec3& dw, Vec3& dX) {
  double th = norm(w);
  RodCoef c = rod_coef(th);
  Vec3 wxX = cross(w, X);
  Vec3 wwxX = cross(w, wxX);
  // Y = X + a wxX + b w x (w x X)
  // dY/dw_j = (ca w_j) wxX + a (e_j x X) + (cb w_j) wwxX + b (e_j x wxX + w x (e_j x X))
  for (int j = 0; j < 3; ++j) {
    Vec3 ej = {j == 0 ? 1.0 : 0.0, j == 1 ? 1.0 : 0.0, j == 2 ? 1.0 : 0.0};
    Vec3 t = (c.ca * w[j]) * wxX + c.a * cross(ej, X) + (c.cb * w[j]) * wwxX +
             c.b * (cross(ej, wxX) + cross(w, cross(ej, X)));
    dw[j] += dot(t, dY);
  }
  // dY/dX = R(w)^T pullback
  Mat3 R = rodrigues(w);
  dX += R.transposed() * dY;
}

Mat34 to_mat(const SE3& T) { return Mat34::from(rodrigues(T.rot), T.trans); }

SE3 from_mat(const Mat34& M) { return {rotation_log(M.rot()), M.trans()}; }

Vec3 se3_apply(const SE3& T, Vec3 X) { return rodrigues(T.rot) * X + T.trans; }

SE3 se3_compose(const SE3& a, const SE3& b) {
  Mat3 Ra = rodrigues(a.rot), Rb = rodrigues(b.rot);
  return {rotation_log(Ra * Rb), Ra * b.trans + a.trans};
}

SE3 se3_inverse(const SE3& T) {
  Mat3 Rt = rodrigues(T.rot).transposed();
  return {rotation_log(Rt), -(Rt * T.trans)};
}

double geodesic_distance(const Mat3& Ra, const Mat3& Rb) {
  Mat3 rel = Ra * Rb.transposed();
  double tr = rel(0, 0) + rel(1, 1) + rel(2, 2);
  return std::acos(std::clamp((tr - 1.0) * 0.5, -1.0, 1.0));
}

void Camera::validate() const {
  if (fx <= 0 || fy <= 0) fail(Err::Config, "focal lengths must be positive");
  if (cx < 0 || cx >= width || cy < 0 || cy >= height)
    fail(Err::Config, "principal point outside image");
}

Vec2 project(const Camera& cam, Vec3 X) {
  if (X.z <= 0.0) fail(Err::NonPositiveDepth, "projection of point with Z <= 0");
  return {cam.fx * X.x / X.z + cam.cx, cam.fy * X.y / X.z + cam.cy};
}

void project_vjp(const Camera& cam, Vec3 X, Vec2 dpix, Vec3& dX, double& dfx, double& dfy) {
  double iz = 1.0 / X.z;
  dX.x += dpix.x * cam.fx * iz;
  dX.y += dpix.y * cam.fy * iz;
  dX.z += -(dpix.x * cam.fx * X.x + dpix.y * cam.fy * X.y) * iz * iz;
  dfx += dpix.x * X.x * iz;
  dfy += dpix.y * X.y * iz;
}

Ray pixel_ray(const Camera& cam, Vec2 pixel) {
  Vec3 u = {(pixel.x - cam.cx) / cam.fx, (pixel.y - cam.cy) / cam.fy, 1.0};
  return {{0, 0, 0}, normalized(u), pixel};
}

void pixel_ray_dir_vjp(const Camera& cam, Vec2 pixel, Vec3 ddir, double& dfx, double& dfy) {
  Vec3 u = {(pixel.x - cam.cx) / cam.fx, (pixel.y - cam.cy) / cam.fy, 1.0};
  double n = norm(u);
  // d = u/|u| ; dd/du = (I - d d^T)/|u|
  Vec3 d = u / n;
  Vec3 du = (1.0 / n) * (ddir - dot(d, ddir) * d);
  // du/dfx = (-(x-cx)/fx^2, 0, 0)
  dfx += du.x * (-(pixel.x - cam.cx) / (cam.fx * cam.fx));
  dfy += du.y * (-(pixel.y - cam.cy) / (cam.fy * cam.fy));
}

namespace {

Vec3 centroid(const std::vector<Vec3>& pts) {
  Vec3 c;
  for (auto& p : pts) c += p;
  return c / (double)pts.size();
}

// Covariance rank via the eigenvalues of P^T P (power-iteration-free 3x3 check:
// compare the two smallest eigenvalues of the scatter matrix against the largest).
int scatter_rank(const std::vector<Vec3>& pts) {
  Vec3 c = centroid(pts);
  Mat3 S = Mat3::zero();
  for (auto& p : pts) S = S + outer(p - c, p - c);
  // Eigenvalues of a symmetric 3x3 via the characteristic cubic.
  double a = S(0, 0), b = S(1, 1), cc = S(2, 2);
  double d = S(0, 1), e = S(0, 2), f = S(1, 2);
  double p1 = d * d + e * e + f * f;
  double q = (a + b + cc) / 3.0;
  double p2 = (a - q) * (a - q) + (b - q) * (b - q) + (cc - q) * (cc - q) + 2.0 * p1;
  double p = std::sqrt(std::max(p2 / 6.0, 0.0));
  double eig[3];
  if (p < 1e-300) {
    eig[0] = eig[1] = eig[2] = q;
  } else {
    Mat3 B;
    double ip = 1.0 / p;
    B = ip * (S + (-q) * Mat3::identity());
    double detB = B(0, 0) * (B(1, 1) * B(2, 2) - B(1, 2) * B(2, 1)) -
                  B(0, 1) * (B(1, 0) * B(2, 2) - B(1, 2) * B(2, 0)) +
                  B(0, 2) * (B(1, 0) * B(2, 1) - B(1, 1) * B(2, 0));
    double r = std::clamp(detB / 2.0, -1.0, 1.0);
    double phi = std::acos(r) / 3.0;
    eig[0] = q + 2.0 * p * std::cos(phi);
    eig[2] = q + 2.0 * p * std::cos(phi + 2.0 * kPi / 3.0);
    eig[1] = 3.0 * q - eig[0] - eig[2];
  }
  double lead = std::max({std::abs(eig[0]), std::abs(eig[1]), std::abs(eig[2]), 1e-300});
  int rank = 0;
  for (double l : eig)
    if (std::abs(l) > 1e-10 * lead && std::abs(l) > 1e-18) ++rank;
  return rank;
}

// Jacobi eigen-decomposition of a symmetric 3x3 (enough for Umeyama's SVD of
// a 3x3 via eigendecomposition of A^T A).
void eig_sym3(Mat3 A, Mat3& V, Vec3& lam) {
  V = Mat3::identity();
  for (int sweep = 0; sweep < 50; ++sweep) {
    double off = std::abs(A(0, 1)) + std::abs(A(0, 2)) + std::abs(A(1, 2));
    if (off < 1e-15) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (std::abs(A(p, q)) < 1e-300) continue;
        double theta = (A(q, q) - A(p, p)) / (2.0 * A(p, q));
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        Mat3 J = Mat3::identity();
        J(p, p) = c; J(q, q) = c; J(p, q) = s; J(q, p) = -s;
        A = J.transposed() * A * J;
        V = V * J;
      }
  }
  lam = {A(0, 0), A(1, 1), A(2, 2)};
}

// SVD of a general 3x3: M = U diag(s) V^T.
void svd3(const Mat3& M, Mat3& U, Vec3& s, Mat3& V) {
  Mat3 MtM = M.transposed() * M;
  Vec3 lam;
  eig_sym3(MtM, V, lam);
  // Sort descending.
  int idx[3] = {0, 1, 2};
  std::sort(idx, idx + 3, [&](int i, int j) { return lam[i] > lam[j]; });
  Mat3 Vs;
  Vec3 ls;
  for (int k = 0; k < 3; ++k) {
    ls[k] = std::max(lam[idx[k]], 0.0);
    for (int r = 0; r < 3; ++r) Vs(r, k) = V(r, idx[k]);
  }
  V = Vs;
  s = {std::sqrt(ls.x), std::sqrt(ls.y), std::sqrt(ls.z)};
  // U columns = M v_k / s_k; fall back to completing an orthonormal frame.
  Vec3 u[3];
  for (int k = 0; k < 3; ++k) {
    Vec3 vk = {V(0, k), V(1, k), V(2, k)};
    Vec3 mv = M * vk;
    if (s[k] > 1e-12 * std::max(s.x, 1e-300)) {
      u[k] = mv / s[k];
    } else {
      u[k] = {0, 0, 0};
    }
  }
  // Orthonormalize / complete degenerate columns.
  auto fix = [&](int k) {
    if (norm(u[k]) > 0.5) return;
    Vec3 cand = cross(u[(k + 1) % 3], u[(k + 2) % 3]);
    if (norm(cand) > 1e-9) { u[k] = normalized(cand); return; }
    for (Vec3 axis : {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}}) {
      Vec3 w = axis;
      for (int j = 0; j < 3; ++j)
        if (j != k && norm(u[j]) > 0.5) w -= dot(w, u[j]) * u[j];
      if (norm(w) > 1e-6) { u[k] = normalized(w); break; }
    }
  };
  for (int k = 0; k < 3; ++k) fix(k);
  for (int k = 0; k < 3; ++k)
    for (int r = 0; r < 3; ++r) U(r, k) = u[k][r];
}

}  // namespace

Similarity umeyama(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  if (src.empty() || src.size() != dst.size())
    fail(Err::DegenerateCloud, "umeyama needs equal non-empty point sets");
  const double n = (double)src.size();
  Vec3 cs = centroid(src), cd = centroid(dst);
  Mat3 C = Mat3::zero();
  double var_s = 0;
  for (size_t i = 0; i < src.size(); ++i) {
    Vec3 a = src[i] - cs, b = dst[i] - cd;
    C = C + outer(b, a);
    var_s += dot(a, a);
  }
  C = (1.0 / n) * C;
  var_s /= n;
  Mat3 U, V;
  Vec3 sv;
  svd3(C, U, sv, V);
  Mat3 R = U * V.transposed();
  double det = R(0, 0) * (R(1, 1) * R(2, 2) - R(1, 2) * R(2, 1)) -
               R(0, 1) * (R(1, 0) * R(2, 2) - R(1, 2) * R(2, 0)) +
               R(0, 2) * (R(1, 0) * R(2, 1) - R(1, 1) * R(2, 0));
  double d3 = 1.0;
  if (det < 0) {
    d3 = -1.0;
    Mat3 Uf = U;
    for (int r = 0; r < 3; ++r) Uf(r, 2) = -Uf(r, 2);
    R = Uf * V.transposed();
  }
  double trace_ds = sv.x + sv.y + d3 * sv.z;
  double scale = var_s > 1e-300 ? trace_ds / var_s : 1.0;
  Similarity sim;
  sim.scale = scale;
  sim.transform.rot = rotation_log(R);
  sim.transform.trans = cd - scale * (R * cs);
  return sim;
}

double nn_mean_sq(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  double acc = 0;
  for (const Vec3& p : src) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& q : dst) best = std::min(best, norm2(p - q));
    acc += best;
  }
  return acc / (double)src.size();
}

Similarity icp_similarity_align(const std::vector<Vec3>& src,
                                const std::vector<Vec3>& dst, int iters) {
  if (src.empty() || dst.empty()) fail(Err::DegenerateCloud, "icp on empty cloud");
  if (scatter_rank(src) < 2 || scatter_rank(dst) < 2)
    fail(Err::DegenerateCloud, "icp on cloud with covariance rank < 2");

  // Centroid + RMS-scale pre-alignment widens the capture basin.
  Vec3 cs = centroid(src), cd = centroid(dst);
  double rs = 0, rd = 0;
  for (auto& p : src) rs += norm2(p - cs);
  for (auto& q : dst) rd += norm2(q - cd);
  rs = std::sqrt(rs / (double)src.size());
  rd = std::sqrt(rd / (double)dst.size());
  Similarity cur;
  cur.scale = (rs > 1e-300) ? rd / rs : 1.0;
  cur.transform.rot = {0, 0, 0};
  cur.transform.trans = cd - cur.scale * cs;

  std::vector<Vec3> moved(src.size());
  std::vector<Vec3> paired(src.size());
  for (int it = 0; it < iters; ++it) {
    Mat3 R = rodrigues(cur.transform.rot);
    for (size_t i = 0; i < src.size(); ++i)
      moved[i] = cur.scale * (R * src[i]) + cur.transform.trans;
    for (size_t i = 0; i < src.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      size_t bj = 0;
      for (size_t j = 0; j < dst.size(); ++j) {
        double d2 = norm2(moved[i] - dst[j]);
        if (d2 < best) { best = d2; bj = j; }
      }
      paired[i] = dst[bj];
    }
    cur = umeyama(src, paired);
  }
  return cur;
}

}  // namespace artrec::geom
