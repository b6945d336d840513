#include "core/embed.h"

#include <algorithm>
#include <cmath>

namespace artrec::embed {

CanonicalGrid refresh_grid(const canonical::CanonicalModel& canon,
                           const nnet::ParamStore& store, const Bounds& bounds, int res) {
  if (res < 2) fail(Err::InvalidBounds, "grid resolution must be >= 2");
  for (int a = 0; a < 3; ++a)
    if (!(bounds.lo[a] < bounds.hi[a])) fail(Err::InvalidBounds, "grid bounds min >= max");
  CanonicalGrid g;
  g.bounds = bounds;
  g.res = res;
  g.embed_dim = canon.config().embed_dim;
  g.points.reserve((size_t)res * res * res);
  Vec3 span = bounds.hi - bounds.lo;
  for (int iz = 0; iz < res; ++iz)
    for (int iy = 0; iy < res; ++iy)
      for (int ix = 0; ix < res; ++ix) {
        Vec3 f = {(double)ix / (res - 1), (double)iy / (res - 1), (double)iz / (res - 1)};
        g.points.push_back({bounds.lo.x + f.x * span.x, bounds.lo.y + f.y * span.y,
                            bounds.lo.z + f.z * span.z});
      }
  g.psi.resize((size_t)g.count() * g.embed_dim);
  g.dpsi.assign(g.psi.size(), 0.0);
  for (int i = 0; i < g.count(); ++i)
    canon.eval_embedding(store, g.points[i],
                         std::span(g.psi.data() + (size_t)i * g.embed_dim, g.embed_dim));
  return g;
}

void grid_flush_gradients(const canonical::CanonicalModel& canon, nnet::ParamStore& store,
                          CanonicalGrid& grid) {
  const int d = grid.embed_dim;
  std::vector<double> psi(d);
  canonical::EmbedTape tape;
  for (int i = 0; i < grid.count(); ++i) {
    const double* dp = grid.dpsi.data() + (size_t)i * d;
    bool any = false;
    for (int k = 0; k < d; ++k)
      if (dp[k] != 0.0) { any = true; break; }
    if (!any) continue;
    canon.eval_embedding(store, grid.points[i], psi, &tape);
    Vec3 dx{};  // grid positions are schedule state
    canon.embedding_backward(store, tape, std::span(dp, d), dx);
  }
  grid.clear_grads();
}

Vec3 match_soft_argmax(std::span<const double> psi_pix, const CanonicalGrid& grid,
                       double alpha_s, MatchTape* tape) {
  const int n = grid.count();
  const int d = grid.embed_dim;
  MatchTape local;
  MatchTape& t = tape ? *tape : local;
  t.psi_raw.assign(psi_pix.begin(), psi_pix.end());
  double n2 = 0;
  for (double v : psi_pix) n2 += v * v;
  t.pix_inv_norm = 1.0 / std::max(std::sqrt(n2), 1e-12);
  t.psin.resize(d);
  for (int k = 0; k < d; ++k) t.psin[k] = psi_pix[k] * t.pix_inv_norm;

  t.sims.resize(n);
  double mx = -1e300;
  for (int i = 0; i < n; ++i) {
    const double* g = grid.psi.data() + (size_t)i * d;
    // Cached grid embeddings are unit by construction; normalize defensively
    // is not needed for the value, only its vjp must project correctly.
    double s = 0;
    for (int k = 0; k < d; ++k) s += t.psin[k] * g[k];
    t.sims[i] = s;
    mx = std::max(mx, alpha_s * s);
  }
  t.w.resize(n);
  double sum = 0;
  for (int i = 0; i < n; ++i) {
    t.w[i] = std::exp(alpha_s * t.sims[i] - mx);
    sum += t.w[i];
  }
  Vec3 out{};
  for (int i = 0; i < n; ++i) {
    t.w[i] /= sum;
    out += t.w[i] * grid.points[i];
  }
  return out;
}

void match_soft_argmax_vjp(const CanonicalGrid& grid, double alpha_s, const MatchTape& t,
                           Vec3 dout, std::span<double> dpsi_pix, CanonicalGrid& grad_grid,
                           double& dalpha) {
  const int n = grid.count();
  const int d = grid.embed_dim;
  // out = sum w_i X_i, w = softmax(alpha * sims)
  double wd = 0;
  thread_local std::vector<double> dw;
  dw.resize(n);
  for (int i = 0; i < n; ++i) {
    dw[i] = dot(dout, grid.points[i]);
    wd += t.w[i] * dw[i];
  }
  thread_local std::vector<double> dpsin;
  dpsin.assign(d, 0.0);
  for (int i = 0; i < n; ++i) {
    double dsim_scaled = t.w[i] * (dw[i] - wd);  // d/d(alpha*sim_i)
    if (dsim_scaled == 0.0) continue;
    dalpha += dsim_scaled * t.sims[i];
    const double* g = grid.psi.data() + (size_t)i * d;
    double* dg = grad_grid.dpsi.data() + (size_t)i * d;
    for (int k = 0; k < d; ++k) {
      dpsin[k] += dsim_scaled * alpha_s * g[k];
      dg[k] += dsim_scaled * alpha_s * t.psin[k];
    }
  }
  // psin = raw / |raw|
  double ydot = 0;
  for (int k = 0; k < d; ++k) ydot += t.psin[k] * dpsin[k];
  for (int k = 0; k < d; ++k)
    dpsi_pix[k] += (dpsin[k] - t.psin[k] * ydot) * t.pix_inv_norm;
}

Bounds update_bounds_from_surface(std::span<const Vec3> vertices) {
  if (vertices.empty()) fail(Err::EmptySurface, "no surface vertices");
  Bounds b;
  b.lo = {1e300, 1e300, 1e300};
  b.hi = {-1e300, -1e300, -1e300};
  for (const Vec3& v : vertices) {
    for (int a = 0; a < 3; ++a) {
      b.lo[a] = std::min(b.lo[a], v[a]);
      b.hi[a] = std::max(b.hi[a], v[a]);
    }
  }
  for (int a = 0; a < 3; ++a)
    if (!(b.hi[a] - b.lo[a] > 1e-9))
      fail(Err::EmptySurface, "degenerate surface bounds");
  return b;
}

}  // namespace artrec::embed
