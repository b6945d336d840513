#include "core/render.h"

#include <algorithm>
#include <cmath>

namespace artrec::render {

double compute_taus(std::span<const double> kappa, std::span<const double> delta,
                    std::span<double> tau) {
  double T = 1.0;
  for (size_t i = 0; i < kappa.size(); ++i) {
    double p = std::exp(-kappa[i] * delta[i]);
    tau[i] = T * (1.0 - p);
    T *= p;
  }
  return T;
}

void compute_taus_vjp(std::span<const double> kappa, std::span<const double> delta,
                      std::span<const double> /*tau*/, std::span<const double> dtau,
                      std::span<double> dkappa, std::span<double> ddelta) {
  const int n = (int)kappa.size();
  // Recompute prefix transmissions, then walk back:
  //   tau_i = T_i (1 - p_i); T_{i+1} = T_i p_i
  //   dp_i = -T_i g_i + dT_{i+1} T_i ; dT_i = g_i (1 - p_i) + dT_{i+1} p_i
  thread_local std::vector<double> T, p;
  T.resize(n + 1);
  p.resize(n);
  T[0] = 1.0;
  for (int i = 0; i < n; ++i) {
    p[i] = std::exp(-kappa[i] * delta[i]);
    T[i + 1] = T[i] * p[i];
  }
  double dT = 0.0;
  for (int i = n - 1; i >= 0; --i) {
    double dp = -T[i] * dtau[i] + dT * T[i];
    dT = dtau[i] * (1.0 - p[i]) + dT * p[i];
    dkappa[i] += dp * (-delta[i] * p[i]);
    if (!ddelta.empty()) ddelta[i] += dp * (-kappa[i] * p[i]);
  }
}

std::pair<double, double> near_far(const Mat3& G_R, Vec3 G_t, Vec3 lo, Vec3 hi) {
  double dmin = 1e300, dmax = -1e300;
  for (int c = 0; c < 8; ++c) {
    Vec3 corner = {c & 1 ? hi.x : lo.x, c & 2 ? hi.y : lo.y, c & 4 ? hi.z : lo.z};
    Vec3 pc = G_R * corner + G_t;
    dmin = std::min(dmin, pc.z);
    dmax = std::max(dmax, pc.z);
  }
  if (!(dmax > -1e290) || !std::isfinite(dmin) || !std::isfinite(dmax))
    fail(Err::DegenerateDepths, "non-finite corner depths");
  if (dmax <= 0.0) fail(Err::DegenerateDepths, "object behind camera");
  if (dmax == dmin) fail(Err::DegenerateDepths, "degenerate corner depths");
  double eps = 0.2 * (dmax - dmin);
  double dn = dmin - eps;
  double df = dmax + eps;
  if (dn < 1e-4) dn = 1e-4;  // camera-straddle guard
  if (!(dn < df)) fail(Err::InvalidNearFar, "near/far collapsed");
  return {dn, df};
}

void RayUpstream::resize(int n) {
  dtau.resize(n);
  dcyc.resize(n);
  dxt.resize(n);
  clear();
}

void RayUpstream::clear() {
  dcolor = {0, 0, 0};
  dopacity = 0;
  dxstar = {0, 0, 0};
  std::fill(dtau.begin(), dtau.end(), 0.0);
  std::fill(dcyc.begin(), dcyc.end(), Vec3{});
  std::fill(dxt.begin(), dxt.end(), Vec3{});
}

void march_ray(const canonical::CanonicalModel& canon, const warp::WarpModel& wm,
               const nnet::ParamStore& store, const warp::FramePose& pose,
               const geom::Ray& ray, std::span<const double> omega_e, double d_near,
               double d_far, int n_samples, const double* jitter01, RayWork& work,
               bool record_tapes) {
  if (!(d_near < d_far)) fail(Err::InvalidNearFar, "march_ray needs near < far");
  if (n_samples < 2) fail(Err::InvalidNearFar, "march_ray needs at least 2 samples");
  work.ray = ray;
  if (ray.direction.z <= 1e-9) fail(Err::NonPositiveDepth, "ray pointing away from image plane");
  work.ray_u = ray.direction / ray.direction.z;
  if ((int)work.s.size() < n_samples) work.s.resize(n_samples);
  work.n_requested = n_samples;

  const double beta = canon.beta(store);
  const double step = (d_far - d_near) / n_samples;
  const double ulen = norm(work.ray_u);

  double T = 1.0;
  int used = 0;
  for (int i = 0; i < n_samples; ++i) {
    RaySample& sm = work.s[i];
    double frac = jitter01 ? jitter01[i] : 0.5;
    sm.depth = d_near + step * ((double)i + frac);
    sm.delta = step * ulen;  // euclidean spacing along the ray
    sm.xt = ray.origin + sm.depth * work.ray_u;
    sm.xstar = wm.warp_backward_pt(store, pose, sm.xt, record_tapes ? &sm.warp_tape : nullptr);
    sm.sdf = canon.eval_sdf(store, sm.xstar, record_tapes ? &sm.sdf_tape : nullptr);
    sm.sigma = canonical::sdf_to_density(sm.sdf, beta);
    sm.kappa = sm.sigma / beta;
    sm.p = std::exp(-sm.kappa * sm.delta);
    sm.tau = T * (1.0 - sm.p);
    sm.has_color = (1.0 - sm.p) > 0.0;
    sm.has_cyc = false;
    if (sm.has_color) {
      sm.color = canon.eval_color(store, sm.xstar, ray.direction, omega_e,
                                  record_tapes ? &sm.col_tape : nullptr);
    } else {
      sm.color = {0, 0, 0};
    }
    T *= sm.p;
    ++used;
    if (T < 1e-14) break;  // the remainder cannot contribute above roundoff
  }
  work.n = used;
  work.residual_trans = T;
}

void render_pixel(const RenderConfig& cfg, RayWork& work) {
  Vec3 c{0, 0, 0};
  Vec3 xs{0, 0, 0};
  double o = 0;
  for (int i = 0; i < work.n; ++i) {
    const RaySample& sm = work.s[i];
    o += sm.tau;
    c += sm.tau * sm.color;
    xs += sm.tau * sm.xstar;
  }
  work.opacity = o;
  work.color_pix = c + (1.0 - o) * cfg.background;
  // Expected surface point normalized by opacity: the raw tau-weighted sum
  // shrinks toward the origin wherever transmittance survives, which biases
  // every consumer (flow, matching, cycles) on fuzzy or edge pixels.
  work.xstar_valid = o > cfg.tau_min;
  work.xstar_pix = work.xstar_valid ? xs / o : xs;
}

void forward_cycle(const warp::WarpModel& wm, const nnet::ParamStore& store,
                   const warp::FramePose& pose, RayWork& work, bool record_tapes) {
  for (int i = 0; i < work.n; ++i) {
    RaySample& sm = work.s[i];
    if (sm.tau <= 0.0) { sm.has_cyc = false; continue; }
    sm.cyc_out =
        wm.warp_forward_pt(store, pose, sm.xstar, record_tapes ? &sm.cyc_tape : nullptr);
    sm.has_cyc = true;
  }
}

void ray_backward(const canonical::CanonicalModel& canon, const warp::WarpModel& wm,
                  nnet::ParamStore& store, const warp::FramePose& pose,
                  const RenderConfig& cfg, const geom::Camera& cam,
                  std::span<double> domega_e, RayWork& work, const RayUpstream& up,
                  warp::FramePoseGrad& pg, CameraGrad& cg) {
  const int n = work.n;
  if (n == 0) return;
  const double beta = canon.beta(store);
  auto& kap = work.kappa_buf;
  auto& del = work.delta_buf;
  auto& tau = work.tau_buf;
  auto& dtau = work.dtau_buf;
  auto& dkap = work.dkappa_buf;
  kap.resize(n); del.resize(n); tau.resize(n); dtau.resize(n); dkap.assign(n, 0.0);
  thread_local std::vector<double> ddel;
  ddel.assign(n, 0.0);

  // Background compositing: c_pix = sum tau_i c_i + (1 - sum tau_i) bg.
  Vec3 dcolor = up.dcolor;
  double dop = up.dopacity - dot(up.dcolor, cfg.background);
  // Expected point is opacity-normalized when valid:
  //   dX/dtau_i = (x_i - X)/o, dX/dx_i = tau_i/o
  const bool xnorm = work.xstar_valid && work.opacity > 1e-12;
  const double inv_o = xnorm ? 1.0 / work.opacity : 0.0;

  for (int i = 0; i < n; ++i) {
    const RaySample& sm = work.s[i];
    kap[i] = sm.kappa;
    del[i] = sm.delta;
    tau[i] = sm.tau;
    double dx_tau = xnorm ? dot(up.dxstar, sm.xstar - work.xstar_pix) * inv_o
                          : dot(up.dxstar, sm.xstar);
    dtau[i] = dot(dcolor, sm.color) + dop + dx_tau +
              (i < (int)up.dtau.size() ? up.dtau[i] : 0.0);
  }
  compute_taus_vjp(kap, del, tau, dtau, dkap, ddel);

  double dlogbeta = 0.0;
  Vec3 du_total{};   // gradient on u = dir / dir.z
  Vec3 ddir_total{}; // gradient on the unit direction (color-net view input)
  double dulen = 0;  // gradient on |u| via the sample spacing
  const double step = n > 0 ? work.s[0].delta / norm(work.ray_u) : 0.0;
  for (int i = 0; i < n; ++i) {
    RaySample& sm = work.s[i];
    Vec3 dxstar_i = (xnorm ? tau[i] * inv_o : tau[i]) * up.dxstar;
    Vec3 dxt_i = (i < (int)up.dxt.size()) ? up.dxt[i] : Vec3{};

    // kappa = sigma(sdf, beta) / beta
    double dsigma = dkap[i] / beta;
    double dbeta_direct = -dkap[i] * sm.sigma / (beta * beta);
    double dsdf = dsigma * canonical::sdf_to_density_dsdf(sm.sdf, beta);
    dlogbeta += (dbeta_direct + dsigma * canonical::sdf_to_density_dbeta(sm.sdf, beta)) * beta;

    canon.sdf_backward(store, sm.sdf_tape, dsdf, dxstar_i);

    if (sm.has_color) {
      Vec3 dci = tau[i] * dcolor;
      if (dci.x != 0 || dci.y != 0 || dci.z != 0) {
        Vec3 dv{};
        canon.color_backward(store, sm.col_tape, dci, dxstar_i, dv, domega_e);
        ddir_total += dv;
      }
    }
    if (sm.has_cyc && i < (int)up.dcyc.size()) {
      Vec3 dc = up.dcyc[i];
      if (dc.x != 0 || dc.y != 0 || dc.z != 0)
        wm.warp_forward_vjp(store, pose, sm.cyc_tape, dc, pg, &dxstar_i);
    }
    if (dxstar_i.x != 0 || dxstar_i.y != 0 || dxstar_i.z != 0)
      wm.warp_backward_vjp(store, pose, sm.warp_tape, dxstar_i, pg, &dxt_i);

    // xt = origin + depth * u; delta = step * |u| (depths are schedule values)
    du_total += sm.depth * dxt_i;
    dulen += ddel[i] * step;
  }
  if (dulen != 0.0) du_total += (dulen / norm(work.ray_u)) * work.ray_u;
  if (du_total.x != 0 || du_total.y != 0 || du_total.z != 0) {
    // u = d / d.z : dd = du/d.z - e_z dot(u, du)/d.z
    Vec3 dd = (1.0 / work.ray.direction.z) * du_total;
    dd.z -= dot(work.ray_u, du_total) / work.ray.direction.z;
    ddir_total += dd;
  }
  if (ddir_total.x != 0 || ddir_total.y != 0 || ddir_total.z != 0)
    geom::pixel_ray_dir_vjp(cam, work.ray.pixel, ddir_total, cg.dfx, cg.dfy);
  store.grad(canon.log_beta_id())[0] += dlogbeta;
}

}  // namespace artrec::render
