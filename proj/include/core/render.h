#pragma once

#include <functional>
#include <span>
#include <vector>

#include "core/canonical.h"
#include "core/common.h"
#include "core/geom.h"
#include "core/warp.h"

namespace artrec::render {

struct RenderConfig {
  int samples_per_ray = 128;
  double tau_min = 0.2;   // opacity gate for the expected canonical point
  Vec3 background{0, 0, 0};
};

// Visibility weights tau_i = (prod_{j<i} p_j)(1 - p_i) from transmission
// probabilities p_i = exp(-kappa_i * delta_i). Returns the residual
// transmission after the last sample; sum(tau) + residual == 1.
double compute_taus(std::span<const double> kappa, std::span<const double> delta,
                    std::span<double> tau);

// Adjoint of compute_taus: dL/dtau -> dL/dkappa and (optionally) dL/ddelta.
void compute_taus_vjp(std::span<const double> kappa, std::span<const double> delta,
                      std::span<const double> tau, std::span<const double> dtau,
                      std::span<double> dkappa, std::span<double> ddelta = {});

// Near/far planes from the projected z-depths of the canonical bounds' 8
// corners rigidly posed by G^t (appendix formula, epsilon = 0.2 * depth range).
std::pair<double, double> near_far(const Mat3& G_R, Vec3 G_t, Vec3 lo, Vec3 hi);

struct RaySample {
  double depth = 0, delta = 0;
  Vec3 xt, xstar;
  double sdf = 0, sigma = 0, kappa = 0, p = 1, tau = 0;
  Vec3 color;
  bool has_color = false;
  canonical::SdfTape sdf_tape;
  canonical::ColorTape col_tape;
  warp::WarpTape warp_tape;
  // 3D cycle: forward warp of xstar back to camera space
  bool has_cyc = false;
  Vec3 cyc_out;
  warp::WarpTape cyc_tape;
};

// Per-ray workspace; buffers are recycled across pixels.
struct RayWork {
  geom::Ray ray;
  Vec3 ray_u;  // direction scaled so that u.z == 1 (z-depth marching)
  int n = 0;   // samples actually evaluated (early termination)
  int n_requested = 0;
  std::vector<RaySample> s;
  double opacity = 0;
  double residual_trans = 1;
  Vec3 color_pix;
  Vec3 xstar_pix;
  bool xstar_valid = false;  // opacity above tau_min
  std::vector<double> kappa_buf, delta_buf, tau_buf, dtau_buf, dkappa_buf;
};

/// Marches one ray through the deformed scene: z-stratified samples between
/// the near/far planes, backward-warped into canonical space where density
/// and color live. Extinction is sigma / beta (the VolSDF scaling; the plain
/// Laplace CDF is bounded by 1 and could never saturate opacity).
void march_ray(const canonical::CanonicalModel& canon, const warp::WarpModel& wm,
               const nnet::ParamStore& store, const warp::FramePose& pose,
               const geom::Ray& ray, std::span<const double> omega_e, double d_near,
               double d_far, int n_samples, const double* jitter01, RayWork& work,
               bool record_tapes);

// Composites color over the configured background and fills opacity /
// expected canonical point / validity.
void render_pixel(const RenderConfig& cfg, RayWork& work);

// Adds the per-sample forward cycle (3D cycle consistency path).
void forward_cycle(const warp::WarpModel& wm, const nnet::ParamStore& store,
                   const warp::FramePose& pose, RayWork& work, bool record_tapes);

// Upstream gradients flowing into one ray's backward pass.
struct RayUpstream {
  Vec3 dcolor;
  double dopacity = 0;
  Vec3 dxstar;
  std::vector<double> dtau;  // extra per-sample tau gradient (cycle weighting)
  std::vector<Vec3> dcyc;    // gradient on cyc_out
  std::vector<Vec3> dxt;     // direct gradient on camera-space samples

  void resize(int n);
  void clear();
};

struct CameraGrad {
  double dfx = 0, dfy = 0;
};

void ray_backward(const canonical::CanonicalModel& canon, const warp::WarpModel& wm,
                  nnet::ParamStore& store, const warp::FramePose& pose,
                  const RenderConfig& cfg, const geom::Camera& cam,
                  std::span<double> domega_e, RayWork& work, const RayUpstream& up,
                  warp::FramePoseGrad& pg, CameraGrad& cg);

}  // namespace artrec::render
