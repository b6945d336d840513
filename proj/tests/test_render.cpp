#include <cmath>
#include <random>

#include "core/render.h"
#include "doctest.h"
#include "helpers.h"

using namespace artrec;
using namespace artrec::render;
using geom::SE3;
using nnet::Group;
using nnet::ParamStore;

TEST_CASE("tau weights partition unity with the residual transmission") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  for (int trial = 0; trial < 50; ++trial) {
    int n = 2 + (int)(u(rng) * 10);
    std::vector<double> kappa(n), delta(n), tau(n);
    for (int i = 0; i < n; ++i) {
      kappa[i] = u(rng);
      delta[i] = 0.01 + 0.1 * u(rng);
    }
    double rest = compute_taus(kappa, delta, tau);
    double sum = rest;
    for (double t : tau) {
      CHECK(t >= 0.0);
      sum += t;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("empty space gives zero opacity; an opaque front sample takes all weight") {
  std::vector<double> kappa(8, 0.0), delta(8, 0.1), tau(8);
  double rest = compute_taus(kappa, delta, tau);
  for (double t : tau) CHECK(t == 0.0);
  CHECK(rest == 1.0);
  kappa[0] = 1e9;
  rest = compute_taus(kappa, delta, tau);
  CHECK(tau[0] == doctest::Approx(1.0));
  for (int i = 1; i < 8; ++i) CHECK(tau[i] == doctest::Approx(0.0));
}

TEST_CASE("compute_taus vjp matches finite differences") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  int n = 12;
  std::vector<double> kappa(n), delta(n), tau(n), g(n);
  for (int i = 0; i < n; ++i) {
    kappa[i] = u(rng);
    delta[i] = 0.05 + 0.05 * u(rng);
    g[i] = u(rng) - 1.5;
  }
  auto loss = [&]() {
    std::vector<double> t(n);
    compute_taus(kappa, delta, t);
    double s = 0;
    for (int i = 0; i < n; ++i) s += g[i] * t[i];
    return s;
  };
  std::vector<double> dk(n, 0.0), dd(n, 0.0);
  compute_taus(kappa, delta, tau);
  compute_taus_vjp(kappa, delta, tau, g, dk, dd);
  for (int i = 0; i < n; ++i) {
    double h = 1e-7, orig = kappa[i];
    kappa[i] = orig + h;
    double lp = loss();
    kappa[i] = orig - h;
    double lm = loss();
    kappa[i] = orig;
    CHECK(dk[i] == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-5));
    orig = delta[i];
    delta[i] = orig + h;
    lp = loss();
    delta[i] = orig - h;
    lm = loss();
    delta[i] = orig;
    CHECK(dd[i] == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-5));
  }
}

TEST_CASE("near/far from bbox corner depths") {
  // depths spanning [2,4] -> eps 0.4 -> (1.6, 4.4)
  Vec3 lo = {-1, -1, 2}, hi = {1, 1, 4};
  auto [dn, df] = near_far(Mat3::identity(), {0, 0, 0}, lo, hi);
  CHECK(dn == doctest::Approx(1.6));
  CHECK(df == doctest::Approx(4.4));
  // homogeneity: scaling depths scales the planes
  Vec3 lo2 = {-1, -1, 6}, hi2 = {1, 1, 12};
  auto [dn2, df2] = near_far(Mat3::identity(), {0, 0, 0}, lo2, hi2);
  CHECK(dn2 == doctest::Approx(3 * dn));
  CHECK(df2 == doctest::Approx(3 * df));
  // object behind the camera
  CHECK_THROWS_AS((void)near_far(Mat3::identity(), {0, 0, -10}, {-1, -1, -1}, {1, 1, 1}),
                  Error);
}

namespace {

// A tiny scene: canonical + warp models with non-trivial heads, one frame.
struct Scene {
  ParamStore store;
  canonical::CanonicalModel canon;
  warp::WarpModel wm;
  int root_id, body_id, rest_id, env_id;
  SE3 g0;

  warp::FramePose pose() const {
    return wm.pose_frame(store, store.value(root_id), store.value(body_id),
                         store.value(rest_id), g0, root_id, body_id, rest_id);
  }
};

Scene make_scene(uint64_t seed) {
  Scene s;
  canonical::CanonicalConfig cc;
  cc.width = 16;
  cc.depth = 2;
  cc.pe_xyz = 4;
  cc.pe_view = 2;
  cc.beta_init = 0.08;
  s.canon = canonical::CanonicalModel(s.store, cc, seed);
  warp::WarpConfig wc;
  wc.bones = 3;
  wc.pe_xyz = 4;
  wc.pose_width = 16;
  wc.pose_depth = 1;
  wc.skin_width = 12;
  wc.skin_depth = 1;
  s.wm = warp::WarpModel(s.store, wc, hash_mix(seed, 1));
  s.root_id = s.store.add("code/root/f0", {128}, Group::Codes);
  s.body_id = s.store.add("code/body/f0", {128}, Group::Codes);
  s.rest_id = s.store.add("code/body_rest", {128}, Group::Codes);
  s.env_id = s.store.add("code/env/v0", {64}, Group::Codes);
  nnet::kaiming_uniform(s.store.value(s.root_id), 16, hash_mix(seed, 2));
  nnet::kaiming_uniform(s.store.value(s.body_id), 16, hash_mix(seed, 3));
  nnet::kaiming_uniform(s.store.value(s.rest_id), 16, hash_mix(seed, 4));
  nnet::kaiming_uniform(s.store.value(s.env_id), 16, hash_mix(seed, 5));
  s.g0 = {{0.05, -0.1, 0.08}, {0.02, -0.03, 2.6}};
  // small random pose heads so warps are non-trivial
  std::mt19937_64 rng(hash_mix(seed, 9));
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (const char* n : {"mlp_g/w1", "mlp_g/b1", "mlp_j/w1", "mlp_j/b1"}) {
    for (auto& v : s.store.value(s.store.id(n))) v = u(rng);
  }
  for (const char* n : {"mlp_delta/w1", "mlp_delta/b1"}) {
    for (auto& v : s.store.value(s.store.id(n))) v = 4.0 * u(rng);
  }
  return s;
}

}  // namespace

TEST_CASE("march_ray on the initial sphere produces sensible opacity") {
  Scene s = make_scene(17);
  warp::FramePose pose = s.pose();
  geom::Camera cam{90, 90, 15.5, 15.5, 32, 32};
  auto nf = near_far(pose.G_R, pose.G_t, {-1, -1, -1}, {1, 1, 1});
  RayWork work;
  RenderConfig rc;
  rc.samples_per_ray = 64;
  // center ray passes through the initial sphere
  geom::Ray center = geom::pixel_ray(cam, {15.5, 15.5});
  march_ray(s.canon, s.wm, s.store, pose, center, s.store.value(s.env_id), nf.first, nf.second,
            64, nullptr, work, false);
  render_pixel(rc, work);
  CHECK(work.opacity > 0.5);
  CHECK(work.opacity <= 1.0 + 1e-9);
  double tsum = 0;
  for (int i = 0; i < work.n; ++i) tsum += work.s[i].tau;
  CHECK(tsum + work.residual_trans == doctest::Approx(1.0).epsilon(1e-9));
  // corner ray misses it
  geom::Ray corner = geom::pixel_ray(cam, {0.0, 0.0});
  march_ray(s.canon, s.wm, s.store, pose, corner, s.store.value(s.env_id), nf.first, nf.second,
            64, nullptr, work, false);
  render_pixel(rc, work);
  CHECK(work.opacity < 0.2);
}

TEST_CASE("render_pixel: zero opacity composites the background") {
  RayWork work;
  work.n = 0;
  work.s.clear();
  RenderConfig rc;
  rc.background = {0.25, 0.5, 0.75};
  render_pixel(rc, work);
  CHECK(work.color_pix.x == doctest::Approx(0.25));
  CHECK(work.color_pix.y == doctest::Approx(0.5));
  CHECK(work.color_pix.z == doctest::Approx(0.75));
  CHECK(work.opacity == 0.0);
  CHECK_FALSE(work.xstar_valid);
}

TEST_CASE("render_pixel: two half-weight samples of black and white give grey") {
  RayWork work;
  work.n = 2;
  work.s.resize(2);
  work.s[0].tau = 0.5;
  work.s[0].color = {0, 0, 0};
  work.s[0].xstar = {0, 0, 0};
  work.s[1].tau = 0.5;
  work.s[1].color = {1, 1, 1};
  work.s[1].xstar = {1, 0, 0};
  RenderConfig rc;  // black background
  render_pixel(rc, work);
  CHECK(work.color_pix.x == doctest::Approx(0.5));
  CHECK(work.opacity == doctest::Approx(1.0));
  CHECK(work.xstar_pix.x == doctest::Approx(0.5));
  CHECK(work.xstar_valid);
}

TEST_CASE("full ray gradient (color+opacity+expected point+cycle) matches FD") {
  Scene s = make_scene(23);
  geom::Camera cam{85, 95, 15.5, 15.5, 32, 32};
  int cam_fx = s.store.add("cam/logf/v0", {2}, Group::Cam);
  s.store.value(cam_fx) = {std::log(cam.fx), std::log(cam.fy)};
  const int N = 24;
  // freeze near/far for gradient consistency
  warp::FramePose pose0 = s.pose();
  auto nf = near_far(pose0.G_R, pose0.G_t, {-1, -1, -1}, {1, 1, 1});
  Vec2 px = {14.0, 17.0};
  Vec3 wc = {0.4, -0.7, 0.9};
  Vec3 wx = {0.5, 0.3, -0.2};
  double wo = 0.8;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> wcyc(N);
  std::vector<double> wtau(N);
  for (int i = 0; i < N; ++i) {
    wcyc[i] = 0.3 * Vec3{u(rng), u(rng), u(rng)};
    wtau[i] = 0.2 * u(rng);
  }

  auto eval = [&](bool backward) {
    geom::Camera c2 = cam;
    c2.fx = std::exp(s.store.value(cam_fx)[0]);
    c2.fy = std::exp(s.store.value(cam_fx)[1]);
    warp::FramePose pose = s.pose();
    geom::Ray ray = geom::pixel_ray(c2, px);
    RayWork work;
    RenderConfig rc;
    rc.samples_per_ray = N;
    march_ray(s.canon, s.wm, s.store, pose, ray, s.store.value(s.env_id), nf.first, nf.second,
              N, nullptr, work, backward);
    render_pixel(rc, work);
    forward_cycle(s.wm, s.store, pose, work, backward);
    double loss = dot(wc, work.color_pix) + wo * work.opacity + dot(wx, work.xstar_pix);
    for (int i = 0; i < work.n; ++i) {
      loss += work.s[i].tau * wtau[i];
      if (work.s[i].has_cyc) loss += dot(wcyc[i], work.s[i].cyc_out);
    }
    if (backward) {
      RayUpstream up;
      up.resize(work.n);
      up.clear();
      up.dcolor = wc;
      up.dopacity = wo;
      up.dxstar = wx;
      for (int i = 0; i < work.n; ++i) {
        up.dtau[i] = wtau[i];
        if (work.s[i].has_cyc) up.dcyc[i] = wcyc[i];
      }
      warp::FramePoseGrad pg;
      pg.resize(s.wm.bones());
      CameraGrad cg;
      std::vector<double> domega(64, 0.0);
      ray_backward(s.canon, s.wm, s.store, pose, rc, c2, domega, work, up, pg, cg);
      s.wm.pose_frame_backward(s.store, pose, pg);
      auto& envg = s.store.grad(s.env_id);
      for (int k = 0; k < 64; ++k) envg[k] += domega[k];
      auto& cgr = s.store.grad(cam_fx);
      cgr[0] += cg.dfx * c2.fx;
      cgr[1] += cg.dfy * c2.fy;
    }
    return loss;
  };

  auto loss = [&]() { return eval(false); };
  auto backward = [&]() {
    s.store.zero_grads();
    eval(true);
  };
  auto entries = testutil::pick_entries(s.store, 2, 31);
  auto res = testutil::check_param_gradients(s.store, loss, backward, entries, 1e-5, 1e-5);
  CHECK_MESSAGE(res.max_rel < 1e-3, "worst ", res.worst_name, " analytic ",
                res.worst_analytic, " fd ", res.worst_fd);
}

TEST_CASE("doubling the sample count changes sphere opacity by < 1e-3") {
  // quadrature stability on the initial sphere with a well-resolved beta
  Scene s = make_scene(29);
  s.store.value(s.canon.log_beta_id())[0] = std::log(0.05);
  warp::FramePose pose = s.pose();
  geom::Camera cam{90, 90, 15.5, 15.5, 32, 32};
  auto nf = near_far(pose.G_R, pose.G_t, {-0.8, -0.8, -0.8}, {0.8, 0.8, 0.8});
  RayWork work;
  RenderConfig rc;
  geom::Ray ray = geom::pixel_ray(cam, {15.5, 15.5});
  march_ray(s.canon, s.wm, s.store, pose, ray, s.store.value(s.env_id), nf.first, nf.second,
            128, nullptr, work, false);
  render_pixel(rc, work);
  double o1 = work.opacity;
  march_ray(s.canon, s.wm, s.store, pose, ray, s.store.value(s.env_id), nf.first, nf.second,
            256, nullptr, work, false);
  render_pixel(rc, work);
  CHECK(std::abs(work.opacity - o1) < 1e-3);
}
