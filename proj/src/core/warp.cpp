#include "core/warp.h"

#include <algorithm>
#include <cmath>

namespace artrec::warp {

using geom::SE3;
using nnet::Mlp;
using nnet::MlpSpec;
using nnet::ParamStore;
using nnet::positional_encode;
using nnet::positional_encode_size;
using nnet::positional_encode_vjp;

namespace {

// Adjoint of the Rodrigues matrix itself: dR (3x3) pulled back to angle-axis.
void rodrigues_mat_vjp(Vec3 aa, const Mat3& dR, Vec3& daa) {
  for (int k = 0; k < 3; ++k) {
    Vec3 ek = {k == 0 ? 1.0 : 0.0, k == 1 ? 1.0 : 0.0, k == 2 ? 1.0 : 0.0};
    Vec3 dcol = {dR(0, k), dR(1, k), dR(2, k)};
    Vec3 dummy;
    geom::rodrigues_apply_vjp(aa, ek, dcol, daa, dummy);
  }
}

// Fibonacci lattice on the sphere of given radius.
Vec3 fib_point(int i, int n, double radius) {
  double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  double theta = 2.0 * kPi * (double)i / golden;
  double zf = 1.0 - (2.0 * i + 1.0) / (double)n;
  double r = std::sqrt(std::max(0.0, 1.0 - zf * zf));
  return {radius * r * std::cos(theta), radius * r * std::sin(theta), radius * zf};
}

}  // namespace

void FramePoseGrad::resize(int bones) {
  ddj_R.resize(bones);
  ddjinv_R.resize(bones);
  ddj_t.resize(bones);
  ddjinv_t.resize(bones);
  dC_t.resize(bones);
  dC_rest.resize(bones);
  dQ_t.resize(bones);
  dQ_rest.resize(bones);
  clear();
}

void FramePoseGrad::clear() {
  dG_R = Mat3::zero();
  dG_t = {0, 0, 0};
  for (size_t b = 0; b < ddj_R.size(); ++b) {
    ddj_R[b] = Mat3::zero();
    ddjinv_R[b] = Mat3::zero();
    ddj_t[b] = {0, 0, 0};
    ddjinv_t[b] = {0, 0, 0};
    dC_t[b] = {0, 0, 0};
    dC_rest[b] = {0, 0, 0};
    dQ_t[b] = Mat3::zero();
    dQ_rest[b] = Mat3::zero();
  }
}

WarpModel::WarpModel(ParamStore& store, const WarpConfig& cfg, uint64_t seed) : cfg_(cfg) {
  std::vector<int> pose_hidden(cfg.pose_depth, cfg.pose_width);
  std::vector<int> skin_hidden(cfg.skin_depth, cfg.skin_width);
  MlpSpec g_spec{cfg.code_dim, pose_hidden, 6, cfg.act, 0};
  MlpSpec j_spec{cfg.code_dim, pose_hidden, 6 * cfg.bones, cfg.act, 0};
  MlpSpec d_spec{positional_encode_size(3, cfg.pe_xyz) + cfg.code_dim, skin_hidden, cfg.bones,
                 cfg.act, cfg.pe_xyz};
  // Zero heads: identity transforms and no delta skinning at init.
  mlp_g_ = Mlp(store, "mlp_g", g_spec, hash_mix(seed, 201), 0.0);
  mlp_j_ = Mlp(store, "mlp_j", j_spec, hash_mix(seed, 202), 0.0);
  mlp_delta_ = Mlp(store, "mlp_delta", d_spec, hash_mix(seed, 203), 0.0);

  if (store.has("bones/center")) {
    centers_id_ = store.id("bones/center");
    orient_id_ = store.id("bones/orient");
    logscale_id_ = store.id("bones/logscale");
    return;
  }
  centers_id_ = store.add("bones/center", {cfg.bones, 3}, nnet::Group::Bones);
  orient_id_ = store.add("bones/orient", {cfg.bones, 3}, nnet::Group::Bones);
  logscale_id_ = store.add("bones/logscale", {cfg.bones, 3}, nnet::Group::Bones);
  auto& centers = store.value(centers_id_);
  for (int b = 0; b < cfg.bones; ++b) {
    Vec3 p = fib_point(b, cfg.bones, cfg.init_radius);
    centers[3 * b + 0] = p.x;
    centers[3 * b + 1] = p.y;
    centers[3 * b + 2] = p.z;
  }
  auto& logscale = store.value(logscale_id_);
  for (auto& s : logscale) s = std::log(cfg.init_precision);
}

std::vector<PosedBone> WarpModel::pose_bones(const ParamStore& store,
                                             std::span<const double> j_head) const {
  const auto& centers = store.value(centers_id_);
  const auto& orient = store.value(orient_id_);
  const auto& logscale = store.value(logscale_id_);
  std::vector<PosedBone> out(cfg_.bones);
  for (int b = 0; b < cfg_.bones; ++b) {
    Vec3 aa = {j_head[6 * b], j_head[6 * b + 1], j_head[6 * b + 2]};
    Vec3 tj = {j_head[6 * b + 3], j_head[6 * b + 4], j_head[6 * b + 5]};
    Mat3 RJ = geom::rodrigues(aa);
    Vec3 c0 = {centers[3 * b], centers[3 * b + 1], centers[3 * b + 2]};
    Vec3 o0 = {orient[3 * b], orient[3 * b + 1], orient[3 * b + 2]};
    Vec3 lam = {std::exp(logscale[3 * b]), std::exp(logscale[3 * b + 1]),
                std::exp(logscale[3 * b + 2])};
    PosedBone pb;
    pb.RJ = RJ;
    pb.tJ = tj;
    pb.V = RJ * geom::rodrigues(o0);
    pb.C = RJ * c0 + tj;
    pb.lambda = lam;
    // Q = sum_k lam_k v_k v_k^T
    Mat3 Q = Mat3::zero();
    for (int k = 0; k < 3; ++k) {
      Vec3 vk = {pb.V(0, k), pb.V(1, k), pb.V(2, k)};
      Q = Q + lam[k] * outer(vk, vk);
    }
    pb.Q = Q;
    out[b] = pb;
  }
  return out;
}

std::vector<SE3> WarpModel::body_pose(const ParamStore& store,
                                      std::span<const double> omega_b) const {
  std::vector<double> head(6 * cfg_.bones);
  mlp_j_.forward(store, omega_b, head);
  std::vector<SE3> js(cfg_.bones);
  for (int b = 0; b < cfg_.bones; ++b) {
    js[b].rot = {head[6 * b], head[6 * b + 1], head[6 * b + 2]};
    js[b].trans = {head[6 * b + 3], head[6 * b + 4], head[6 * b + 5]};
  }
  return js;
}

SE3 WarpModel::root_pose(const ParamStore& store, std::span<const double> omega_r,
                         const SE3& g0) const {
  double head[6];
  mlp_g_.forward(store, omega_r, std::span(head, 6));
  SE3 delta{{head[0], head[1], head[2]}, {head[3], head[4], head[5]}};
  return geom::se3_compose(delta, g0);
}

FramePose WarpModel::pose_frame(const ParamStore& store, std::span<const double> omega_r,
                                std::span<const double> omega_b,
                                std::span<const double> omega_b_rest, const SE3& g0,
                                int root_code_id, int frame_code_id, int rest_code_id) const {
  FramePose fp;
  fp.root_code_id = root_code_id;
  fp.frame_code_id = frame_code_id;
  fp.rest_code_id = rest_code_id;
  fp.omega_b_t.assign(omega_b.begin(), omega_b.end());
  fp.omega_b_rest.assign(omega_b_rest.begin(), omega_b_rest.end());
  fp.g_head.resize(6);
  mlp_g_.forward(store, omega_r, fp.g_head, &fp.g_tape);
  Mat3 Rd = geom::rodrigues({fp.g_head[0], fp.g_head[1], fp.g_head[2]});
  Vec3 td = {fp.g_head[3], fp.g_head[4], fp.g_head[5]};
  fp.R0 = geom::rodrigues(g0.rot);
  fp.t0 = g0.trans;
  fp.G_R = Rd * fp.R0;
  fp.G_t = Rd * fp.t0 + td;

  fp.j_head_t.resize(6 * cfg_.bones);
  fp.j_head_rest.resize(6 * cfg_.bones);
  mlp_j_.forward(store, omega_b, fp.j_head_t, &fp.j_tape_t);
  mlp_j_.forward(store, omega_b_rest, fp.j_head_rest, &fp.j_tape_rest);

  fp.bones_t = pose_bones(store, fp.j_head_t);
  fp.bones_rest = pose_bones(store, fp.j_head_rest);

  fp.dj.resize(cfg_.bones);
  fp.dj_inv.resize(cfg_.bones);
  for (int b = 0; b < cfg_.bones; ++b) {
    const Mat3& Rt = fp.bones_t[b].RJ;
    const Mat3& Rr = fp.bones_rest[b].RJ;
    Vec3 tt = fp.bones_t[b].tJ;
    Vec3 tr = fp.bones_rest[b].tJ;
    Mat3 Rdlt = Rt * Rr.transposed();
    Vec3 tdlt = tt - Rdlt * tr;
    fp.dj[b] = Mat34::from(Rdlt, tdlt);
    Mat3 Ri = Rdlt.transposed();
    fp.dj_inv[b] = Mat34::from(Ri, -(Ri * tdlt));
  }
  return fp;
}

void WarpModel::pose_frame_backward(ParamStore& store, const FramePose& fp,
                                    const FramePoseGrad& g) const {
  const int B = cfg_.bones;
  // Per-bone adjoints of J_t and J_rest rotations/translations.
  std::vector<Mat3> dRt(B, Mat3::zero()), dRr(B, Mat3::zero());
  std::vector<Vec3> dtt(B), dtr(B);

  const auto& centers = store.value(centers_id_);
  const auto& orient = store.value(orient_id_);
  auto& dcenters = store.grad(centers_id_);
  auto& dorient = store.grad(orient_id_);
  auto& dlogscale = store.grad(logscale_id_);

  for (int b = 0; b < B; ++b) {
    Mat3 Rdlt = fp.dj[b].rot();
    Vec3 tdlt = fp.dj[b].trans();
    // Adjoint of the inverse: Ri = Rdlt^T, ti = -Ri tdlt.
    Mat3 dRdlt = g.ddj_R[b];
    Vec3 dtdlt = g.ddj_t[b];
    {
      Mat3 dRi = g.ddjinv_R[b];
      Vec3 dti = g.ddjinv_t[b];
      // ti = -Ri tdlt
      dRi = dRi + (-1.0) * outer(dti, tdlt);
      Mat3 Ri = Rdlt.transposed();
      dtdlt += -(Ri.transposed() * dti);
      dRdlt = dRdlt + dRi.transposed();
    }
    // tdlt = tt - Rdlt tr
    const Mat3& Rr = fp.bones_rest[b].RJ;
    const Mat3& Rt = fp.bones_t[b].RJ;
    Vec3 tr = fp.bones_rest[b].tJ;
    dtt[b] += dtdlt;
    dRdlt = dRdlt + (-1.0) * outer(dtdlt, tr);
    dtr[b] += -(Rdlt.transposed() * dtdlt);
    // Rdlt = Rt Rr^T
    dRt[b] = dRt[b] + dRdlt * Rr;
    dRr[b] = dRr[b] + dRdlt.transposed() * Rt;

    // Posed-bone adjoints at frame pose and at rest pose.
    Vec3 c0 = {centers[3 * b], centers[3 * b + 1], centers[3 * b + 2]};
    Vec3 o0 = {orient[3 * b], orient[3 * b + 1], orient[3 * b + 2]};
    Mat3 V0 = geom::rodrigues(o0);
    for (int pass = 0; pass < 2; ++pass) {
      const PosedBone& pb = pass == 0 ? fp.bones_t[b] : fp.bones_rest[b];
      const Mat3& dQ = pass == 0 ? g.dQ_t[b] : g.dQ_rest[b];
      Vec3 dC = pass == 0 ? g.dC_t[b] : g.dC_rest[b];
      Mat3& dRJ = pass == 0 ? dRt[b] : dRr[b];
      Vec3& dtJ = pass == 0 ? dtt[b] : dtr[b];
      // Q = sum_k lam_k v_k v_k^T
      Mat3 dV = Mat3::zero();
      Mat3 dQs = dQ + dQ.transposed();
      for (int k = 0; k < 3; ++k) {
        Vec3 vk = {pb.V(0, k), pb.V(1, k), pb.V(2, k)};
        double dlam = dot(vk, dQ * vk);
        dlogscale[3 * b + k] += dlam * pb.lambda[k];
        Vec3 dvk = pb.lambda[k] * (dQs * vk);
        dV(0, k) += dvk.x;
        dV(1, k) += dvk.y;
        dV(2, k) += dvk.z;
      }
      // V = RJ V0 ; C = RJ c0 + tJ
      dRJ = dRJ + dV * V0.transposed() + outer(dC, c0);
      Vec3 dV0aa_accum{0, 0, 0};
      Mat3 dV0 = pb.RJ.transposed() * dV;
      rodrigues_mat_vjp(o0, dV0, dV0aa_accum);
      dorient[3 * b + 0] += dV0aa_accum.x;
      dorient[3 * b + 1] += dV0aa_accum.y;
      dorient[3 * b + 2] += dV0aa_accum.z;
      Vec3 dc0 = pb.RJ.transposed() * dC;
      dcenters[3 * b + 0] += dc0.x;
      dcenters[3 * b + 1] += dc0.y;
      dcenters[3 * b + 2] += dc0.z;
      dtJ += dC;
    }
  }

  // Head adjoints -> body pose MLP (frame and rest codes).
  std::vector<double> dhead_t(6 * B, 0.0), dhead_r(6 * B, 0.0);
  for (int b = 0; b < B; ++b) {
    Vec3 aat = {fp.j_head_t[6 * b], fp.j_head_t[6 * b + 1], fp.j_head_t[6 * b + 2]};
    Vec3 aar = {fp.j_head_rest[6 * b], fp.j_head_rest[6 * b + 1], fp.j_head_rest[6 * b + 2]};
    Vec3 daat{0, 0, 0}, daar{0, 0, 0};
    rodrigues_mat_vjp(aat, dRt[b], daat);
    rodrigues_mat_vjp(aar, dRr[b], daar);
    for (int k = 0; k < 3; ++k) {
      dhead_t[6 * b + k] = daat[k];
      dhead_t[6 * b + 3 + k] = dtt[b][k];
      dhead_r[6 * b + k] = daar[k];
      dhead_r[6 * b + 3 + k] = dtr[b][k];
    }
  }
  {
    std::vector<double> dcode(cfg_.code_dim, 0.0);
    mlp_j_.backward(store, fp.j_tape_t, dhead_t, dcode);
    if (fp.frame_code_id >= 0) {
      auto& gbuf = store.grad(fp.frame_code_id);
      for (int i = 0; i < cfg_.code_dim; ++i) gbuf[i] += dcode[i];
    }
  }
  {
    std::vector<double> dcode(cfg_.code_dim, 0.0);
    mlp_j_.backward(store, fp.j_tape_rest, dhead_r, dcode);
    if (fp.rest_code_id >= 0) {
      auto& gbuf = store.grad(fp.rest_code_id);
      for (int i = 0; i < cfg_.code_dim; ++i) gbuf[i] += dcode[i];
    }
  }

  // Root chain: G_R = Rd R0, G_t = Rd t0 + td.
  Mat3 dRd = g.dG_R * fp.R0.transposed() + outer(g.dG_t, fp.t0);
  Vec3 dtd = g.dG_t;
  Vec3 aad = {fp.g_head[0], fp.g_head[1], fp.g_head[2]};
  Vec3 daad{0, 0, 0};
  rodrigues_mat_vjp(aad, dRd, daad);
  std::vector<double> dghead = {daad.x, daad.y, daad.z, dtd.x, dtd.y, dtd.z};
  std::vector<double> dcode(cfg_.code_dim, 0.0);
  mlp_g_.backward(store, fp.g_tape, dghead, dcode);
  if (fp.root_code_id >= 0) {
    auto& gbuf = store.grad(fp.root_code_id);
    for (int i = 0; i < cfg_.code_dim; ++i) gbuf[i] += dcode[i];
  }
}

void WarpModel::skinning_weights(const ParamStore& store, Vec3 x,
                                 std::span<const double> omega_b,
                                 const std::vector<PosedBone>& bones, std::span<double> w,
                                 SkinTape* tape) const {
  const int B = cfg_.bones;
  SkinTape local;
  SkinTape& t = tape ? *tape : local;
  t.x = x;
  t.logits.assign(B, 0.0);
  t.w.assign(B, 0.0);
  t.z.assign(B, Vec3{});
  t.qz.assign(B, Vec3{});
  t.used_mlp = false;

  if (cfg_.use_gauss_skin) {
    for (int b = 0; b < B; ++b) {
      Vec3 z = x - bones[b].C;
      Vec3 qz = bones[b].Q * z;
      t.z[b] = z;
      t.qz[b] = qz;
      t.logits[b] -= dot(z, qz);  // proximity weighting: nearer bones score higher
    }
  }
  if (cfg_.use_mlp_delta) {
    const int npe = positional_encode_size(3, cfg_.pe_xyz);
    enc_scratch_.resize(npe + cfg_.code_dim);
    const double raw[3] = {x.x, x.y, x.z};
    positional_encode(std::span(raw, 3), cfg_.pe_xyz, std::span(enc_scratch_.data(), npe));
    for (int i = 0; i < cfg_.code_dim; ++i) enc_scratch_[npe + i] = omega_b[i];
    thread_local std::vector<double> delta;
    delta.resize(B);
    mlp_delta_.forward(store, enc_scratch_, delta, &t.mlp);
    for (int b = 0; b < B; ++b) t.logits[b] += delta[b];
    t.used_mlp = true;
  }
  // Softmax with max subtraction.
  double mx = t.logits[0];
  for (int b = 1; b < B; ++b) mx = std::max(mx, t.logits[b]);
  double sum = 0;
  for (int b = 0; b < B; ++b) {
    t.w[b] = std::exp(t.logits[b] - mx);
    sum += t.w[b];
  }
  for (int b = 0; b < B; ++b) {
    t.w[b] /= sum;
    w[b] = t.w[b];
  }
}

void WarpModel::skinning_backward(ParamStore& store, const SkinTape& t,
                                  std::span<const double> dw, Vec3& dx, std::vector<Vec3>& dC,
                                  std::vector<Mat3>& dQ, int code_id) const {
  const int B = cfg_.bones;
  // Softmax adjoint.
  double wd = 0;
  for (int b = 0; b < B; ++b) wd += t.w[b] * dw[b];
  thread_local std::vector<double> dlogit;
  dlogit.resize(B);
  for (int b = 0; b < B; ++b) dlogit[b] = t.w[b] * (dw[b] - wd);

  if (cfg_.use_gauss_skin) {
    for (int b = 0; b < B; ++b) {
      double dl = -dlogit[b];  // logit had -z^T Q z
      // d(z^T Q z) = 2 Q z dz + z z^T dQ
      Vec3 dz = 2.0 * dl * t.qz[b];
      dx += dz;
      dC[b] += -dz;
      dQ[b] = dQ[b] + dl * outer(t.z[b], t.z[b]);
    }
  }
  if (cfg_.use_mlp_delta && t.used_mlp) {
    const int npe = positional_encode_size(3, cfg_.pe_xyz);
    thread_local std::vector<double> denc;
    denc.assign(npe + cfg_.code_dim, 0.0);
    mlp_delta_.backward(store, t.mlp, dlogit, denc);
    double draw[3] = {0, 0, 0};
    const double raw[3] = {t.x.x, t.x.y, t.x.z};
    positional_encode_vjp(std::span(raw, 3), cfg_.pe_xyz, std::span(denc.data(), npe), draw);
    dx += Vec3{draw[0], draw[1], draw[2]};
    if (code_id >= 0) {
      auto& gbuf = store.grad(code_id);
      for (int i = 0; i < cfg_.code_dim; ++i) gbuf[i] += denc[npe + i];
    }
  }
}

Vec3 WarpModel::warp_backward_pt(const ParamStore& store, const FramePose& fp, Vec3 xt,
                                 WarpTape* tape) const {
  const int B = cfg_.bones;
  Vec3 xr = fp.G_R.transposed() * (xt - fp.G_t);
  thread_local WarpTape local;
  WarpTape& t = tape ? *tape : local;
  t.x_in = xr;
  thread_local std::vector<double> w;
  w.resize(B);
  skinning_weights(store, xr, fp.omega_b_t, fp.bones_t, w, &t.skin);
  Mat34 M;
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < 12; ++i) M.m[i] += w[b] * fp.dj_inv[b].m[i];
  t.M = M;
  return M.apply(xr);
}

void WarpModel::warp_backward_vjp(ParamStore& store, const FramePose& fp, const WarpTape& t,
                                  Vec3 dxstar, FramePoseGrad& pg, Vec3* dxt) const {
  const int B = cfg_.bones;
  Vec3 xr = t.x_in;
  // xstar = M xr_h
  Vec3 dxr = t.M.rot().transposed() * dxstar;
  thread_local std::vector<double> dw;
  dw.resize(B);
  for (int b = 0; b < B; ++b) {
    dw[b] = dot(dxstar, fp.dj_inv[b].apply(xr));
    pg.ddjinv_R[b] = pg.ddjinv_R[b] + t.skin.w[b] * outer(dxstar, xr);
    pg.ddjinv_t[b] += t.skin.w[b] * dxstar;
  }
  skinning_backward(store, t.skin, dw, dxr, pg.dC_t, pg.dQ_t, fp.frame_code_id);
  // xr = G_R^T (xt - G_t): dG_R(i,a) += (xt - G_t)_i dxr_a, reconstructed from xr.
  Vec3 y = fp.G_R * dxr;
  Vec3 xt_minus = fp.G_R * xr;
  pg.dG_R = pg.dG_R + outer(xt_minus, dxr);
  pg.dG_t += -y;
  if (dxt) *dxt += y;
}

Vec3 WarpModel::warp_forward_pt(const ParamStore& store, const FramePose& fp, Vec3 xstar,
                                WarpTape* tape) const {
  const int B = cfg_.bones;
  thread_local WarpTape local;
  WarpTape& t = tape ? *tape : local;
  t.x_in = xstar;
  thread_local std::vector<double> w;
  w.resize(B);
  skinning_weights(store, xstar, fp.omega_b_rest, fp.bones_rest, w, &t.skin);
  Mat34 M;
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < 12; ++i) M.m[i] += w[b] * fp.dj[b].m[i];
  t.M = M;
  Vec3 y = M.apply(xstar);
  return fp.G_R * y + fp.G_t;
}

void WarpModel::warp_forward_vjp(ParamStore& store, const FramePose& fp, const WarpTape& t,
                                 Vec3 dxt, FramePoseGrad& pg, Vec3* dxstar) const {
  const int B = cfg_.bones;
  Vec3 xstar = t.x_in;
  Vec3 y = t.M.apply(xstar);
  // xt = G_R y + G_t
  pg.dG_R = pg.dG_R + outer(dxt, y);
  pg.dG_t += dxt;
  Vec3 dy = fp.G_R.transposed() * dxt;
  Vec3 dxs = t.M.rot().transposed() * dy;
  thread_local std::vector<double> dw;
  dw.resize(B);
  for (int b = 0; b < B; ++b) {
    dw[b] = dot(dy, fp.dj[b].apply(xstar));
    pg.ddj_R[b] = pg.ddj_R[b] + t.skin.w[b] * outer(dy, xstar);
    pg.ddj_t[b] += t.skin.w[b] * dy;
  }
  skinning_backward(store, t.skin, dw, dxs, pg.dC_rest, pg.dQ_rest, fp.rest_code_id);
  if (dxstar) *dxstar += dxs;
}

}  // namespace artrec::warp
