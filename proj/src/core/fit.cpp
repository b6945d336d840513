#include "core/fit.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace artrec::fit {

namespace fs = std::filesystem;
using nnet::Group;
using nnet::ParamStore;

config::KeyValues default_config() {
  config::KeyValues kv;
  kv.declare("seed", "0");
  kv.declare("iterations", "0");
  kv.declare("budget_floor", "2000");
  kv.declare("rays_per_batch", "8192");
  kv.declare("active_rays", "8192");
  kv.declare("active_pool", "32768");
  kv.declare("samples_per_ray", "128");
  kv.declare("bones", "25");
  kv.declare("mlp_width", "128");
  kv.declare("mlp_depth", "5");
  kv.declare("pose_width", "64");
  kv.declare("pose_depth", "2");
  kv.declare("skin_width", "64");
  kv.declare("skin_depth", "2");
  kv.declare("uncert_width", "64");
  kv.declare("uncert_depth", "4");
  kv.declare("pe_xyz", "10");
  kv.declare("pe_view", "4");
  kv.declare("pe_uncert", "6");
  kv.declare("grid_res", "20");
  kv.declare("refresh_every", "200");
  kv.declare("mc_res", "32");
  kv.declare("beta_start", "0.1");
  kv.declare("beta_end", "0.01");
  kv.declare("alpha_init", "10");
  kv.declare("lr_mlp", "5e-4");
  kv.declare("lr_codes", "5e-3");
  kv.declare("lr_cam", "1e-3");
  kv.declare("lr_decay_floor", "0.1");
  kv.declare("warmup_frac", "0.1");
  kv.declare("w_rgb", "1.0");
  kv.declare("w_sil", "1.0");
  kv.declare("w_flow", "0.5");
  kv.declare("w_match", "0.1");
  kv.declare("w_cyc2d", "0.1");
  kv.declare("w_cyc3d", "0.1");
  kv.declare("w_uncert", "1.0");
  kv.declare("tau_min", "0.2");
  kv.declare("theta_max_deg", "15");
  kv.declare("root_init", "gt_noisy");
  kv.declare("ablate_cefeat", "0");
  kv.declare("ablate_flow", "0");
  kv.declare("ablate_active", "0");
  kv.declare("ablate_root_init", "0");
  kv.declare("ablate_mlp_delta", "0");
  kv.declare("ablate_gauss_skin", "0");
  kv.declare("checkpoint_every", "0");
  kv.declare("preview_every", "0");
  kv.declare("init_bound", "1.0");
  kv.declare("eval_mesh_res", "48");
  kv.declare("eval_samples", "10000");
  kv.declare("icp_iters", "20");
  kv.declare("threads", "1");
  return kv;
}

FitConfig FitConfig::from(const config::KeyValues& kv) {
  FitConfig c;
  c.seed = (uint64_t)kv.num("seed");
  c.iterations = (int64_t)kv.num("iterations");
  c.budget_floor = (int64_t)kv.num("budget_floor");
  c.rays_per_batch = kv.integer("rays_per_batch");
  c.active_rays = kv.integer("active_rays");
  c.active_pool = kv.integer("active_pool");
  c.samples_per_ray = kv.integer("samples_per_ray");
  c.bones = kv.integer("bones");
  c.mlp_width = kv.integer("mlp_width");
  c.mlp_depth = kv.integer("mlp_depth");
  c.pose_width = kv.integer("pose_width");
  c.pose_depth = kv.integer("pose_depth");
  c.skin_width = kv.integer("skin_width");
  c.skin_depth = kv.integer("skin_depth");
  c.uncert_width = kv.integer("uncert_width");
  c.uncert_depth = kv.integer("uncert_depth");
  c.pe_xyz = kv.integer("pe_xyz");
  c.pe_view = kv.integer("pe_view");
  c.pe_uncert = kv.integer("pe_uncert");
  c.grid_res = kv.integer("grid_res");
  c.refresh_every = kv.integer("refresh_every");
  c.mc_res = kv.integer("mc_res");
  c.beta_start = kv.num("beta_start");
  c.beta_end = kv.num("beta_end");
  c.alpha_init = kv.num("alpha_init");
  c.lr_mlp = kv.num("lr_mlp");
  c.lr_codes = kv.num("lr_codes");
  c.lr_cam = kv.num("lr_cam");
  c.lr_decay_floor = kv.num("lr_decay_floor");
  c.warmup_frac = kv.num("warmup_frac");
  c.weights.rgb = kv.num("w_rgb");
  c.weights.sil = kv.num("w_sil");
  c.weights.flow = kv.num("w_flow");
  c.weights.match = kv.num("w_match");
  c.weights.cyc2d = kv.num("w_cyc2d");
  c.weights.cyc3d = kv.num("w_cyc3d");
  c.weights.uncert = kv.num("w_uncert");
  c.tau_min = kv.num("tau_min");
  c.theta_max_deg = kv.num("theta_max_deg");
  c.root_init = kv.str("root_init");
  if (c.root_init != "gt_noisy" && c.root_init != "identity")
    fail(Err::Config, "root_init must be gt_noisy or identity");
  c.ablate_cefeat = kv.flag("ablate_cefeat");
  c.ablate_flow = kv.flag("ablate_flow");
  c.ablate_active = kv.flag("ablate_active");
  c.ablate_root_init = kv.flag("ablate_root_init");
  c.ablate_mlp_delta = kv.flag("ablate_mlp_delta");
  c.ablate_gauss_skin = kv.flag("ablate_gauss_skin");
  c.checkpoint_every = (int64_t)kv.num("checkpoint_every");
  c.preview_every = (int64_t)kv.num("preview_every");
  c.init_bound = kv.num("init_bound");
  c.eval_mesh_res = kv.integer("eval_mesh_res");
  c.eval_samples = kv.integer("eval_samples");
  c.icp_iters = kv.integer("icp_iters");
  c.threads = kv.integer("threads");
  if (c.threads < 1) fail(Err::Config, "threads must be >= 1");
  if (c.rays_per_batch <= 0 || c.samples_per_ray < 2)
    fail(Err::Config, "batch sizes must be positive");
  if (!(c.beta_start > 0) || !(c.beta_end > 0)) fail(Err::Config, "beta must be positive");
  return c;
}

int64_t iteration_budget(int64_t num_frames, int64_t n_uniform, int64_t n_active,
                         int64_t floor_iters) {
  if (num_frames <= 0 || n_uniform <= 0 || n_active < 0)
    fail(Err::Config, "iteration_budget needs positive inputs");
  double k = 1000.0 * (double)num_frames / (double)(n_uniform + n_active);
  int64_t budget = (int64_t)std::llround(k) * 1000;
  return std::max(budget, floor_iters);
}

std::vector<geom::SE3> init_root_poses(const dataset::Dataset& ds, RootInitMode mode,
                                       double theta_max_rad, uint64_t seed) {
  std::vector<geom::SE3> out;
  out.reserve(ds.total_frames);
  std::mt19937_64 rng(hash_mix(seed, 0x9007ULL));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int t = 0; t < ds.total_frames; ++t) {
    geom::SE3 g;
    if (mode == RootInitMode::Identity) {
      g.rot = {0, 0, 0};
    } else {
      Vec3 axis = {gauss(rng), gauss(rng), gauss(rng)};
      double n = norm(axis);
      if (n < 1e-9) axis = {1, 0, 0}; else axis = axis / n;
      double ang = theta_max_rad * uni(rng);
      Mat3 noisy = geom::rodrigues(ang * axis) * geom::rodrigues(ds.frame(t).gt_root.rot);
      g.rot = geom::rotation_log(noisy);
    }
    g.trans = {0, 0, 3};
    out.push_back(g);
  }
  return out;
}

double geodesic_distance(const geom::SE3& a, const geom::SE3& b) {
  return geom::geodesic_distance(geom::rodrigues(a.rot), geom::rodrigues(b.rot));
}

namespace {

std::string frame_key(const char* prefix, int t) {
  return std::string(prefix) + "/f" + std::to_string(t);
}
std::string video_key(const char* prefix, int v) {
  return std::string(prefix) + "/v" + std::to_string(v);
}

void init_uniform(std::vector<double>& v, double lo, double hi, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& x : v) x = d(rng);
}

canonical::CanonicalConfig canon_config(const FitConfig& c) {
  canonical::CanonicalConfig cc;
  cc.pe_xyz = c.pe_xyz;
  cc.pe_view = c.pe_view;
  cc.width = c.mlp_width;
  cc.depth = c.mlp_depth;
  cc.beta_init = c.beta_start;
  return cc;
}

warp::WarpConfig warp_config(const FitConfig& c) {
  warp::WarpConfig wc;
  wc.bones = c.bones;
  wc.pe_xyz = c.pe_xyz;
  wc.pose_width = c.pose_width;
  wc.pose_depth = c.pose_depth;
  wc.skin_width = c.skin_width;
  wc.skin_depth = c.skin_depth;
  wc.use_mlp_delta = !c.ablate_mlp_delta;
  wc.use_gauss_skin = !c.ablate_gauss_skin;
  return wc;
}

}  // namespace

Model Model::build(const dataset::Dataset& ds, const config::KeyValues& keyvals) {
  Model m;
  m.kv = keyvals;
  m.cfg = FitConfig::from(keyvals);
  const FitConfig& c = m.cfg;
  m.n_videos = (int)ds.videos.size();
  m.width = ds.width;
  m.height = ds.height;
  m.scale_cm = ds.scale_cm;
  m.total_frames = ds.total_frames;
  m.flat = ds.flat;
  for (const auto& v : ds.videos) m.frames_per_video.push_back((int)v.frames.size());
  m.bounds.lo = {-c.init_bound, -c.init_bound, -c.init_bound};
  m.bounds.hi = {c.init_bound, c.init_bound, c.init_bound};

  m.canon = canonical::CanonicalModel(m.store, canon_config(c), c.seed);
  m.warp_model = warp::WarpModel(m.store, warp_config(c), c.seed);
  m.uncert = objective::UncertaintyNet(m.store, c.uncert_width, c.uncert_depth, c.pe_uncert,
                                       c.seed);
  m.alpha_id = m.store.add("alpha_s/log", {1}, Group::Scalar);
  m.store.value(m.alpha_id)[0] = std::log(c.alpha_init);

  m.rest_id = m.store.add("code/body_rest", {128}, Group::Codes);
  init_uniform(m.store.value(m.rest_id), -0.05, 0.05, hash_mix(c.seed, 400));

  for (int v = 0; v < m.n_videos; ++v) {
    int env = m.store.add(video_key("code/env", v), {64}, Group::Codes);
    init_uniform(m.store.value(env), -0.05, 0.05, hash_mix(c.seed, 500 + v));
    m.env_ids.push_back(env);
    int cam = m.store.add(video_key("cam/logf", v), {2}, Group::Cam);
    m.store.value(cam)[0] = std::log(ds.videos[v].cam.fx);
    m.store.value(cam)[1] = std::log(ds.videos[v].cam.fy);
    m.cam_ids.push_back(cam);
    m.cam_cx.push_back(ds.videos[v].cam.cx);
    m.cam_cy.push_back(ds.videos[v].cam.cy);
  }

  RootInitMode mode = (c.ablate_root_init || c.root_init == "identity")
                          ? RootInitMode::Identity
                          : RootInitMode::GroundTruthNoisy;
  auto g0 = init_root_poses(ds, mode, c.theta_max_deg * kPi / 180.0, c.seed);

  for (int t = 0; t < m.total_frames; ++t) {
    int r = m.store.add(frame_key("code/root", t), {128}, Group::Codes);
    init_uniform(m.store.value(r), -0.05, 0.05, hash_mix(c.seed, 1000 + t));
    m.root_ids.push_back(r);
    int b = m.store.add(frame_key("code/body", t), {128}, Group::Codes);
    init_uniform(m.store.value(b), -0.05, 0.05, hash_mix(c.seed, 2000 + t));
    m.body_ids.push_back(b);
    int g = m.store.add(frame_key("g0", t), {6}, Group::Fixed);
    auto& gv = m.store.value(g);
    gv = {g0[t].rot.x, g0[t].rot.y, g0[t].rot.z, g0[t].trans.x, g0[t].trans.y, g0[t].trans.z};
    m.g0_ids.push_back(g);

    const auto& obs = ds.frame(t);
    int f = m.store.add(frame_key("feat", t), {m.height, m.width, 16}, Group::Feat);
    auto& fv = m.store.value(f);
    if ((int)obs.feat.data.size() != m.height * m.width * 16)
      fail(Err::SizeMismatch, "feature image size mismatch at frame " + std::to_string(t));
    for (size_t i = 0; i < fv.size(); i += 16) {
      double n2 = 0;
      for (int k = 0; k < 16; ++k) n2 += obs.feat.data[i + k] * obs.feat.data[i + k];
      if (n2 > 1e-12) {
        double inv = 1.0 / std::sqrt(n2);
        for (int k = 0; k < 16; ++k) fv[i + k] = obs.feat.data[i + k] * inv;
      }  // background pixels stay zero and are excluded from matching
    }
    m.feat_ids.push_back(f);
  }
  m.grid = embed::refresh_grid(m.canon, m.store, m.bounds, c.grid_res);
  return m;
}

void Model::save(const std::string& path) const {
  std::vector<std::pair<std::string, std::string>> meta;
  meta.emplace_back("config", kv.snapshot());
  std::ostringstream shape;
  shape.precision(17);
  shape << n_videos << " " << width << " " << height << " " << scale_cm << " " << total_frames
        << " " << iteration << "\n";
  for (int v = 0; v < n_videos; ++v)
    shape << frames_per_video[v] << " " << cam_cx[v] << " " << cam_cy[v] << "\n";
  shape << bounds.lo.x << " " << bounds.lo.y << " " << bounds.lo.z << " " << bounds.hi.x << " "
        << bounds.hi.y << " " << bounds.hi.z << "\n";
  meta.emplace_back("shape", shape.str());
  store.save(path, meta);
}

Model Model::load(const std::string& path) {
  std::vector<std::pair<std::string, std::string>> meta;
  ParamStore loaded = ParamStore::load(path, &meta);
  std::string config_text, shape_text;
  for (auto& [k, v] : meta) {
    if (k == "config") config_text = v;
    if (k == "shape") shape_text = v;
  }
  if (config_text.empty() || shape_text.empty())
    fail(Err::Checkpoint, "checkpoint missing metadata: " + path);

  Model m;
  m.kv = default_config();
  m.kv.parse_text(config_text, path + "#config");
  m.cfg = FitConfig::from(m.kv);
  m.store = std::move(loaded);

  std::istringstream ss(shape_text);
  ss >> m.n_videos >> m.width >> m.height >> m.scale_cm >> m.total_frames >> m.iteration;
  m.frames_per_video.resize(m.n_videos);
  m.cam_cx.resize(m.n_videos);
  m.cam_cy.resize(m.n_videos);
  for (int v = 0; v < m.n_videos; ++v) ss >> m.frames_per_video[v] >> m.cam_cx[v] >> m.cam_cy[v];
  ss >> m.bounds.lo.x >> m.bounds.lo.y >> m.bounds.lo.z >> m.bounds.hi.x >> m.bounds.hi.y >>
      m.bounds.hi.z;
  if (!ss) fail(Err::Checkpoint, "malformed checkpoint shape metadata: " + path);
  for (int v = 0; v < m.n_videos; ++v)
    for (int f = 0; f < m.frames_per_video[v]; ++f) m.flat.push_back({v, f});

  // Re-bind module wrappers onto the loaded tensors.
  m.canon = canonical::CanonicalModel(m.store, canon_config(m.cfg), m.cfg.seed);
  m.warp_model = warp::WarpModel(m.store, warp_config(m.cfg), m.cfg.seed);
  m.uncert = objective::UncertaintyNet(m.store, m.cfg.uncert_width, m.cfg.uncert_depth,
                                       m.cfg.pe_uncert, m.cfg.seed);
  m.alpha_id = m.store.id("alpha_s/log");
  m.rest_id = m.store.id("code/body_rest");
  for (int v = 0; v < m.n_videos; ++v) {
    m.env_ids.push_back(m.store.id(video_key("code/env", v)));
    m.cam_ids.push_back(m.store.id(video_key("cam/logf", v)));
  }
  for (int t = 0; t < m.total_frames; ++t) {
    m.root_ids.push_back(m.store.id(frame_key("code/root", t)));
    m.body_ids.push_back(m.store.id(frame_key("code/body", t)));
    m.g0_ids.push_back(m.store.id(frame_key("g0", t)));
    m.feat_ids.push_back(m.store.id(frame_key("feat", t)));
  }
  m.grid = embed::refresh_grid(m.canon, m.store, m.bounds, m.cfg.grid_res);
  return m;
}

void Model::adopt_shared(const ParamStore& trained) {
  static const char* kShared[] = {"mlp_sdf/", "mlp_col/", "mlp_psi/", "mlp_g/", "mlp_j/",
                                  "mlp_delta/", "mlp_u/", "bones/", "beta/", "alpha_s/",
                                  "code/body_rest"};
  for (const auto& t : trained.tensors()) {
    bool shared = false;
    for (const char* p : kShared)
      if (t.name.rfind(p, 0) == 0) { shared = true; break; }
    if (!shared) continue;
    if (!store.has(t.name)) fail(Err::Checkpoint, "shape mismatch adopting " + t.name);
    auto& dst = store.value(store.id(t.name));
    if (dst.size() != t.v.size()) fail(Err::Checkpoint, "shape mismatch adopting " + t.name);
    dst = t.v;
  }
}

geom::Camera Model::camera(int video) const {
  geom::Camera cam;
  cam.fx = std::exp(store.value(cam_ids[video])[0]);
  cam.fy = std::exp(store.value(cam_ids[video])[1]);
  cam.cx = cam_cx[video];
  cam.cy = cam_cy[video];
  cam.width = width;
  cam.height = height;
  return cam;
}

geom::SE3 Model::g0_pose(int t) const {
  const auto& g = store.value(g0_ids[t]);
  return {{g[0], g[1], g[2]}, {g[3], g[4], g[5]}};
}

warp::FramePose Model::make_pose(int t) const {
  return warp_model.pose_frame(store, store.value(root_ids[t]), store.value(body_ids[t]),
                               store.value(rest_id), g0_pose(t), root_ids[t], body_ids[t],
                               rest_id);
}

std::map<int, std::pair<double, double>> compute_nearfar(Model& m,
                                                         const std::vector<int>& frames) {
  std::map<int, std::pair<double, double>> out;
  embed::Bounds iso = m.bounds.isotropic();
  for (int t : frames) {
    geom::SE3 g = m.warp_model.root_pose(m.store, m.store.value(m.root_ids[t]), m.g0_pose(t));
    out[t] = render::near_far(geom::rodrigues(g.rot), g.trans, iso.lo, iso.hi);
  }
  return out;
}

namespace {

struct BatchState {
  std::map<int, warp::FramePose> poses;
  std::map<int, warp::FramePoseGrad> pose_grads;
  std::map<int, render::CameraGrad> cam_grads;  // per video
  render::RayWork work;
  render::RayUpstream up;
  embed::MatchTape mtape;
  warp::WarpTape flow_tape, cyc2d_tape;
};

const warp::FramePose& pose_for(Model& m, BatchState& bs, int t, bool backward) {
  auto it = bs.poses.find(t);
  if (it != bs.poses.end()) return it->second;
  auto [it2, fresh] = bs.poses.emplace(t, m.make_pose(t));
  if (backward && fresh) {
    auto [git, gfresh] = bs.pose_grads.emplace(t, warp::FramePoseGrad{});
    if (gfresh) git->second.resize(m.cfg.bones);
  }
  return it2->second;
}

int flow_target(const dataset::Dataset& ds, const objective::PixelSample& s) {
  if (s.flow_slot < 0) return -1;
  const auto& obs = ds.frame(s.t);
  int tn = obs.index + dataset::Dataset::kFlowOffset[s.flow_slot];
  if (tn < 0 || tn >= (int)ds.videos[obs.video].frames.size()) return -1;
  return ds.videos[obs.video].frames[tn].global;
}

}  // namespace

objective::LossReport evaluate_batch(Model& m, const dataset::Dataset& ds,
                                     const objective::SampleSet& set, const BatchOptions& opt) {
  const FitConfig& c = m.cfg;
  objective::LossReport rep;
  rep.weights = opt.weights;
  rep.n_pixels = (int)set.samples.size();
  if (set.samples.empty()) return rep;

  const bool match_on = opt.enable_match && (opt.weights.match > 0 || opt.weights.cyc2d > 0);
  const bool flow_on = opt.enable_flow && opt.weights.flow > 0;
  const bool cyc3d_on = opt.enable_cyc3d && opt.weights.cyc3d > 0;

  if (match_on) {
    // The cache must track the current embedding parameters.
    for (int i = 0; i < m.grid.count(); ++i)
      m.canon.eval_embedding(m.store, m.grid.points[i],
                             std::span(m.grid.psi.data() + (size_t)i * 16, 16));
  }

  // Fixed denominators, known before marching.
  int n_flow_elig = 0, n_feat_elig = 0;
  std::vector<uint8_t> on_sil(set.samples.size()), feat_ok(set.samples.size());
  std::vector<int> tprime(set.samples.size(), -1);
  for (size_t i = 0; i < set.samples.size(); ++i) {
    const auto& s = set.samples[i];
    const auto& obs = ds.frame(s.t);
    on_sil[i] = obs.sil.at(s.x, s.y, 0) > 0.5;
    double n2 = 0;
    const auto& fv = m.store.value(m.feat_ids[s.t]);
    const double* fp = fv.data() + ((size_t)s.y * m.width + s.x) * 16;
    for (int k = 0; k < 16; ++k) n2 += fp[k] * fp[k];
    feat_ok[i] = n2 > 1e-12;
    tprime[i] = flow_target(ds, s);
    if (flow_on && on_sil[i] && tprime[i] >= 0) ++n_flow_elig;
    if (match_on && on_sil[i] && feat_ok[i]) ++n_feat_elig;
  }
  const double inv_n = 1.0 / (double)set.samples.size();
  const double inv_flow = n_flow_elig > 0 ? 1.0 / n_flow_elig : 0.0;
  const double inv_feat = n_feat_elig > 0 ? 1.0 / n_feat_elig : 0.0;

  BatchState bs;
  render::RenderConfig rc;
  rc.samples_per_ray = c.samples_per_ray;
  rc.tau_min = c.tau_min;

  std::mt19937_64 jitter_rng(hash_mix(opt.jitter_seed, 0x1177ULL));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> jitter(c.samples_per_ray);
  std::vector<double> domega(64, 0.0);
  std::vector<double> dpsi_pix(16, 0.0);

  if (opt.backward && match_on) m.grid.clear_grads();

  for (size_t i = 0; i < set.samples.size(); ++i) {
    const auto& s = set.samples[i];
    const auto& obs = ds.frame(s.t);
    const int video = obs.video;
    geom::Camera cam = m.camera(video);
    const warp::FramePose& pose = pose_for(m, bs, s.t, opt.backward);

    std::pair<double, double> nf;
    if (opt.fixed_nearfar) {
      auto it = opt.fixed_nearfar->find(s.t);
      if (it == opt.fixed_nearfar->end()) fail(Err::InvalidNearFar, "missing fixed near/far");
      nf = it->second;
    } else {
      embed::Bounds iso = m.bounds.isotropic();
      nf = render::near_far(pose.G_R, pose.G_t, iso.lo, iso.hi);
    }

    geom::Ray ray = geom::pixel_ray(cam, {(double)s.x, (double)s.y});
    const double* jit = nullptr;
    if (opt.jitter) {
      for (int k = 0; k < c.samples_per_ray; ++k) jitter[k] = uni(jitter_rng);
      jit = jitter.data();
    }
    march_ray(m.canon, m.warp_model, m.store, pose, ray, m.store.value(m.env_ids[video]),
              nf.first, nf.second, c.samples_per_ray, jit, bs.work, opt.backward);
    render_pixel(rc, bs.work);
    if (cyc3d_on) forward_cycle(m.warp_model, m.store, pose, bs.work, opt.backward);

    if (opt.backward) {
      bs.up.resize(bs.work.n);
      bs.up.clear();
    }

    // Reconstruction terms (all sampled pixels).
    Vec3 chat = {obs.rgb.at(s.x, s.y, 0), obs.rgb.at(s.x, s.y, 1), obs.rgb.at(s.x, s.y, 2)};
    double shat = obs.sil.at(s.x, s.y, 0) > 0.5 ? 1.0 : 0.0;
    Vec3 cres = bs.work.color_pix - chat;
    double sres = bs.work.opacity - shat;
    double rgb_err = norm2(cres);
    rep.rgb += rgb_err * inv_n;
    rep.sil += sres * sres * inv_n;
    if (opt.per_sample_rgb_err) (*opt.per_sample_rgb_err)[i] = rgb_err;
    if (opt.backward) {
      bs.up.dcolor += (2.0 * opt.weights.rgb * inv_n) * cres;
      bs.up.dopacity += 2.0 * opt.weights.sil * inv_n * sres;
    }

    // 3D cycle consistency, per-ray normalized.
    if (cyc3d_on && bs.work.n > 0) {
      double denom = std::max(bs.work.opacity, c.tau_min);
      double acc = 0;
      for (int k = 0; k < bs.work.n; ++k) {
        const auto& sm = bs.work.s[k];
        if (!sm.has_cyc) continue;
        acc += sm.tau * norm2(sm.cyc_out - sm.xt);
      }
      double contrib = acc / denom;
      rep.cyc3d += contrib * inv_n;
      if (opt.backward) {
        double wsc = opt.weights.cyc3d * inv_n;
        bool denom_is_o = bs.work.opacity > c.tau_min;
        for (int k = 0; k < bs.work.n; ++k) {
          auto& sm = bs.work.s[k];
          if (!sm.has_cyc) continue;
          double e = norm2(sm.cyc_out - sm.xt);
          bs.up.dtau[k] += wsc * (e - (denom_is_o ? contrib : 0.0)) / denom;
          Vec3 de = (wsc * 2.0 * sm.tau / denom) * (sm.cyc_out - sm.xt);
          bs.up.dcyc[k] += de;
          bs.up.dxt[k] += -de;
        }
      }
    }

    const bool rendered_valid = bs.work.xstar_valid;

    // Flow reconstruction.
    if (flow_on && on_sil[i] && tprime[i] >= 0) {
      bool ok = rendered_valid;
      Vec2 fres{};
      if (ok) {
        const warp::FramePose& pose_p = pose_for(m, bs, tprime[i], opt.backward);
        Vec3 xp = m.warp_model.warp_forward_pt(m.store, pose_p, bs.work.xstar_pix,
                                               opt.backward ? &bs.flow_tape : nullptr);
        if (xp.z <= 0) {
          ok = false;
          ++rep.n_skipped_depth;
        } else {
          Vec2 px_p = geom::project(cam, xp);
          Vec2 flow_obs = {obs.flow[s.flow_slot].at(s.x, s.y, 0),
                           obs.flow[s.flow_slot].at(s.x, s.y, 1)};
          Vec2 flow_render = {px_p.x - (double)s.x, px_p.y - (double)s.y};
          fres = flow_render - flow_obs;
          rep.flow += (fres.x * fres.x + fres.y * fres.y) * inv_flow;
          ++rep.n_flow_valid;
          if (opt.backward) {
            Vec2 dpx = {2.0 * opt.weights.flow * inv_flow * fres.x,
                        2.0 * opt.weights.flow * inv_flow * fres.y};
            Vec3 dxp{};
            auto& cg = bs.cam_grads[video];
            geom::project_vjp(cam, xp, dpx, dxp, cg.dfx, cg.dfy);
            Vec3 dxstar{};
            m.warp_model.warp_forward_vjp(m.store, pose_p, bs.flow_tape, dxp,
                                          bs.pose_grads[tprime[i]], &dxstar);
            bs.up.dxstar += dxstar;
          }
        }
      }
    }

    // Canonical-embedding registration.
    if (match_on && on_sil[i] && feat_ok[i] && rendered_valid) {
      const auto& fv = m.store.value(m.feat_ids[s.t]);
      const double* fp = fv.data() + ((size_t)s.y * m.width + s.x) * 16;
      double alpha = m.alpha_s();
      Vec3 xhat = embed::match_soft_argmax(std::span(fp, 16), m.grid, alpha,
                                           opt.backward ? &bs.mtape : nullptr);
      Vec3 mres = bs.work.xstar_pix - xhat;
      rep.match += norm2(mres) * inv_feat;
      ++rep.n_match_valid;
      Vec3 dxhat{};
      bool have_2d = false;
      Vec2 r2{};
      Vec3 x2{};
      if (opt.weights.cyc2d > 0) {
        x2 = m.warp_model.warp_forward_pt(m.store, pose, xhat,
                                          opt.backward ? &bs.cyc2d_tape : nullptr);
        if (x2.z <= 0) {
          ++rep.n_skipped_depth;
        } else {
          Vec2 px2 = geom::project(cam, x2);
          r2 = {px2.x - (double)s.x, px2.y - (double)s.y};
          double sq = (r2.x * r2.x + r2.y * r2.y) * inv_feat;
          rep.cyc2d += sq;
          rep.cyc2d_norm += sq / ((double)m.width * m.width);
          have_2d = true;
        }
      }
      if (opt.backward) {
        Vec3 dmres = (2.0 * opt.weights.match * inv_feat) * mres;
        bs.up.dxstar += dmres;
        dxhat += -dmres;
        if (have_2d) {
          // weight in normalized pixel units (px / width)
          double sc = 2.0 * opt.weights.cyc2d * inv_feat / ((double)m.width * m.width);
          Vec2 dpx2 = {sc * r2.x, sc * r2.y};
          Vec3 dx2{};
          auto& cg = bs.cam_grads[video];
          geom::project_vjp(cam, x2, dpx2, dx2, cg.dfx, cg.dfy);
          m.warp_model.warp_forward_vjp(m.store, pose, bs.cyc2d_tape, dx2,
                                        bs.pose_grads[s.t], &dxhat);
        }
        std::fill(dpsi_pix.begin(), dpsi_pix.end(), 0.0);
        double dalpha = 0;
        embed::match_soft_argmax_vjp(m.grid, alpha, bs.mtape, dxhat, dpsi_pix, m.grid,
                                     dalpha);
        m.store.grad(m.alpha_id)[0] += dalpha * alpha;
        auto& fg = m.store.grad(m.feat_ids[s.t]);
        double* fgp = fg.data() + ((size_t)s.y * m.width + s.x) * 16;
        for (int k = 0; k < 16; ++k) fgp[k] += dpsi_pix[k];
      }
    }

    if (opt.backward) {
      if (!rendered_valid) bs.up.dxstar = {0, 0, 0};  // low-opacity pixels drop feature terms
      std::fill(domega.begin(), domega.end(), 0.0);
      auto& cg = bs.cam_grads[video];
      render::ray_backward(m.canon, m.warp_model, m.store, pose, rc, cam, domega, bs.work,
                           bs.up, bs.pose_grads[s.t], cg);
      auto& envg = m.store.grad(m.env_ids[video]);
      for (int k = 0; k < 64; ++k) envg[k] += domega[k];
    }
  }

  if (opt.backward) {
    if (match_on) embed::grid_flush_gradients(m.canon, m.store, m.grid);
    for (auto& [t, pg] : bs.pose_grads)
      m.warp_model.pose_frame_backward(m.store, bs.poses.at(t), pg);
    for (auto& [v, cg] : bs.cam_grads) {
      auto& g = m.store.grad(m.cam_ids[v]);
      geom::Camera cam = m.camera(v);
      g[0] += cg.dfx * cam.fx;  // log-focal parameterization
      g[1] += cg.dfy * cam.fy;
    }
  }
  return rep;
}

double uncertainty_step(Model& m, const objective::SampleSet& set,
                        std::span<const double> rgb_err, bool backward) {
  if (set.samples.empty()) return 0.0;
  double acc = 0;
  const double inv_n = 1.0 / (double)set.samples.size();
  nnet::MlpTape tape;
  for (size_t i = 0; i < set.samples.size(); ++i) {
    const auto& s = set.samples[i];
    double xn = 2.0 * s.x / std::max(1, m.width - 1) - 1.0;
    double yn = 2.0 * s.y / std::max(1, m.height - 1) - 1.0;
    double tn = m.total_frames > 1 ? 2.0 * s.t / (m.total_frames - 1) - 1.0 : 0.0;
    double u = m.uncert.predict(m.store, xn, yn, tn, backward ? &tape : nullptr);
    double r = rgb_err[i] - u;
    acc += std::abs(r) * inv_n;
    if (backward) {
      double du = (r > 0 ? -1.0 : (r < 0 ? 1.0 : 0.0)) * m.cfg.weights.uncert * inv_n;
      m.uncert.backward(m.store, tape, du);
    }
  }
  return acc;
}

namespace {

double lr_decay(int64_t iter, int64_t total, double floor) {
  if (total <= 1) return 1.0;
  double prog = std::min(1.0, (double)iter / (double)(total - 1));
  return floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(kPi * prog));
}

}  // namespace

void renormalize_features(Model& m) {
  for (int t = 0; t < m.total_frames; ++t) {
    auto& fv = m.store.value(m.feat_ids[t]);
    for (size_t i = 0; i < fv.size(); i += 16) {
      double n2 = 0;
      for (int k = 0; k < 16; ++k) n2 += fv[i + k] * fv[i + k];
      if (n2 > 1e-18) {
        double inv = 1.0 / std::sqrt(n2);
        for (int k = 0; k < 16; ++k) fv[i + k] *= inv;
      }
    }
  }
}

namespace {

void refresh_bounds(Model& m) {
  embed::Bounds probe = m.bounds;
  Vec3 margin = 0.5 * (probe.hi - probe.lo);
  probe.lo -= margin;
  probe.hi += margin;
  try {
    mesh::TriMesh surf = mesh::extract_isosurface(
        [&](Vec3 p) { return m.canon.eval_sdf(m.store, p); }, probe, m.cfg.mc_res);
    m.bounds = embed::update_bounds_from_surface(surf.vertices);
  } catch (const Error& e) {
    if (e.code != Err::EmptySurface) throw;
    // geometry collapsed or grew past the probe; keep previous bounds
  }
  m.grid = embed::refresh_grid(m.canon, m.store, m.bounds, m.cfg.grid_res);
}

}  // namespace

FitResult run_fit(Model& m, const dataset::Dataset& ds, const std::string& out_dir,
                  bool retarget_mode) {
  const FitConfig& c = m.cfg;
  fs::create_directories(out_dir);
  std::ofstream log(out_dir + "/metrics.log", m.iteration > 0 ? std::ios::app : std::ios::trunc);
  if (!log) fail(Err::Io, "cannot write metrics log in " + out_dir);
  log.precision(10);

  const int64_t total = c.iterations > 0
                            ? c.iterations
                            : iteration_budget(m.total_frames, c.rays_per_batch,
                                               c.active_rays, c.budget_floor);
  const int64_t warmup_end = retarget_mode ? 0 : (int64_t)(c.warmup_frac * (double)total);
  const bool active_enabled = !c.ablate_active && !retarget_mode;

  objective::LossReport last;
  std::vector<double> rgb_err;
  auto t_start = std::chrono::steady_clock::now();

  for (int64_t iter = m.iteration; iter < total; ++iter) {
    auto t0 = std::chrono::steady_clock::now();
    // Bound refinement starts once the shape has had a chance to grow inside
    // the loose initial bounds; refining at iteration 0 would collapse the
    // sampling window onto the initial sphere.
    if (!retarget_mode && iter > 0 && iter % c.refresh_every == 0) refresh_bounds(m);

    // Geometric beta anneal over the first half, learnable afterwards.
    if (!retarget_mode && iter * 2 < total) {
      double prog = (double)iter / std::max<double>(1.0, (double)(total / 2));
      double beta = c.beta_start * std::pow(c.beta_end / c.beta_start, prog);
      m.store.value(m.canon.log_beta_id())[0] = std::log(beta);
    }

    const bool warmup = iter < warmup_end;
    auto scorer = [&](int x, int y, int t) {
      double xn = 2.0 * x / std::max(1, m.width - 1) - 1.0;
      double yn = 2.0 * y / std::max(1, m.height - 1) - 1.0;
      double tn = m.total_frames > 1 ? 2.0 * t / (m.total_frames - 1) - 1.0 : 0.0;
      return m.uncert.predict(m.store, xn, yn, tn);
    };
    objective::SampleSet set =
        objective::sample_pixels(ds, iter, total, c.rays_per_batch, c.active_rays,
                                 c.active_pool, c.seed, scorer, active_enabled);

    BatchOptions opt;
    opt.weights = c.weights;
    if (c.ablate_flow) opt.weights.flow = 0;
    if (c.ablate_cefeat) { opt.weights.match = 0; opt.weights.cyc2d = 0; }
    if (warmup) { opt.weights.match = 0; opt.weights.cyc2d = 0; opt.weights.cyc3d = 0; }
    opt.enable_match = opt.weights.match > 0 || opt.weights.cyc2d > 0;
    opt.enable_flow = opt.weights.flow > 0;
    opt.enable_cyc3d = opt.weights.cyc3d > 0;
    opt.backward = true;
    opt.jitter = true;
    opt.jitter_seed = hash_mix(c.seed, 0xabc0 + (uint64_t)iter);
    rgb_err.assign(set.samples.size(), 0.0);
    opt.per_sample_rgb_err = &rgb_err;

    objective::LossReport rep = evaluate_batch(m, ds, set, opt);
    rep.uncert = uncertainty_step(m, set, rgb_err, true);
    if (!rep.finite()) {
      m.iteration = iter;
      m.save(out_dir + "/diverged.ckpt");
      fail(Err::DivergedLoss, "non-finite loss at iteration " + std::to_string(iter) +
                                  " (state dumped to diverged.ckpt)");
    }

    const double decay = lr_decay(iter, total, c.lr_decay_floor);
    m.store.adam_step([&](const nnet::Tensor& t) -> double {
      if (t.group == Group::Fixed) return 0.0;
      if (retarget_mode) {
        bool code = t.name.rfind("code/env/", 0) == 0 || t.name.rfind("code/root/", 0) == 0 ||
                    t.name.rfind("code/body/", 0) == 0;
        return code ? c.lr_codes * decay : 0.0;
      }
      if (warmup && t.name.rfind("mlp_delta/", 0) == 0) return 0.0;
      switch (t.group) {
        case Group::Mlp: return c.lr_mlp * decay;
        case Group::Cam: return c.lr_cam * decay;
        case Group::Feat:
        case Group::Codes:
        case Group::Bones:
        case Group::Scalar: return c.lr_codes * decay;
        default: return 0.0;
      }
    });
    m.store.zero_grads();
    if (opt.enable_match && !retarget_mode) renormalize_features(m);
    m.iteration = iter + 1;
    last = rep;

    auto t1 = std::chrono::steady_clock::now();
    double wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    log << "iter=" << iter << " total=" << rep.total() << " rgb=" << rep.rgb
        << " sil=" << rep.sil << " of=" << rep.flow << " match=" << rep.match
        << " cyc2d=" << rep.cyc2d << " cyc3d=" << rep.cyc3d << " lu=" << rep.uncert
        << " beta=" << m.canon.beta(m.store) << " alpha_s=" << m.alpha_s()
        << " nflow=" << rep.n_flow_valid << " nmatch=" << rep.n_match_valid
        << " wall_ms=" << wall_ms << "\n";

    if (c.checkpoint_every > 0 && (iter + 1) % c.checkpoint_every == 0) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "/checkpoint_%06lld.ckpt", (long long)(iter + 1));
      m.save(out_dir + buf);
    }
    if (c.preview_every > 0 && (iter + 1) % c.preview_every == 0) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "/preview_%06lld.ppm", (long long)(iter + 1));
      auto [rgb, opa] = render_view(m, m.make_pose(0), m.store.value(m.env_ids[0]),
                                    m.camera(0), c.samples_per_ray, c.threads);
      io::write_ppm(out_dir + buf, rgb);
    }
  }
  // Final losses measured on a uniform forward-only batch: the in-loop
  // reports oversample high-uncertainty pixels once active sampling starts.
  objective::SampleSet final_set = objective::sample_pixels(
      ds, total, std::max<int64_t>(total, 1), 4 * c.rays_per_batch, 0, 0,
      hash_mix(c.seed, 0xf1a1ULL), [](int, int, int) { return 0.0; }, false);
  BatchOptions fopt;
  fopt.weights = c.weights;
  if (c.ablate_flow) fopt.weights.flow = 0;
  if (c.ablate_cefeat) { fopt.weights.match = 0; fopt.weights.cyc2d = 0; }
  fopt.enable_match = fopt.weights.match > 0 || fopt.weights.cyc2d > 0;
  fopt.enable_flow = fopt.weights.flow > 0;
  fopt.enable_cyc3d = fopt.weights.cyc3d > 0;
  objective::LossReport final_rep = evaluate_batch(m, ds, final_set, fopt);
  final_rep.uncert = last.uncert;

  auto t_end = std::chrono::steady_clock::now();
  log << "# final total=" << final_rep.total() << " rgb=" << final_rep.rgb
      << " sil=" << final_rep.sil << " of=" << final_rep.flow << " match=" << final_rep.match
      << " cyc2d=" << final_rep.cyc2d << " cyc3d=" << final_rep.cyc3d << "\n";
  log << "# done iterations=" << total << " wall_s="
      << std::chrono::duration<double>(t_end - t_start).count() << "\n";

  FitResult res;
  res.final_report = final_rep;
  res.iterations = total;
  res.checkpoint_path = out_dir + "/checkpoint_final.ckpt";
  m.save(res.checkpoint_path);
  return res;
}

mesh::TriMesh extract_canonical_mesh(const Model& m, int resolution, bool embed_colors) {
  embed::Bounds probe = m.bounds;
  Vec3 margin = 0.15 * (probe.hi - probe.lo);
  probe.lo -= margin;
  probe.hi += margin;
  mesh::TriMesh mesh = mesh::extract_isosurface(
      [&](Vec3 p) { return m.canon.eval_sdf(m.store, p); }, probe, resolution);
  if (embed_colors) {
    mesh.colors.resize(mesh.vertices.size());
    std::vector<double> psi(16);
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
      m.canon.eval_embedding(m.store, mesh.vertices[i], psi);
      mesh.colors[i] = {0.5 + 0.5 * psi[0], 0.5 + 0.5 * psi[1], 0.5 + 0.5 * psi[2]};
    }
  }
  return mesh;
}

mesh::TriMesh extract_posed_mesh(const Model& m, int frame, int resolution, bool embed_colors) {
  mesh::TriMesh rest = extract_canonical_mesh(m, resolution, embed_colors);
  warp::FramePose pose = m.make_pose(frame);
  return mesh::pose_mesh(rest, [&](Vec3 v) {
    return m.warp_model.warp_forward_pt(m.store, pose, v);
  });
}

std::string bone_dump(const Model& m, int frame) {
  warp::FramePose pose = m.make_pose(frame);
  std::ostringstream ss;
  ss.precision(9);
  const auto& logscale = m.store.value(m.warp_model.logscale_id());
  for (int b = 0; b < m.cfg.bones; ++b) {
    const warp::PosedBone& pb = pose.bones_t[b];
    Vec3 aa = geom::rotation_log(pb.V);
    ss << pb.C.x << " " << pb.C.y << " " << pb.C.z << " " << aa.x << " " << aa.y << " "
       << aa.z << " " << std::exp(logscale[3 * b]) << " " << std::exp(logscale[3 * b + 1])
       << " " << std::exp(logscale[3 * b + 2]) << "\n";
  }
  return ss.str();
}

io::Image render_flow_image(const Model& m, int frame, int frame_to, int n_samples) {
  if (m.flat[frame].first != m.flat[frame_to].first)
    fail(Err::Config, "flow rendering needs both frames in the same video");
  int video = m.flat[frame].first;
  geom::Camera cam = m.camera(video);
  warp::FramePose pose = m.make_pose(frame);
  warp::FramePose pose_to = m.make_pose(frame_to);
  embed::Bounds iso = m.bounds.isotropic();
  auto nf = render::near_far(pose.G_R, pose.G_t, iso.lo, iso.hi);
  render::RenderConfig rc;
  rc.samples_per_ray = n_samples;
  rc.tau_min = m.cfg.tau_min;
  io::Image flow;
  flow.width = cam.width;
  flow.height = cam.height;
  flow.channels = 2;
  flow.data.assign((size_t)cam.width * cam.height * 2, 0.0);
  render::RayWork work;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      geom::Ray ray = geom::pixel_ray(cam, {(double)x, (double)y});
      march_ray(m.canon, m.warp_model, m.store, pose, ray, m.store.value(m.env_ids[video]),
                nf.first, nf.second, n_samples, nullptr, work, false);
      render_pixel(rc, work);
      if (!work.xstar_valid) continue;
      Vec3 xp = m.warp_model.warp_forward_pt(m.store, pose_to, work.xstar_pix);
      if (xp.z <= 0) continue;
      Vec2 px = geom::project(cam, xp);
      flow.at(x, y, 0) = px.x - x;
      flow.at(x, y, 1) = px.y - y;
    }
  return flow;
}

std::pair<io::Image, io::Image> render_view(const Model& m, const warp::FramePose& pose,
                                            std::span<const double> omega_e,
                                            const geom::Camera& cam, int n_samples,
                                            int threads) {
  io::Image rgb, opa;
  rgb.width = cam.width; rgb.height = cam.height; rgb.channels = 3;
  rgb.data.assign((size_t)cam.width * cam.height * 3, 0.0);
  opa.width = cam.width; opa.height = cam.height; opa.channels = 1;
  opa.data.assign((size_t)cam.width * cam.height, 0.0);
  embed::Bounds iso = m.bounds.isotropic();
  auto nf = render::near_far(pose.G_R, pose.G_t, iso.lo, iso.hi);
  render::RenderConfig rc;
  rc.samples_per_ray = n_samples;
  rc.tau_min = m.cfg.tau_min;

  auto render_rows = [&](int y0, int y1) {
    render::RayWork work;
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < cam.width; ++x) {
        geom::Ray ray = geom::pixel_ray(cam, {(double)x, (double)y});
        march_ray(m.canon, m.warp_model, m.store, pose, ray, omega_e, nf.first, nf.second,
                  n_samples, nullptr, work, false);
        render_pixel(rc, work);
        for (int ch = 0; ch < 3; ++ch) rgb.at(x, y, ch) = work.color_pix[ch];
        opa.at(x, y, 0) = work.opacity;
      }
  };
  int nthreads = std::max(1, std::min(threads, cam.height));
  if (nthreads == 1) {
    render_rows(0, cam.height);
  } else {
    std::vector<std::thread> pool;
    int rows = (cam.height + nthreads - 1) / nthreads;
    for (int k = 0; k < nthreads; ++k) {
      int y0 = k * rows, y1 = std::min(cam.height, y0 + rows);
      if (y0 < y1) pool.emplace_back(render_rows, y0, y1);
    }
    for (auto& th : pool) th.join();
  }
  return {std::move(rgb), std::move(opa)};
}

EvalReport eval_reconstruction(const Model& m, const dataset::Dataset& ds) {
  if (!ds.has_ground_truth()) fail(Err::Io, "dataset has no ground-truth clouds for eval");
  EvalReport rep;
  mesh::TriMesh rest;
  try {
    rest = extract_canonical_mesh(m, m.cfg.eval_mesh_res, false);
  } catch (const Error&) {
    // no surface at all: every frame fails
    for (int t = 0; t < ds.total_frames; ++t) {
      auto [v, f] = ds.flat[t];
      rep.frames.push_back({v, f, t, 0, 0, 0, true});
      ++rep.failed;
    }
    return rep;
  }
  double acc_cd = 0, acc_rms = 0;
  int ok = 0;
  for (int t = 0; t < ds.total_frames; ++t) {
    auto [v, f] = ds.flat[t];
    EvalFrame ef;
    ef.video = v; ef.frame = f; ef.global = t;
    try {
      warp::FramePose pose = m.make_pose(t);
      mesh::TriMesh posed = mesh::pose_mesh(rest, [&](Vec3 p) {
        return m.warp_model.warp_forward_pt(m.store, pose, p);
      });
      auto est = mesh::sample_surface(posed, m.cfg.eval_samples, hash_mix(m.cfg.seed, 7000 + t));
      mesh::TriMesh gt = mesh::read_ply(ds.gt_cloud_path(v, f));
      auto res = mesh::aligned_chamfer(est, gt.vertices, m.cfg.icp_iters);
      ef.chamfer = res.chamfer;
      ef.rms = res.rms;
      ef.rms_cm = res.rms * ds.scale_cm;
      acc_cd += ef.chamfer;
      acc_rms += ef.rms;
      ++ok;
    } catch (const Error&) {
      ef.failed = true;
      ++rep.failed;
    }
    rep.frames.push_back(ef);
  }
  if (ok > 0) {
    rep.mean_chamfer = acc_cd / ok;
    rep.mean_rms = acc_rms / ok;
    rep.mean_rms_cm = rep.mean_rms * ds.scale_cm;
  }
  return rep;
}

}  // namespace artrec::fit
