#include "core/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>

#include "core/config.h"
#include "core/mesh.h"

namespace artrec::synth {

namespace fs = std::filesystem;

double capsule_sdf(const Capsule& c, Vec3 x) {
  Vec3 d = c.p1 - c.p0;
  double dd = dot(d, d);
  if (dd < 1e-18) return norm(x - c.p0) - c.radius;
  double t = std::clamp(dot(x - c.p0, d) / dd, 0.0, 1.0);
  return norm(x - (c.p0 + t * d)) - c.radius;
}

void SceneScript::validate() const {
  if (capsules.empty()) return;  // an empty scene renders background only
  for (const Capsule& c : capsules) {
    if (c.radius <= 0) fail(Err::Config, "capsule radius must be positive");
    if (c.bone < 0 || c.bone >= num_bones) fail(Err::Config, "capsule bone out of range");
  }
  for (const auto& vid : videos) {
    if (vid.size() < 2) fail(Err::Config, "each video needs at least 2 frames");
    for (const auto& fr : vid)
      if ((int)fr.bone_fwd.size() != num_bones || (int)fr.bone_inv.size() != num_bones)
        fail(Err::Config, "frame bone transform count mismatch");
  }
}

double posed_sdf(const SceneScript& s, const ScriptFrame& fr, Vec3 x_cam, int* hit_capsule) {
  Mat34 ginv = rigid_inverse(geom::to_mat(fr.root));
  Vec3 x_can = ginv.apply(x_cam);
  double best = 1e300;
  int arg = -1;
  for (size_t i = 0; i < s.capsules.size(); ++i) {
    const Capsule& c = s.capsules[i];
    Vec3 x_rest = fr.bone_inv[c.bone].apply(x_can);
    double d = capsule_sdf(c, x_rest);
    if (d < best) { best = d; arg = (int)i; }
  }
  if (hit_capsule) *hit_capsule = arg;
  return best;
}

namespace {

// 16 x 4 affine projection with unit-norm rows; fixed across all scripts so
// canonical coordinates map to reproducible features.
const std::vector<double>& feature_projection() {
  static std::vector<double> P = [] {
    std::vector<double> p(16 * 4);
    std::mt19937_64 rng(0x5eedfeedULL);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int r = 0; r < 16; ++r) {
      double n2 = 0;
      for (int c = 0; c < 4; ++c) {
        p[4 * r + c] = g(rng);
        n2 += p[4 * r + c] * p[4 * r + c];
      }
      double inv = 1.0 / std::sqrt(n2);
      for (int c = 0; c < 4; ++c) p[4 * r + c] *= inv;
    }
    return p;
  }();
  return P;
}

void rest_point_feature(Vec3 x_rest, double* out16) {
  const auto& P = feature_projection();
  double n2 = 0;
  for (int r = 0; r < 16; ++r) {
    out16[r] = P[4 * r] * x_rest.x + P[4 * r + 1] * x_rest.y + P[4 * r + 2] * x_rest.z +
               P[4 * r + 3];
    n2 += out16[r] * out16[r];
  }
  double inv = 1.0 / std::max(std::sqrt(n2), 1e-12);
  for (int r = 0; r < 16; ++r) out16[r] *= inv;
}

struct TraceHit {
  bool hit = false;
  double depth = 0;
  Vec3 x_cam;
  int capsule = -1;
};

TraceHit sphere_trace(const SceneScript& s, const ScriptFrame& fr, Vec3 origin, Vec3 dir) {
  TraceHit h;
  double t = 0.05;
  for (int it = 0; it < 256; ++it) {
    Vec3 x = origin + t * dir;
    int cap = -1;
    double d = posed_sdf(s, fr, x, &cap);
    if (d < 1e-7) {
      h.hit = true;
      h.depth = t;
      h.x_cam = x;
      h.capsule = cap;
      return h;
    }
    t += d;
    if (t > 100.0) break;
  }
  return h;
}

Vec3 surface_normal(const SceneScript& s, const ScriptFrame& fr, Vec3 x_cam) {
  const double h = 1e-5;
  auto f = [&](Vec3 p) { return posed_sdf(s, fr, p, nullptr); };
  Vec3 n = {f({x_cam.x + h, x_cam.y, x_cam.z}) - f({x_cam.x - h, x_cam.y, x_cam.z}),
            f({x_cam.x, x_cam.y + h, x_cam.z}) - f({x_cam.x, x_cam.y - h, x_cam.z}),
            f({x_cam.x, x_cam.y, x_cam.z + h}) - f({x_cam.x, x_cam.y, x_cam.z - h})};
  double nn = norm(n);
  return nn > 1e-12 ? n / nn : Vec3{0, 0, -1};
}

// Rest-pose coordinates of a camera-space point on a given capsule.
Vec3 pull_to_rest(const SceneScript& s, const ScriptFrame& fr, Vec3 x_cam, int capsule) {
  Mat34 ginv = rigid_inverse(geom::to_mat(fr.root));
  return fr.bone_inv[s.capsules[capsule].bone].apply(ginv.apply(x_cam));
}

Vec3 push_from_rest(const SceneScript& s, const ScriptFrame& fr, Vec3 x_rest, int capsule) {
  Mat34 g = geom::to_mat(fr.root);
  return g.apply(fr.bone_fwd[s.capsules[capsule].bone].apply(x_rest));
}

}  // namespace

OracleFrame render_oracle(const SceneScript& s, int video, int frame) {
  const auto& frames = s.videos[video];
  const ScriptFrame& fr = frames[frame];
  const int W = s.width, H = s.height;
  OracleFrame out;
  out.rgb.width = W; out.rgb.height = H; out.rgb.channels = 3;
  out.rgb.data.assign((size_t)W * H * 3, 0.0);
  out.sil.width = W; out.sil.height = H; out.sil.channels = 1;
  out.sil.data.assign((size_t)W * H, 0.0);
  out.feat.width = W; out.feat.height = H; out.feat.channels = 16;
  out.feat.data.assign((size_t)W * H * 16, 0.0);
  const int neighbor_off[4] = {+1, -1, +2, -2};
  for (int k = 0; k < 4; ++k) {
    int tn = frame + neighbor_off[k];
    out.has_flow[k] = tn >= 0 && tn < (int)frames.size();
    out.flow[k].width = W; out.flow[k].height = H; out.flow[k].channels = 2;
    out.flow[k].data.assign((size_t)W * H * 2, 0.0);
  }

  const Vec3 light = normalized(Vec3{0.4, -0.6, -0.8});
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      geom::Ray ray = geom::pixel_ray(fr.cam, {(double)x, (double)y});
      TraceHit h = sphere_trace(s, fr, ray.origin, ray.direction);
      if (!h.hit) continue;
      out.sil.at(x, y, 0) = 1.0;
      Vec3 n = surface_normal(s, fr, h.x_cam);
      double lambert = 0.25 + 0.75 * std::max(0.0, dot(n, -light));
      Vec3 alb = s.capsules[h.capsule].albedo;
      out.rgb.at(x, y, 0) = std::clamp(alb.x * lambert, 0.0, 1.0);
      out.rgb.at(x, y, 1) = std::clamp(alb.y * lambert, 0.0, 1.0);
      out.rgb.at(x, y, 2) = std::clamp(alb.z * lambert, 0.0, 1.0);
      Vec3 x_rest = pull_to_rest(s, fr, h.x_cam, h.capsule);
      double f16[16];
      rest_point_feature(x_rest, f16);
      for (int c = 0; c < 16; ++c) out.feat.at(x, y, c) = f16[c];
      for (int k = 0; k < 4; ++k) {
        if (!out.has_flow[k]) continue;
        const ScriptFrame& frn = frames[frame + neighbor_off[k]];
        Vec3 xn = push_from_rest(s, frn, x_rest, h.capsule);
        if (xn.z <= 0) continue;
        Vec2 pn = geom::project(frn.cam, xn);
        out.flow[k].at(x, y, 0) = pn.x - (double)x;
        out.flow[k].at(x, y, 1) = pn.y - (double)y;
      }
    }
  }
  return out;
}

std::vector<Vec3> gt_surface_cloud(const SceneScript& s, int video, int frame, int count,
                                   uint64_t seed) {
  const ScriptFrame& fr = s.videos[video][frame];
  // Area-weighted capsule choice; rejection against union interiors.
  std::vector<double> area(s.capsules.size());
  double total = 0;
  for (size_t i = 0; i < s.capsules.size(); ++i) {
    const Capsule& c = s.capsules[i];
    double L = norm(c.p1 - c.p0);
    area[i] = 2.0 * kPi * c.radius * L + 4.0 * kPi * c.radius * c.radius;
    total += area[i];
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Vec3> pts;
  pts.reserve(count);
  int guard = 0;
  while ((int)pts.size() < count && guard < count * 50) {
    ++guard;
    double r = uni(rng) * total;
    size_t ci = 0;
    for (; ci + 1 < s.capsules.size() && r > area[ci]; ++ci) r -= area[ci];
    const Capsule& c = s.capsules[ci];
    double L = norm(c.p1 - c.p0);
    Vec3 axis = L > 1e-12 ? (c.p1 - c.p0) / L : Vec3{0, 0, 1};
    double side_area = 2.0 * kPi * c.radius * L;
    Vec3 x_rest;
    if (uni(rng) * area[ci] < side_area) {
      // cylinder side
      double t = uni(rng);
      Vec3 u = std::abs(axis.x) < 0.9 ? cross(axis, {1, 0, 0}) : cross(axis, {0, 1, 0});
      u = normalized(u);
      Vec3 v = cross(axis, u);
      double ang = 2.0 * kPi * uni(rng);
      x_rest = c.p0 + t * (c.p1 - c.p0) + c.radius * (std::cos(ang) * u + std::sin(ang) * v);
    } else {
      // spherical caps: a uniform sphere point attached to the matching end
      Vec3 dir = {gauss(rng), gauss(rng), gauss(rng)};
      double nn = norm(dir);
      if (nn < 1e-9) continue;
      dir = dir / nn;
      Vec3 center = dot(dir, axis) >= 0 ? c.p1 : c.p0;
      x_rest = center + c.radius * dir;
    }
    // keep only points on the union boundary
    bool inside_other = false;
    for (size_t j = 0; j < s.capsules.size(); ++j) {
      if (j == ci) continue;
      // compare in rest space of capsule j: both capsules' rest frames coincide
      // only through the articulation, so test in canonical posed space
      Vec3 x_can_j = fr.bone_inv[s.capsules[j].bone].apply(
          fr.bone_fwd[s.capsules[ci].bone].apply(x_rest));
      if (capsule_sdf(s.capsules[j], x_can_j) < -1e-9) { inside_other = true; break; }
    }
    if (inside_other) continue;
    pts.push_back(push_from_rest(s, fr, x_rest, (int)ci));
  }
  return pts;
}

namespace {

geom::SE3 lookat_extrinsic(Vec3 eye, Vec3 target, Vec3 up) {
  // Camera frame: +z forward (target - eye), +x right, +y down-ish image axes.
  Vec3 fwd = normalized(target - eye);
  Vec3 right = normalized(cross(up, fwd));
  Vec3 down = cross(fwd, right);
  Mat3 R;  // world -> camera rows
  for (int c = 0; c < 3; ++c) {
    R(0, c) = right[c];
    R(1, c) = down[c];
    R(2, c) = fwd[c];
  }
  Vec3 t = -(R * eye);
  return {geom::rotation_log(R), t};
}

Mat34 hinge(Vec3 pivot, Vec3 axis, double angle) {
  Mat3 R = geom::rodrigues(angle * normalized(axis));
  Vec3 t = pivot - R * pivot;
  return Mat34::from(R, t);
}

geom::Camera make_cam(int W, int H, double focal) {
  geom::Camera cam;
  cam.width = W;
  cam.height = H;
  cam.fx = cam.fy = focal;
  cam.cx = (W - 1) * 0.5;
  cam.cy = (H - 1) * 0.5;
  return cam;
}

void make_orbit_video(SceneScript& s, int frames, double az0, double az1, double elev,
                      const std::function<void(int, std::vector<Mat34>&, std::vector<Mat34>&)>&
                          articulate,
                      double focal) {
  std::vector<ScriptFrame> vid;
  vid.reserve(frames);
  for (int f = 0; f < frames; ++f) {
    double u = frames > 1 ? (double)f / (frames - 1) : 0.0;
    double az = az0 + (az1 - az0) * u;
    Vec3 eye = {3.0 * std::cos(elev) * std::sin(az), 3.0 * std::sin(elev),
                3.0 * std::cos(elev) * std::cos(az)};
    ScriptFrame fr;
    fr.root = lookat_extrinsic(eye, {0, 0, 0}, {0, 1, 0});
    fr.cam = make_cam(s.width, s.height, focal);
    fr.bone_fwd.assign(s.num_bones, Mat34::identity());
    fr.bone_inv.assign(s.num_bones, Mat34::identity());
    articulate(f, fr.bone_fwd, fr.bone_inv);
    vid.push_back(fr);
  }
  s.videos.push_back(std::move(vid));
}

SceneScript make_pendulum(int n_videos, int frames, int size) {
  SceneScript s;
  s.name = "pendulum";
  s.width = s.height = size;
  s.num_bones = 2;
  s.capsules = {
      {{0, 0.08, 0}, {0, 0.48, 0}, 0.12, 0, {0.85, 0.35, 0.25}},
      {{0, 0.08, 0}, {0, -0.42, 0}, 0.10, 1, {0.25, 0.45, 0.85}},
  };
  const Vec3 pivot = {0, 0.08, 0};
  for (int v = 0; v < n_videos; ++v) {
    double az0 = 0.35 * kPi * v;
    double az1 = az0 + 0.55 * kPi;
    double elev = 0.12 + 0.1 * v;
    double phase = 1.8 * v;
    auto articulate = [&, phase](int f, std::vector<Mat34>& fwd, std::vector<Mat34>& inv) {
      double ang = 0.9 * std::sin(2.0 * kPi * f / 26.0 + phase);
      fwd[1] = hinge(pivot, {0, 0, 1}, ang);
      inv[1] = rigid_inverse(fwd[1]);
    };
    make_orbit_video(s, frames, az0, az1, elev, articulate, 2.0 * size);
  }
  s.validate();
  return s;
}

SceneScript make_quadruped(int n_videos, int frames, int size) {
  SceneScript s;
  s.name = "quadruped";
  s.width = s.height = size;
  s.num_bones = 7;  // 0 body, 1-4 legs, 5 neck, 6 tail
  const double lr = 0.07;
  s.capsules = {
      {{-0.35, 0.1, 0}, {0.3, 0.1, 0}, 0.16, 0, {0.75, 0.55, 0.3}},   // body
      {{0.25, 0.05, 0.12}, {0.3, -0.42, 0.13}, lr, 1, {0.7, 0.4, 0.3}},
      {{0.25, 0.05, -0.12}, {0.3, -0.42, -0.13}, lr, 2, {0.4, 0.6, 0.3}},
      {{-0.3, 0.05, 0.12}, {-0.33, -0.42, 0.13}, lr, 3, {0.3, 0.5, 0.7}},
      {{-0.3, 0.05, -0.12}, {-0.33, -0.42, -0.13}, lr, 4, {0.6, 0.35, 0.65}},
      {{0.3, 0.14, 0}, {0.52, 0.38, 0}, 0.08, 5, {0.8, 0.7, 0.4}},    // neck
      {{0.52, 0.38, 0}, {0.62, 0.42, 0}, 0.1, 5, {0.85, 0.75, 0.5}},  // head on neck bone
      {{-0.35, 0.12, 0}, {-0.6, 0.3, 0}, 0.05, 6, {0.5, 0.5, 0.5}},   // tail
      {{0.6, 0.44, 0.0}, {0.66, 0.5, 0.0}, 0.05, 5, {0.9, 0.5, 0.4}}, // snout
  };
  for (int v = 0; v < n_videos; ++v) {
    double az0 = 0.3 * kPi * v + 0.15;
    double az1 = az0 + 0.5 * kPi;
    double elev = 0.1 + 0.08 * v;
    double phase = 1.1 * v;
    auto articulate = [&, phase](int f, std::vector<Mat34>& fwd, std::vector<Mat34>& inv) {
      double w = 2.0 * kPi * f / 16.0 + phase;
      Vec3 hipF1 = {0.25, 0.05, 0.12}, hipF2 = {0.25, 0.05, -0.12};
      Vec3 hipB1 = {-0.3, 0.05, 0.12}, hipB2 = {-0.3, 0.05, -0.12};
      fwd[1] = hinge(hipF1, {0, 0, 1}, 0.5 * std::sin(w));
      fwd[2] = hinge(hipF2, {0, 0, 1}, 0.5 * std::sin(w + kPi));
      fwd[3] = hinge(hipB1, {0, 0, 1}, 0.5 * std::sin(w + kPi));
      fwd[4] = hinge(hipB2, {0, 0, 1}, 0.5 * std::sin(w));
      fwd[5] = hinge({0.3, 0.14, 0}, {0, 0, 1}, 0.3 * std::sin(0.7 * w));
      fwd[6] = hinge({-0.35, 0.12, 0}, {0, 1, 0}, 0.6 * std::sin(1.3 * w));
      for (int b = 1; b < 7; ++b) inv[b] = rigid_inverse(fwd[b]);
    };
    make_orbit_video(s, frames, az0, az1, elev, articulate, 1.6 * size);
  }
  s.validate();
  return s;
}

SceneScript make_rigid_sphere(int n_videos, int frames, int size) {
  SceneScript s;
  s.name = "rigid-sphere";
  s.width = s.height = size;
  s.num_bones = 1;
  s.capsules = {{{0, 0, 0}, {0, 0, 0}, 0.35, 0, {0.3, 0.7, 0.5}}};
  for (int v = 0; v < n_videos; ++v) {
    double az0 = 0.5 * kPi * v;
    auto articulate = [](int, std::vector<Mat34>&, std::vector<Mat34>&) {};
    make_orbit_video(s, frames, az0, az0 + 0.6 * kPi, 0.15, articulate, 2.2 * size);
  }
  s.validate();
  return s;
}

}  // namespace

std::vector<std::string> builtin_script_names() {
  return {"pendulum", "quadruped", "rigid-sphere"};
}

SceneScript builtin_script(const std::string& name) {
  if (name == "pendulum") return make_pendulum(2, 16, 64);
  if (name == "quadruped") return make_quadruped(2, 12, 64);
  if (name == "rigid-sphere") return make_rigid_sphere(2, 8, 64);
  fail(Err::Config, "unknown script '" + name + "'");
}

SceneScript load_script(const std::string& name_or_path) {
  if (!fs::exists(name_or_path)) return builtin_script(name_or_path);
  config::KeyValues kv;
  kv.declare("base", "pendulum");
  kv.declare("videos", "0");
  kv.declare("frames", "0");
  kv.declare("size", "0");
  kv.parse_file(name_or_path);
  std::string base = kv.str("base");
  int videos = kv.integer("videos");
  int frames = kv.integer("frames");
  int size = kv.integer("size");
  SceneScript ref = builtin_script(base);
  int nv = videos > 0 ? videos : (int)ref.videos.size();
  int nf = frames > 0 ? frames : (int)ref.videos[0].size();
  int sz = size > 0 ? size : ref.width;
  if (base == "pendulum") return make_pendulum(nv, nf, sz);
  if (base == "quadruped") return make_quadruped(nv, nf, sz);
  if (base == "rigid-sphere") return make_rigid_sphere(nv, nf, sz);
  fail(Err::Config, "unknown base script '" + base + "'");
}

void export_dataset(const SceneScript& s, const std::string& out_dir) {
  s.validate();
  fs::create_directories(out_dir);
  fs::create_directories(out_dir + "/gt");
  std::ostringstream man;
  man << "name = " << s.name << "\n";
  man << "videos = " << s.videos.size() << "\n";
  man << "width = " << s.width << "\n";
  man << "height = " << s.height << "\n";
  man << "scale_cm = " << s.scale_cm << "\n";
  for (size_t v = 0; v < s.videos.size(); ++v)
    man << "frames_" << v << " = " << s.videos[v].size() << "\n";
  io::write_text_file(out_dir + "/manifest.txt", man.str());

  const char* flow_names[4] = {"fw1", "bw1", "fw2", "bw2"};
  char buf[64];
  for (size_t v = 0; v < s.videos.size(); ++v) {
    std::string vdir = out_dir + "/video_" + std::to_string(v);
    fs::create_directories(vdir);
    std::ostringstream poses;
    poses.precision(17);
    const geom::Camera& cam = s.videos[v][0].cam;
    poses << cam.fx << " " << cam.fy << " " << cam.cx << " " << cam.cy << "\n";
    for (size_t f = 0; f < s.videos[v].size(); ++f) {
      OracleFrame of = render_oracle(s, (int)v, (int)f);
      std::snprintf(buf, sizeof buf, "%04zu", f);
      io::write_ppm(vdir + "/rgb_" + buf + ".ppm", of.rgb);
      io::write_pgm(vdir + "/sil_" + buf + ".pgm", of.sil);
      io::write_rawf(vdir + "/feat_" + buf + ".raw", of.feat);
      for (int k = 0; k < 4; ++k)
        if (of.has_flow[k])
          io::write_rawf(vdir + "/flow_" + std::string(flow_names[k]) + "_" + buf + ".raw",
                         of.flow[k]);
      Mat34 g = geom::to_mat(s.videos[v][f].root);
      for (int i = 0; i < 12; ++i) poses << g.m[i] << (i == 11 ? "\n" : " ");
      // ground-truth cloud for evaluation
      auto cloud = gt_surface_cloud(s, (int)v, (int)f, 4000,
                                    hash_mix(0xc10ddULL, (uint64_t)(v * 1000 + f)));
      mesh::TriMesh pc;
      pc.vertices = cloud;
      mesh::write_ply(out_dir + "/gt/cloud_v" + std::to_string(v) + "_f" + buf + ".ply", pc);
    }
    io::write_text_file(vdir + "/poses.txt", poses.str());
  }
}

}  // namespace artrec::synth
