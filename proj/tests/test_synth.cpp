#include <cmath>
#include <filesystem>
#include <random>

#include "core/dataset.h"
#include "core/synth.h"
#include "doctest.h"

using namespace artrec;
using namespace artrec::synth;

TEST_CASE("capsule sdf: axis point, radial distance, Lipschitz") {
  Capsule c{{0, 0, 0}, {0, 1, 0}, 0.5, 0, {1, 1, 1}};
  CHECK(capsule_sdf(c, {0, 0.5, 0}) == doctest::Approx(-0.5));
  Capsule thin{{0, 0, 0}, {0, 1, 0}, 0.5, 0, {1, 1, 1}};
  CHECK(capsule_sdf(thin, {1.5, 0.5, 0}) == doctest::Approx(1.0));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int i = 0; i < 300; ++i) {
    Vec3 a = {u(rng), u(rng), u(rng)}, b = {u(rng), u(rng), u(rng)};
    CHECK(std::abs(capsule_sdf(c, a) - capsule_sdf(c, b)) <= norm(a - b) + 1e-12);
  }
}

TEST_CASE("empty scene renders pure background") {
  SceneScript s = builtin_script("rigid-sphere");
  s.capsules.clear();
  OracleFrame f = render_oracle(s, 0, 0);
  for (double v : f.sil.data) CHECK(v == 0.0);
  for (double v : f.rgb.data) CHECK(v == 0.0);
}

TEST_CASE("rigid sphere silhouette area matches the projected disk within 1%") {
  // a straight-on camera and a large projected radius keep the pixel
  // quantization error (Gauss circle, O(r^{2/3})) well under 1%
  SceneScript s;
  s.name = "big-sphere";
  s.width = s.height = 128;
  s.num_bones = 1;
  const double R = 0.35, Z = 3.0;
  s.capsules = {{{0, 0, 0}, {0, 0, 0}, R, 0, {0.5, 0.5, 0.5}}};
  ScriptFrame fr;
  fr.root = geom::SE3{{0, 0, 0}, {0, 0, Z}};
  fr.cam = {256, 256, 63.5, 63.5, 128, 128};
  fr.bone_fwd = {Mat34::identity()};
  fr.bone_inv = {Mat34::identity()};
  s.videos.push_back({fr, fr});
  OracleFrame f = render_oracle(s, 0, 0);
  double area = 0;
  for (double v : f.sil.data) area += v;
  double r_px = fr.cam.fx * R / std::sqrt(Z * Z - R * R);
  double expect = kPi * r_px * r_px;
  CHECK(std::abs(area - expect) / expect < 0.01);
}

TEST_CASE("static frames have zero flow on the object") {
  SceneScript s = builtin_script("rigid-sphere");
  // freeze the camera: same script frame twice
  s.videos[0][1] = s.videos[0][0];
  OracleFrame f = render_oracle(s, 0, 0);
  REQUIRE(f.has_flow[0]);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x)
      if (f.sil.at(x, y, 0) > 0.5) {
        CHECK(std::abs(f.flow[0].at(x, y, 0)) < 1e-6);
        CHECK(std::abs(f.flow[0].at(x, y, 1)) < 1e-6);
      }
}

TEST_CASE("oracle flow is forward/backward consistent within 0.1 px") {
  SceneScript s = builtin_script("pendulum");
  OracleFrame f0 = render_oracle(s, 0, 3);
  OracleFrame f1 = render_oracle(s, 0, 4);
  // bilinear backward flow at the continuous landing point; only interior
  // pixels with all four neighbors on-object qualify
  auto sample_bw = [&](double qx, double qy, double* bx, double* by) {
    int x0 = (int)std::floor(qx), y0 = (int)std::floor(qy);
    if (x0 < 0 || y0 < 0 || x0 + 1 >= s.width || y0 + 1 >= s.height) return false;
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        if (f1.sil.at(x0 + dx, y0 + dy, 0) < 0.5) return false;
    // interpolation is only meaningful on a smooth patch of the flow field;
    // occlusion boundaries between parts are genuine discontinuities
    for (int c = 0; c < 2; ++c) {
      double lo = 1e9, hi = -1e9;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          double v = f1.flow[1].at(x0 + dx, y0 + dy, c);
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      if (hi - lo > 0.3) return false;
    }
    double ax = qx - x0, ay = qy - y0;
    auto lerp2 = [&](int c) {
      double v00 = f1.flow[1].at(x0, y0, c), v10 = f1.flow[1].at(x0 + 1, y0, c);
      double v01 = f1.flow[1].at(x0, y0 + 1, c), v11 = f1.flow[1].at(x0 + 1, y0 + 1, c);
      return (1 - ax) * (1 - ay) * v00 + ax * (1 - ay) * v10 + (1 - ax) * ay * v01 +
             ax * ay * v11;
    };
    *bx = lerp2(0);
    *by = lerp2(1);
    return true;
  };
  int checked = 0;
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      if (f0.sil.at(x, y, 0) < 0.5) continue;
      double fx = f0.flow[0].at(x, y, 0), fy = f0.flow[0].at(x, y, 1);
      double bx, by;
      if (!sample_bw(x + fx, y + fy, &bx, &by)) continue;
      CHECK(std::hypot(fx + bx, fy + by) < 0.1);
      ++checked;
    }
  CHECK(checked > 20);
}

TEST_CASE("feature images are unit-norm on the object and zero off it") {
  SceneScript s = builtin_script("pendulum");
  OracleFrame f = render_oracle(s, 1, 2);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      double n2 = 0;
      for (int c = 0; c < 16; ++c) n2 += f.feat.at(x, y, c) * f.feat.at(x, y, c);
      if (f.sil.at(x, y, 0) > 0.5)
        CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-9);
      else
        CHECK(n2 == 0.0);
    }
}

TEST_CASE("gt surface cloud lies on the posed analytic surface") {
  SceneScript s = builtin_script("pendulum");
  auto cloud = gt_surface_cloud(s, 0, 5, 500, 77);
  REQUIRE((int)cloud.size() == 500);
  for (const Vec3& p : cloud) {
    double d = posed_sdf(s, s.videos[0][5], p, nullptr);
    CHECK(std::abs(d) < 1e-6);
  }
}

TEST_CASE("export/load round trip preserves images and poses") {
  SceneScript s = builtin_script("rigid-sphere");
  // shrink for speed
  s.videos.resize(1);
  s.videos[0].resize(2);
  std::string dir = "/tmp/artrec_test_ds";
  std::filesystem::remove_all(dir);
  export_dataset(s, dir);
  dataset::Dataset ds = dataset::load_dataset(dir);
  CHECK(ds.total_frames == 2);
  CHECK(ds.width == s.width);
  OracleFrame f = render_oracle(s, 0, 0);
  const auto& obs = ds.videos[0].frames[0];
  // PPM/PGM quantize to 8 bits; raw floats are float32
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      CHECK(std::abs(obs.rgb.at(x, y, 0) - f.rgb.at(x, y, 0)) < 1.0 / 255.0);
      CHECK(obs.sil.at(x, y, 0) == doctest::Approx(f.sil.at(x, y, 0)));
      CHECK(std::abs(obs.feat.at(x, y, 7) - f.feat.at(x, y, 7)) < 1e-6);
    }
  // gt pose round-trips through the text file
  Vec3 probe = {0.3, -0.2, 0.6};
  Vec3 a = geom::se3_apply(obs.gt_root, probe);
  Vec3 b = geom::se3_apply(s.videos[0][0].root, probe);
  CHECK(norm(a - b) < 1e-9);
  // content hash is stable across loads
  CHECK(dataset::dataset_content_hash(dir) == dataset::dataset_content_hash(dir));
}

TEST_CASE("builtin scripts validate and unknown names fail") {
  for (const auto& name : builtin_script_names()) {
    SceneScript s = builtin_script(name);
    CHECK(!s.videos.empty());
  }
  CHECK_THROWS_AS((void)builtin_script("nope"), Error);
}
