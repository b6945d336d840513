#pragma once

#include <string>
#include <vector>

#include "core/common.h"
#include "core/geom.h"
#include "core/io.h"

namespace artrec::synth {

struct Capsule {
  Vec3 p0, p1;
  double radius = 0.1;
  int bone = 0;     // scripted bone driving this capsule
  Vec3 albedo{0.8, 0.8, 0.8};
};

// Exact capsule SDF at rest placement.
double capsule_sdf(const Capsule& c, Vec3 x);

struct ScriptFrame {
  geom::SE3 root;                // canonical -> camera (ground-truth root pose)
  std::vector<Mat34> bone_fwd;   // rest -> articulated, canonical space
  std::vector<Mat34> bone_inv;
  geom::Camera cam;
};

/// A scripted articulated scene: capsules bound to scripted bones, per-frame
/// root/bone transforms and cameras. Stands in for captured datasets.
struct SceneScript {
  std::string name;
  std::vector<Capsule> capsules;
  int num_bones = 1;
  std::vector<std::vector<ScriptFrame>> videos;
  int width = 64, height = 64;
  double scale_cm = 100.0;  // centimeters per canonical unit

  void validate() const;
};

// Built-in fixtures: "pendulum", "quadruped", "rigid-sphere".
SceneScript builtin_script(const std::string& name);
std::vector<std::string> builtin_script_names();
// A script file is key = value text: base plus optional videos/frames/size overrides.
SceneScript load_script(const std::string& name_or_path);

// Union SDF of the articulated scene in camera space at one frame.
double posed_sdf(const SceneScript& s, const ScriptFrame& fr, Vec3 x_cam, int* hit_capsule);

struct OracleFrame {
  io::Image rgb;       // H x W x 3
  io::Image sil;       // H x W x 1
  io::Image feat;      // H x W x 16, unit rows on the object, zero off it
  // flow to t+1, t-1, t+2, t-2 (2 channels); validity depends on neighbors
  io::Image flow[4];
  bool has_flow[4] = {false, false, false, false};
};

// Sphere-traces the posed scene, shades with a fixed Lambertian light and
// renders ground-truth features and exact correspondence flow.
OracleFrame render_oracle(const SceneScript& s, int video, int frame);

// Ground-truth posed surface point cloud (area-uniform per capsule, union
// interiors removed).
std::vector<Vec3> gt_surface_cloud(const SceneScript& s, int video, int frame, int count,
                                   uint64_t seed);

// Writes the dataset directory layout consumed by the fitting pipeline.
void export_dataset(const SceneScript& s, const std::string& out_dir);

}  // namespace artrec::synth
