#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "core/canonical.h"
#include "core/config.h"
#include "core/dataset.h"
#include "core/embed.h"
#include "core/mesh.h"
#include "core/objective.h"
#include "core/render.h"
#include "core/warp.h"

namespace artrec::fit {

// Full declared key set (defaults double as documentation); every run config
// is parsed against this set so unknown keys fail loudly.
config::KeyValues default_config();

struct FitConfig {
  uint64_t seed = 0;
  int64_t iterations = 0;  // 0: derived from the frame-count budget rule
  int64_t budget_floor = 2000;
  int rays_per_batch = 8192;
  int active_rays = 8192;
  int active_pool = 32768;
  int samples_per_ray = 128;
  int bones = 25;
  int mlp_width = 128, mlp_depth = 5;
  int pose_width = 64, pose_depth = 2;
  int skin_width = 64, skin_depth = 2;
  int uncert_width = 64, uncert_depth = 4;  // 5 linear layers
  int pe_xyz = 10, pe_view = 4, pe_uncert = 6;
  int grid_res = 20;
  int refresh_every = 200;
  int mc_res = 32;
  double beta_start = 0.1, beta_end = 0.01;
  double alpha_init = 10.0;
  double lr_mlp = 5e-4, lr_codes = 5e-3, lr_cam = 1e-3;
  double lr_decay_floor = 0.1;
  double warmup_frac = 0.1;
  objective::LossWeights weights;
  double tau_min = 0.2;
  double theta_max_deg = 15.0;
  std::string root_init = "gt_noisy";  // or "identity"
  bool ablate_cefeat = false, ablate_flow = false, ablate_active = false;
  bool ablate_root_init = false, ablate_mlp_delta = false, ablate_gauss_skin = false;
  int64_t checkpoint_every = 0;
  int64_t preview_every = 0;
  double init_bound = 1.0;
  int eval_mesh_res = 48;
  int eval_samples = 10000;
  int icp_iters = 20;
  int threads = 1;

  static FitConfig from(const config::KeyValues& kv);
};

// Budget rule: round(1000 * frames / (N^p + N^a)) * 1000, floored.
int64_t iteration_budget(int64_t num_frames, int64_t n_uniform, int64_t n_active,
                         int64_t floor_iters);

enum class RootInitMode { GroundTruthNoisy, Identity };
// Rotation perturbed by up to theta_max, translation pinned to (0,0,3).
std::vector<geom::SE3> init_root_poses(const dataset::Dataset& ds, RootInitMode mode,
                                       double theta_max_rad, uint64_t seed);
double geodesic_distance(const geom::SE3& a, const geom::SE3& b);

/// Everything a run owns: the parameter store, module wrappers, canonical
/// bounds and schedule state. Checkpoints capture it losslessly.
class Model {
 public:
  static Model build(const dataset::Dataset& ds, const config::KeyValues& kv);
  static Model load(const std::string& checkpoint_path);
  void save(const std::string& path) const;
  // Copies shared (video-independent) tensors from a trained store.
  void adopt_shared(const nnet::ParamStore& trained);

  geom::Camera camera(int video) const;
  geom::SE3 g0_pose(int t) const;
  warp::FramePose make_pose(int t) const;
  double alpha_s() const { return std::exp(store.value(alpha_id)[0]); }

  nnet::ParamStore store;
  canonical::CanonicalModel canon;
  warp::WarpModel warp_model;
  objective::UncertaintyNet uncert;
  embed::Bounds bounds;
  embed::CanonicalGrid grid;
  FitConfig cfg;
  config::KeyValues kv;

  // dataset shape (persisted in checkpoints)
  int n_videos = 0, width = 0, height = 0;
  double scale_cm = 100.0;
  std::vector<int> frames_per_video;
  int total_frames = 0;
  std::vector<std::pair<int, int>> flat;
  std::vector<double> cam_cx, cam_cy;

  std::vector<int> env_ids, cam_ids;                       // per video
  std::vector<int> root_ids, body_ids, g0_ids, feat_ids;   // per global frame
  int rest_id = -1, alpha_id = -1;
  int64_t iteration = 0;
};

struct BatchOptions {
  objective::LossWeights weights;
  bool backward = false;
  bool jitter = false;
  uint64_t jitter_seed = 0;
  bool enable_match = true;
  bool enable_flow = true;
  bool enable_cyc3d = true;
  // When set, near/far planes come from here instead of the current pose
  // (gradient checks need the sampling schedule frozen).
  const std::map<int, std::pair<double, double>>* fixed_nearfar = nullptr;
  std::vector<double>* per_sample_rgb_err = nullptr;  // detached, for the uncertainty net
};

// Forward (and optionally backward) pass over one pixel batch. Rebuilds the
// grid embedding cache when matching is enabled.
objective::LossReport evaluate_batch(Model& m, const dataset::Dataset& ds,
                                     const objective::SampleSet& set, const BatchOptions& opt);

// Mean absolute error between detached color errors and the uncertainty net;
// gradients confined to the uncertainty net.
double uncertainty_step(Model& m, const objective::SampleSet& set,
                        std::span<const double> rgb_err, bool backward);

// Near/far planes for every frame in the set, from current poses.
std::map<int, std::pair<double, double>> compute_nearfar(Model& m,
                                                         const std::vector<int>& frames);

// Projects learnable pixel embeddings back to unit norm after an optimizer
// step; zero (background) pixels stay zero.
void renormalize_features(Model& m);

struct FitResult {
  objective::LossReport final_report;
  int64_t iterations = 0;
  std::string checkpoint_path;
};

// The optimization loop: sampling, annealing, bound refreshes, logging,
// checkpoints. retarget_mode freezes everything but per-frame codes.
FitResult run_fit(Model& m, const dataset::Dataset& ds, const std::string& out_dir,
                  bool retarget_mode = false);

// Surface extraction / rendering / evaluation entry points used by the CLI.
mesh::TriMesh extract_canonical_mesh(const Model& m, int resolution, bool embed_colors);
mesh::TriMesh extract_posed_mesh(const Model& m, int frame, int resolution, bool embed_colors);

// Posed bones at one frame, one "cx cy cz ax ay az sx sy sz" line per bone
// (center, angle-axis orientation, Gaussian scales).
std::string bone_dump(const Model& m, int frame);

// Model flow image from frame t to t_to; low-opacity pixels are zero.
io::Image render_flow_image(const Model& m, int frame, int frame_to, int n_samples);
std::pair<io::Image, io::Image> render_view(const Model& m, const warp::FramePose& pose,
                                            std::span<const double> omega_e,
                                            const geom::Camera& cam, int n_samples,
                                            int threads);

struct EvalFrame {
  int video = 0, frame = 0, global = 0;
  double chamfer = 0, rms = 0, rms_cm = 0;
  bool failed = false;
};
struct EvalReport {
  std::vector<EvalFrame> frames;
  double mean_chamfer = 0, mean_rms = 0, mean_rms_cm = 0;
  int failed = 0;
};
EvalReport eval_reconstruction(const Model& m, const dataset::Dataset& ds);

}  // namespace artrec::fit
