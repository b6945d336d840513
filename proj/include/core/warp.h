#pragma once

#include <span>
#include <vector>

#include "core/common.h"
#include "core/geom.h"
#include "core/nnet.h"

namespace artrec::warp {

struct WarpConfig {
  int bones = 25;
  int code_dim = 128;
  int pe_xyz = 10;        // encoding of the skinning MLP's point input
  int pose_width = 64;
  int pose_depth = 2;
  int skin_width = 64;
  int skin_depth = 2;
  nnet::Act act = nnet::Act::Softplus;
  double init_radius = 0.3;      // bone centers start on this sphere
  double init_precision = 20.0;  // isotropic Gaussian precision
  bool use_mlp_delta = true;     // ablation switch: fine skinning MLP
  bool use_gauss_skin = true;    // ablation switch: Mahalanobis term
};

// A bone posed by some rigid J: center, orientation and precision matrix
// Q = V Lambda V^T, plus the posing rotation for the backward pass.
struct PosedBone {
  Vec3 C;
  Mat3 V;
  Mat3 Q;
  Vec3 lambda;  // exp(logscale)
  Mat3 RJ;      // rotation of the posing J
  Vec3 tJ;
};

struct SkinTape {
  Vec3 x;
  std::vector<double> logits, w;
  std::vector<Vec3> z;   // x - C_b
  std::vector<Vec3> qz;  // Q_b z_b
  nnet::MlpTape mlp;
  bool used_mlp = false;
};

struct WarpTape {
  Vec3 x_in;    // point fed to skinning / blending
  SkinTape skin;
  Mat34 M;      // blended transform
};

// Adjoints of one frame's differentiable pose state, accumulated over all
// samples of an iteration and flushed once by pose_frame_backward.
struct FramePoseGrad {
  Mat3 dG_R;
  Vec3 dG_t;
  std::vector<Mat3> ddj_R, ddjinv_R;
  std::vector<Vec3> ddj_t, ddjinv_t;
  std::vector<Vec3> dC_t, dC_rest;
  std::vector<Mat3> dQ_t, dQ_rest;

  void resize(int bones);
  void clear();
};

/// Differentiable per-frame pose state: root transform G^t composed with its
/// initialization, per-bone delta transforms, and Gaussian bones posed at
/// both the frame pose and the rest pose.
struct FramePose {
  Mat3 G_R;
  Vec3 G_t;
  std::vector<Mat34> dj, dj_inv;  // delta transforms and inverses
  std::vector<PosedBone> bones_t, bones_rest;

  // recorded forward state for the backward pass
  nnet::MlpTape g_tape, j_tape_t, j_tape_rest;
  std::vector<double> g_head, j_head_t, j_head_rest;
  std::vector<double> omega_b_t, omega_b_rest;  // code snapshots for skinning
  Mat3 R0;
  Vec3 t0;
  int frame_code_id = -1;  // omega_b^t tensor
  int root_code_id = -1;   // omega_r^t tensor
  int rest_code_id = -1;   // omega_b^* tensor
};

class WarpModel {
 public:
  WarpModel() = default;
  WarpModel(nnet::ParamStore& store, const WarpConfig& cfg, uint64_t seed);

  int bones() const { return cfg_.bones; }
  const WarpConfig& config() const { return cfg_; }

  // Decode per-bone transforms from a body code (spec op body_pose).
  std::vector<geom::SE3> body_pose(const nnet::ParamStore& store,
                                   std::span<const double> omega_b) const;
  // Root pose delta composed with the initializer (spec op root_pose).
  geom::SE3 root_pose(const nnet::ParamStore& store, std::span<const double> omega_r,
                      const geom::SE3& g0) const;

  FramePose pose_frame(const nnet::ParamStore& store, std::span<const double> omega_r,
                       std::span<const double> omega_b, std::span<const double> omega_b_rest,
                       const geom::SE3& g0, int root_code_id = -1, int frame_code_id = -1,
                       int rest_code_id = -1) const;
  // Flushes accumulated adjoints into parameter gradients (pose MLPs, codes,
  // bone zero-configuration).
  void pose_frame_backward(nnet::ParamStore& store, const FramePose& pose,
                           const FramePoseGrad& grad) const;

  // Softmax skinning weights of x against posed bones under a body code.
  void skinning_weights(const nnet::ParamStore& store, Vec3 x,
                        std::span<const double> omega_b,
                        const std::vector<PosedBone>& bones,
                        std::span<double> w, SkinTape* tape = nullptr) const;
  // dW -> dx, bone adjoints, code gradient, skin MLP gradients.
  void skinning_backward(nnet::ParamStore& store, const SkinTape& tape,
                         std::span<const double> dw, Vec3& dx,
                         std::vector<Vec3>& dC, std::vector<Mat3>& dQ,
                         int code_id) const;

  Vec3 warp_backward_pt(const nnet::ParamStore& store, const FramePose& pose, Vec3 xt,
                        WarpTape* tape = nullptr) const;
  void warp_backward_vjp(nnet::ParamStore& store, const FramePose& pose, const WarpTape& tape,
                         Vec3 dxstar, FramePoseGrad& pg, Vec3* dxt) const;

  Vec3 warp_forward_pt(const nnet::ParamStore& store, const FramePose& pose, Vec3 xstar,
                       WarpTape* tape = nullptr) const;
  void warp_forward_vjp(nnet::ParamStore& store, const FramePose& pose, const WarpTape& tape,
                        Vec3 dxt, FramePoseGrad& pg, Vec3* dxstar) const;

  // Zero-configuration parameter tensors.
  int centers_id() const { return centers_id_; }
  int orient_id() const { return orient_id_; }
  int logscale_id() const { return logscale_id_; }

 private:
  std::vector<PosedBone> pose_bones(const nnet::ParamStore& store,
                                    std::span<const double> j_head) const;

  WarpConfig cfg_;
  nnet::Mlp mlp_g_, mlp_j_, mlp_delta_;
  int centers_id_ = -1, orient_id_ = -1, logscale_id_ = -1;
  mutable std::vector<double> enc_scratch_;
};

}  // namespace artrec::warp
