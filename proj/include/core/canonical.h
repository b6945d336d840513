#pragma once

#include <span>
#include <string>

#include "core/common.h"
#include "core/nnet.h"

namespace artrec::canonical {

struct CanonicalConfig {
  int pe_xyz = 10;
  int pe_view = 4;
  int width = 128;
  int depth = 5;        // hidden layers for sdf/color/embedding nets
  int embed_dim = 16;
  int env_dim = 64;
  nnet::Act act = nnet::Act::Softplus;
  double init_radius = 0.3;   // zero level set of the initial field
  double beta_init = 0.1;
};

// Laplace-CDF density conversion, sigma = Gamma_beta(-sdf) in [0,1].
double sdf_to_density(double sdf, double beta);
double sdf_to_density_dsdf(double sdf, double beta);
double sdf_to_density_dbeta(double sdf, double beta);

struct SdfTape {
  Vec3 x;
  nnet::MlpTape mlp;
};
struct ColorTape {
  Vec3 x, v;
  nnet::MlpTape mlp;
  Vec3 rgb;  // post-sigmoid
};
struct EmbedTape {
  Vec3 x;
  nnet::MlpTape mlp;
  std::vector<double> raw;
  double inv_norm = 0;
};

/// Time-invariant canonical fields: signed distance, view/illumination
/// dependent color, and a unit 16-d embedding. The SDF head predicts a
/// residual on top of an analytic sphere of radius init_radius so the zero
/// level set starts as that sphere and the far field stays metric.
class CanonicalModel {
 public:
  CanonicalModel() = default;
  CanonicalModel(nnet::ParamStore& store, const CanonicalConfig& cfg, uint64_t seed);

  double eval_sdf(const nnet::ParamStore& store, Vec3 x, SdfTape* tape = nullptr) const;
  void sdf_backward(nnet::ParamStore& store, const SdfTape& tape, double dsdf, Vec3& dx) const;

  Vec3 eval_color(const nnet::ParamStore& store, Vec3 x, Vec3 v,
                  std::span<const double> omega_e, ColorTape* tape = nullptr) const;
  void color_backward(nnet::ParamStore& store, const ColorTape& tape, Vec3 dc,
                      Vec3& dx, Vec3& dv, std::span<double> domega_e) const;

  void eval_embedding(const nnet::ParamStore& store, Vec3 x, std::span<double> psi,
                      EmbedTape* tape = nullptr) const;
  void embedding_backward(nnet::ParamStore& store, const EmbedTape& tape,
                          std::span<const double> dpsi, Vec3& dx) const;

  double beta(const nnet::ParamStore& store) const;
  int log_beta_id() const { return log_beta_id_; }
  const CanonicalConfig& config() const { return cfg_; }

 private:
  CanonicalConfig cfg_;
  nnet::Mlp sdf_, color_, embed_;
  int log_beta_id_ = -1;
  mutable std::vector<double> enc_x_, enc_cv_;  // encode scratch
};

}  // namespace artrec::canonical
