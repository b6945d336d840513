#include "core/canonical.h"

#include <cmath>

namespace artrec::canonical {

using nnet::Mlp;
using nnet::MlpSpec;
using nnet::ParamStore;
using nnet::positional_encode;
using nnet::positional_encode_size;
using nnet::positional_encode_vjp;

double sdf_to_density(double sdf, double beta) {
  if (sdf >= 0) return 0.5 * std::exp(-sdf / beta);
  return 1.0 - 0.5 * std::exp(sdf / beta);
}

double sdf_to_density_dsdf(double sdf, double beta) {
  return -0.5 / beta * std::exp(-std::abs(sdf) / beta);
}

double sdf_to_density_dbeta(double sdf, double beta) {
  return 0.5 * std::exp(-std::abs(sdf) / beta) * sdf / (beta * beta);
}

CanonicalModel::CanonicalModel(ParamStore& store, const CanonicalConfig& cfg, uint64_t seed)
    : cfg_(cfg) {
  std::vector<int> hidden(cfg.depth, cfg.width);
  MlpSpec sdf_spec{positional_encode_size(3, cfg.pe_xyz), hidden, 1, cfg.act, cfg.pe_xyz};
  MlpSpec col_spec{positional_encode_size(3, cfg.pe_xyz) + positional_encode_size(3, cfg.pe_view) +
                       cfg.env_dim,
                   hidden, 3, cfg.act, cfg.pe_xyz};
  MlpSpec emb_spec{positional_encode_size(3, cfg.pe_xyz), hidden, cfg.embed_dim, cfg.act,
                   cfg.pe_xyz};
  // Small final layer keeps the initial field near the analytic sphere.
  sdf_ = Mlp(store, "mlp_sdf", sdf_spec, hash_mix(seed, 101), 1e-3);
  color_ = Mlp(store, "mlp_col", col_spec, hash_mix(seed, 102));
  embed_ = Mlp(store, "mlp_psi", emb_spec, hash_mix(seed, 103));
  if (store.has("beta/log")) {
    log_beta_id_ = store.id("beta/log");
  } else {
    log_beta_id_ = store.add("beta/log", {1}, nnet::Group::Scalar);
    store.value(log_beta_id_)[0] = std::log(cfg.beta_init);
  }
}

double CanonicalModel::beta(const ParamStore& store) const {
  return std::exp(store.value(log_beta_id_)[0]);
}

double CanonicalModel::eval_sdf(const ParamStore& store, Vec3 x, SdfTape* tape) const {
  enc_x_.resize(sdf_.spec().in);
  const double raw[3] = {x.x, x.y, x.z};
  positional_encode(std::span(raw, 3), cfg_.pe_xyz, enc_x_);
  double out;
  sdf_.forward(store, enc_x_, std::span(&out, 1), tape ? &tape->mlp : nullptr);
  if (tape) tape->x = x;
  return out + (norm(x) - cfg_.init_radius);
}

void CanonicalModel::sdf_backward(ParamStore& store, const SdfTape& tape, double dsdf,
                                  Vec3& dx) const {
  thread_local std::vector<double> denc;
  denc.assign(sdf_.spec().in, 0.0);
  sdf_.backward(store, tape.mlp, std::span(&dsdf, 1), denc);
  double draw[3] = {0, 0, 0};
  const double raw[3] = {tape.x.x, tape.x.y, tape.x.z};
  positional_encode_vjp(std::span(raw, 3), cfg_.pe_xyz, denc, draw);
  dx += Vec3{draw[0], draw[1], draw[2]};
  double n = norm(tape.x);
  if (n > 1e-12) dx += (dsdf / n) * tape.x;
}

Vec3 CanonicalModel::eval_color(const ParamStore& store, Vec3 x, Vec3 v,
                                std::span<const double> omega_e, ColorTape* tape) const {
  const int nx = positional_encode_size(3, cfg_.pe_xyz);
  const int nv = positional_encode_size(3, cfg_.pe_view);
  enc_cv_.resize(color_.spec().in);
  const double rx[3] = {x.x, x.y, x.z};
  const double rv[3] = {v.x, v.y, v.z};
  positional_encode(std::span(rx, 3), cfg_.pe_xyz, std::span(enc_cv_.data(), nx));
  positional_encode(std::span(rv, 3), cfg_.pe_view, std::span(enc_cv_.data() + nx, nv));
  for (int i = 0; i < cfg_.env_dim; ++i) enc_cv_[nx + nv + i] = omega_e[i];
  double out[3];
  color_.forward(store, enc_cv_, std::span(out, 3), tape ? &tape->mlp : nullptr);
  Vec3 rgb = {1.0 / (1.0 + std::exp(-out[0])), 1.0 / (1.0 + std::exp(-out[1])),
              1.0 / (1.0 + std::exp(-out[2]))};
  if (tape) {
    tape->x = x;
    tape->v = v;
    tape->rgb = rgb;
  }
  return rgb;
}

void CanonicalModel::color_backward(ParamStore& store, const ColorTape& tape, Vec3 dc,
                                    Vec3& dx, Vec3& dv, std::span<double> domega_e) const {
  double dout[3];
  for (int i = 0; i < 3; ++i) {
    double s = tape.rgb[i];
    dout[i] = dc[i] * s * (1.0 - s);
  }
  thread_local std::vector<double> denc;
  denc.assign(color_.spec().in, 0.0);
  color_.backward(store, tape.mlp, std::span(dout, 3), denc);
  const int nx = positional_encode_size(3, cfg_.pe_xyz);
  const int nv = positional_encode_size(3, cfg_.pe_view);
  double drx[3] = {0, 0, 0}, drv[3] = {0, 0, 0};
  const double rx[3] = {tape.x.x, tape.x.y, tape.x.z};
  const double rv[3] = {tape.v.x, tape.v.y, tape.v.z};
  positional_encode_vjp(std::span(rx, 3), cfg_.pe_xyz, std::span(denc.data(), nx), drx);
  positional_encode_vjp(std::span(rv, 3), cfg_.pe_view, std::span(denc.data() + nx, nv), drv);
  dx += Vec3{drx[0], drx[1], drx[2]};
  dv += Vec3{drv[0], drv[1], drv[2]};
  for (int i = 0; i < cfg_.env_dim; ++i) domega_e[i] += denc[nx + nv + i];
}

void CanonicalModel::eval_embedding(const ParamStore& store, Vec3 x, std::span<double> psi,
                                    EmbedTape* tape) const {
  enc_x_.resize(embed_.spec().in);
  const double raw[3] = {x.x, x.y, x.z};
  positional_encode(std::span(raw, 3), cfg_.pe_xyz, enc_x_);
  thread_local std::vector<double> out;
  out.resize(cfg_.embed_dim);
  embed_.forward(store, enc_x_, out, tape ? &tape->mlp : nullptr);
  double n2 = 0;
  for (double o : out) n2 += o * o;
  double inv = 1.0 / std::max(std::sqrt(n2), 1e-12);
  for (int i = 0; i < cfg_.embed_dim; ++i) psi[i] = out[i] * inv;
  if (tape) {
    tape->x = x;
    tape->raw = out;
    tape->inv_norm = inv;
  }
}

void CanonicalModel::embedding_backward(ParamStore& store, const EmbedTape& tape,
                                        std::span<const double> dpsi, Vec3& dx) const {
  // y = r/|r| ; dr = (dpsi - y (y . dpsi)) / |r|
  const int d = cfg_.embed_dim;
  thread_local std::vector<double> y, dr;
  y.resize(d);
  dr.resize(d);
  double ydot = 0;
  for (int i = 0; i < d; ++i) {
    y[i] = tape.raw[i] * tape.inv_norm;
    ydot += y[i] * dpsi[i];
  }
  for (int i = 0; i < d; ++i) dr[i] = (dpsi[i] - y[i] * ydot) * tape.inv_norm;
  thread_local std::vector<double> denc;
  denc.assign(embed_.spec().in, 0.0);
  embed_.backward(store, tape.mlp, dr, denc);
  double draw[3] = {0, 0, 0};
  const double raw[3] = {tape.x.x, tape.x.y, tape.x.z};
  positional_encode_vjp(std::span(raw, 3), cfg_.pe_xyz, denc, draw);
  dx += Vec3{draw[0], draw[1], draw[2]};
}

}  // namespace artrec::canonical
