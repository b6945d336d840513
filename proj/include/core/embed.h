#pragma once

#include <span>
#include <vector>

#include "core/canonical.h"
#include "core/common.h"
#include "core/nnet.h"

namespace artrec::embed {

struct Bounds {
  Vec3 lo{-1, -1, -1}, hi{1, 1, 1};

  Vec3 center() const { return 0.5 * (lo + hi); }
  // Cube circumscribing the bounding sphere: a rotation-safe stand-in when
  // the axis-aligned box of a partially grown surface would under-cover.
  Bounds isotropic() const {
    double r = 0.5 * norm(hi - lo);
    Vec3 c = center();
    return {{c.x - r, c.y - r, c.z - r}, {c.x + r, c.y + r, c.z + r}};
  }
};

/// Regular lattice over the canonical bounds with cached embeddings plus a
/// per-iteration gradient accumulator for the cached values. The cache must
/// be rebuilt whenever the embedding MLP or the bounds change.
struct CanonicalGrid {
  Bounds bounds;
  int res = 20;
  int embed_dim = 16;
  std::vector<Vec3> points;
  std::vector<double> psi;   // res^3 x embed_dim, unit per point
  std::vector<double> dpsi;  // accumulated gradients, flushed once per iteration

  int count() const { return (int)points.size(); }
  void clear_grads() { std::fill(dpsi.begin(), dpsi.end(), 0.0); }
};

// Builds the lattice (endpoints included, spacing (hi-lo)/(res-1)) and caches
// embeddings; throws InvalidBounds when min >= max on any axis.
CanonicalGrid refresh_grid(const canonical::CanonicalModel& canon,
                           const nnet::ParamStore& store, const Bounds& bounds, int res);

// Re-runs the embedding net on grid points with nonzero accumulated gradient
// and backpropagates into the embedding MLP. Point positions are schedule
// state, not parameters.
void grid_flush_gradients(const canonical::CanonicalModel& canon, nnet::ParamStore& store,
                          CanonicalGrid& grid);

struct MatchTape {
  std::vector<double> w;      // softmax over grid points
  std::vector<double> psin;   // normalized pixel feature
  std::vector<double> sims;   // cosine similarities
  double pix_inv_norm = 0;
  std::vector<double> psi_raw;  // raw pixel feature
};

// Soft-argmax expected grid location under alpha-scaled cosine similarity.
Vec3 match_soft_argmax(std::span<const double> psi_pix, const CanonicalGrid& grid,
                       double alpha_s, MatchTape* tape = nullptr);

// dL/dX-hat -> pixel-feature gradient, grid-cache gradient, and d(alpha_s).
void match_soft_argmax_vjp(const CanonicalGrid& grid, double alpha_s, const MatchTape& tape,
                           Vec3 dout, std::span<double> dpsi_pix, CanonicalGrid& grad_grid,
                           double& dalpha);

// Axis-aligned min/max of a vertex set; throws EmptySurface when the set is
// empty or degenerate along any axis (caller keeps the previous bounds).
Bounds update_bounds_from_surface(std::span<const Vec3> vertices);

}  // namespace artrec::embed
