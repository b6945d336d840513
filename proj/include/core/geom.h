#pragma once

#include <vector>

#include "core/common.h"

namespace artrec::geom {

/// Rigid transform stored as angle-axis rotation (radians * unit axis) plus translation.
struct SE3 {
  Vec3 rot;    // angle-axis
  Vec3 trans;

  static SE3 identity() { return {}; }
};

// Rodrigues map; 2nd-order Taylor coefficients below ~1e-4 rad avoid 0/0.
Mat3 rodrigues(Vec3 aa);
// Log map back to angle-axis; |angle| in [0, pi].
Vec3 rotation_log(const Mat3& R);

// d(R(aa) * X) pulled back onto aa and X.
void rodrigues_apply_vjp(Vec3 aa, Vec3 X, Vec3 dY, Vec3& daa, Vec3& dX);

Mat34 to_mat(const SE3& T);
SE3 from_mat(const Mat34& M);

Vec3 se3_apply(const SE3& T, Vec3 X);
SE3 se3_compose(const SE3& a, const SE3& b);
SE3 se3_inverse(const SE3& T);

// Angle of the relative rotation R_a * R_b^T, in [0, pi].
double geodesic_distance(const Mat3& Ra, const Mat3& Rb);

struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;
};

struct Ray {
  Vec3 origin;     // camera space
  Vec3 direction;  // unit
  Vec2 pixel;
};

// Pinhole projection of a camera-space point; throws NonPositiveDepth for Z <= 0.
Vec2 project(const Camera& cam, Vec3 Xcam);
// Gradient of the projected pixel w.r.t. the point and the focal lengths.
void project_vjp(const Camera& cam, Vec3 Xcam, Vec2 dpix,
                 Vec3& dX, double& dfx, double& dfy);

Ray pixel_ray(const Camera& cam, Vec2 pixel);
// Gradient of the unit direction w.r.t. focal lengths.
void pixel_ray_dir_vjp(const Camera& cam, Vec2 pixel, Vec3 ddir,
                       double& dfx, double& dfy);

struct Similarity {
  double scale = 1.0;
  SE3 transform;

  Vec3 apply(Vec3 X) const { return scale * (rodrigues(transform.rot) * X) + transform.trans; }
};

// Closed-form similarity (scaled Kabsch / Umeyama) from paired points.
Similarity umeyama(const std::vector<Vec3>& src, const std::vector<Vec3>& dst);

// Brute-force nearest-neighbor ICP up to a similarity transform. Starts from a
// centroid/scale pre-alignment; each iteration pairs by nearest neighbor and
// solves the closed form. Throws DegenerateCloud when either set has
// covariance rank < 2.
Similarity icp_similarity_align(const std::vector<Vec3>& src,
                                const std::vector<Vec3>& dst, int iters);

// Mean squared nearest-neighbor error of src mapped onto dst (the ICP objective).
double nn_mean_sq(const std::vector<Vec3>& src, const std::vector<Vec3>& dst);

}  // namespace artrec::geom
