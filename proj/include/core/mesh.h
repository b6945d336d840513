#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "core/common.h"
#include "core/embed.h"
#include "core/geom.h"

namespace artrec::mesh {

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec3> colors;  // optional, per vertex in [0,1]

  bool empty() const { return triangles.empty(); }
};

using ScalarField = std::function<double(Vec3)>;

/// Zero level set of a scalar field on a regular lattice. Cells are split
/// into six tetrahedra (Freudenthal subdivision, consistent across cells, so
/// the result is watertight); crossings are linearly interpolated along tet
/// edges and deduplicated. Throws EmptySurface when the field never changes
/// sign. Degenerate triangles (area <= 1e-12) are dropped.
TriMesh extract_isosurface(const ScalarField& field, const embed::Bounds& bounds,
                           int resolution);

// Maps every vertex through fn; connectivity unchanged.
TriMesh pose_mesh(const TriMesh& mesh, const std::function<Vec3(Vec3)>& fn);

// Area-uniform surface samples.
std::vector<Vec3> sample_surface(const TriMesh& mesh, int count, uint64_t seed);

// Symmetric Chamfer: mean over each cloud of min squared distance to the
// other, summed over both directions. Throws EmptyCloud.
double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

// ICP-align est onto gt (similarity), then Chamfer. Returns the metric and
// the alignment used.
struct AlignedChamfer {
  double chamfer = 0;       // d_CD, squared-distance units
  double rms = 0;           // sqrt(d_CD / 2), a length
  geom::Similarity align;
};
AlignedChamfer aligned_chamfer(const std::vector<Vec3>& est, const std::vector<Vec3>& gt,
                               int icp_iters = 20);

// ASCII PLY. Colors written when present; faces optional (point clouds).
void write_ply(const std::string& path, const TriMesh& mesh);
TriMesh read_ply(const std::string& path);

}  // namespace artrec::mesh
