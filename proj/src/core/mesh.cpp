#include "core/mesh.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

namespace artrec::mesh {

namespace {

// Freudenthal subdivision: tets along the 0 -> 7 diagonal, one per axis order.
constexpr int kTets[6][4] = {
    {0, 1, 3, 7}, {0, 1, 5, 7}, {0, 2, 3, 7},
    {0, 2, 6, 7}, {0, 4, 5, 7}, {0, 4, 6, 7},
};

struct EdgeKey {
  int64_t a, b;
  bool operator==(const EdgeKey& o) const { return a == o.a && b == o.b; }
};
struct EdgeHash {
  size_t operator()(const EdgeKey& k) const {
    return std::hash<int64_t>()(k.a * 0x9e3779b97f4a7c15LL ^ k.b);
  }
};

double tri_area(Vec3 a, Vec3 b, Vec3 c) { return 0.5 * norm(cross(b - a, c - a)); }

}  // namespace

TriMesh extract_isosurface(const ScalarField& field, const embed::Bounds& bounds,
                           int resolution) {
  if (resolution < 2) fail(Err::InvalidBounds, "resolution must be >= 2");
  for (int a = 0; a < 3; ++a)
    if (!(bounds.lo[a] < bounds.hi[a])) fail(Err::InvalidBounds, "bounds min >= max");
  const int n = resolution;
  const Vec3 span = bounds.hi - bounds.lo;
  auto point = [&](int ix, int iy, int iz) -> Vec3 {
    return {bounds.lo.x + span.x * ix / (n - 1), bounds.lo.y + span.y * iy / (n - 1),
            bounds.lo.z + span.z * iz / (n - 1)};
  };
  auto gid = [&](int ix, int iy, int iz) -> int64_t {
    return (int64_t)(iz * n + iy) * n + ix;
  };

  std::vector<double> f((size_t)n * n * n);
  for (int iz = 0; iz < n; ++iz)
    for (int iy = 0; iy < n; ++iy)
      for (int ix = 0; ix < n; ++ix) f[(size_t)gid(ix, iy, iz)] = field(point(ix, iy, iz));

  TriMesh out;
  std::unordered_map<EdgeKey, int, EdgeHash> edge_verts;

  auto crossing = [&](int64_t ga, int64_t gb, Vec3 pa, Vec3 pb) -> int {
    EdgeKey key{std::min(ga, gb), std::max(ga, gb)};
    auto it = edge_verts.find(key);
    if (it != edge_verts.end()) return it->second;
    double fa = f[(size_t)ga], fb = f[(size_t)gb];
    double t = fa / (fa - fb);
    t = std::clamp(t, 0.0, 1.0);
    Vec3 p = pa + t * (pb - pa);
    int idx = (int)out.vertices.size();
    out.vertices.push_back(p);
    edge_verts.emplace(key, idx);
    return idx;
  };

  bool any_sign_change = false;
  int corner_off[8][3];
  for (int c = 0; c < 8; ++c) {
    corner_off[c][0] = c & 1;
    corner_off[c][1] = (c >> 1) & 1;
    corner_off[c][2] = (c >> 2) & 1;
  }

  auto add_tri = [&](int va, int vb, int vc, Vec3 inside_pt) {
    Vec3 a = out.vertices[va], b = out.vertices[vb], c = out.vertices[vc];
    if (tri_area(a, b, c) <= 1e-12) return;
    Vec3 nrm = cross(b - a, c - a);
    Vec3 centroid = (a + b + c) / 3.0;
    if (dot(nrm, centroid - inside_pt) < 0) std::swap(vb, vc);
    out.triangles.push_back({va, vb, vc});
  };

  for (int iz = 0; iz + 1 < n; ++iz)
    for (int iy = 0; iy + 1 < n; ++iy)
      for (int ix = 0; ix + 1 < n; ++ix) {
        int64_t cg[8];
        Vec3 cp[8];
        double cf[8];
        bool all_in = true, all_out = true;
        for (int c = 0; c < 8; ++c) {
          cg[c] = gid(ix + corner_off[c][0], iy + corner_off[c][1], iz + corner_off[c][2]);
          cp[c] = point(ix + corner_off[c][0], iy + corner_off[c][1], iz + corner_off[c][2]);
          cf[c] = f[(size_t)cg[c]];
          (cf[c] < 0 ? all_out : all_in) = false;
        }
        if (all_in || all_out) continue;
        any_sign_change = true;
        for (const auto& tet : kTets) {
          int in_ids[4], out_ids[4];
          int ni = 0, no = 0;
          for (int k = 0; k < 4; ++k) {
            if (cf[tet[k]] < 0)
              in_ids[ni++] = tet[k];
            else
              out_ids[no++] = tet[k];
          }
          if (ni == 0 || no == 0) continue;
          if (ni == 1 || ni == 3) {
            int apex = ni == 1 ? in_ids[0] : out_ids[0];
            const int* others = ni == 1 ? out_ids : in_ids;
            int v[3];
            for (int k = 0; k < 3; ++k)
              v[k] = crossing(cg[apex], cg[others[k]], cp[apex], cp[others[k]]);
            Vec3 inside_pt = ni == 1 ? cp[apex] : cp[others[0]];
            add_tri(v[0], v[1], v[2], inside_pt);
          } else {
            // 2-2: quad across four crossing edges, split into two triangles.
            int q[4];
            q[0] = crossing(cg[in_ids[0]], cg[out_ids[0]], cp[in_ids[0]], cp[out_ids[0]]);
            q[1] = crossing(cg[in_ids[0]], cg[out_ids[1]], cp[in_ids[0]], cp[out_ids[1]]);
            q[2] = crossing(cg[in_ids[1]], cg[out_ids[1]], cp[in_ids[1]], cp[out_ids[1]]);
            q[3] = crossing(cg[in_ids[1]], cg[out_ids[0]], cp[in_ids[1]], cp[out_ids[0]]);
            Vec3 inside_pt = cp[in_ids[0]];
            add_tri(q[0], q[1], q[2], inside_pt);
            add_tri(q[0], q[2], q[3], inside_pt);
          }
        }
      }

  if (!any_sign_change || out.triangles.empty())
    fail(Err::EmptySurface, "field has no zero crossing in bounds");
  return out;
}

TriMesh pose_mesh(const TriMesh& mesh, const std::function<Vec3(Vec3)>& fn) {
  TriMesh out = mesh;
  for (Vec3& v : out.vertices) v = fn(v);
  return out;
}

std::vector<Vec3> sample_surface(const TriMesh& mesh, int count, uint64_t seed) {
  if (mesh.triangles.empty()) fail(Err::EmptyCloud, "cannot sample empty mesh");
  std::vector<double> cum(mesh.triangles.size());
  double total = 0;
  for (size_t i = 0; i < mesh.triangles.size(); ++i) {
    auto [a, b, c] = mesh.triangles[i];
    total += tri_area(mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
    cum[i] = total;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Vec3> pts;
  pts.reserve(count);
  for (int s = 0; s < count; ++s) {
    double r = uni(rng) * total;
    size_t tri = std::lower_bound(cum.begin(), cum.end(), r) - cum.begin();
    if (tri >= mesh.triangles.size()) tri = mesh.triangles.size() - 1;
    auto [a, b, c] = mesh.triangles[tri];
    double u = uni(rng), v = uni(rng);
    if (u + v > 1) { u = 1 - u; v = 1 - v; }
    pts.push_back(mesh.vertices[a] + u * (mesh.vertices[b] - mesh.vertices[a]) +
                  v * (mesh.vertices[c] - mesh.vertices[a]));
  }
  return pts;
}

double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty()) fail(Err::EmptyCloud, "chamfer on empty cloud");
  return geom::nn_mean_sq(a, b) + geom::nn_mean_sq(b, a);
}

AlignedChamfer aligned_chamfer(const std::vector<Vec3>& est, const std::vector<Vec3>& gt,
                               int icp_iters) {
  AlignedChamfer r;
  r.align = geom::icp_similarity_align(est, gt, icp_iters);
  std::vector<Vec3> moved(est.size());
  for (size_t i = 0; i < est.size(); ++i) moved[i] = r.align.apply(est[i]);
  r.chamfer = chamfer(moved, gt);
  r.rms = std::sqrt(r.chamfer / 2.0);
  return r;
}

void write_ply(const std::string& path, const TriMesh& mesh) {
  std::ofstream os(path);
  if (!os) fail(Err::Io, "cannot write " + path);
  bool colors = !mesh.colors.empty();
  os << "ply\nformat ascii 1.0\n";
  os << "element vertex " << mesh.vertices.size() << "\n";
  os << "property float x\nproperty float y\nproperty float z\n";
  if (colors) os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "element face " << mesh.triangles.size() << "\n";
  os << "property list uchar int vertex_indices\nend_header\n";
  os.precision(9);
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& v = mesh.vertices[i];
    os << v.x << " " << v.y << " " << v.z;
    if (colors) {
      const Vec3& c = mesh.colors[i];
      auto q = [](double t) { return (int)std::lround(std::clamp(t, 0.0, 1.0) * 255.0); };
      os << " " << q(c.x) << " " << q(c.y) << " " << q(c.z);
    }
    os << "\n";
  }
  for (const auto& t : mesh.triangles) os << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
}

TriMesh read_ply(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(Err::Io, "cannot open " + path);
  std::string line;
  int nverts = -1, nfaces = 0;
  bool has_color = false;
  std::getline(is, line);
  if (line != "ply") fail(Err::Io, path + ": not a ply file");
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "element") {
      std::string what;
      int cnt;
      ls >> what >> cnt;
      if (what == "vertex") nverts = cnt;
      if (what == "face") nfaces = cnt;
    } else if (tok == "property") {
      std::string type, name;
      ls >> type >> name;
      if (name == "red") has_color = true;
    } else if (tok == "end_header") {
      break;
    }
  }
  if (nverts < 0) fail(Err::Io, path + ": missing vertex element");
  TriMesh m;
  m.vertices.resize(nverts);
  if (has_color) m.colors.resize(nverts);
  for (int i = 0; i < nverts; ++i) {
    std::getline(is, line);
    std::istringstream ls(line);
    ls >> m.vertices[i].x >> m.vertices[i].y >> m.vertices[i].z;
    if (has_color) {
      int r, g, b;
      ls >> r >> g >> b;
      m.colors[i] = {r / 255.0, g / 255.0, b / 255.0};
    }
  }
  for (int i = 0; i < nfaces; ++i) {
    std::getline(is, line);
    std::istringstream ls(line);
    int k, a, b, c;
    ls >> k >> a >> b >> c;
    if (k != 3) fail(Err::Io, path + ": only triangle faces supported");
    m.triangles.push_back({a, b, c});
  }
  if (!is) fail(Err::Io, path + ": truncated");
  return m;
}

}  // namespace artrec::mesh
