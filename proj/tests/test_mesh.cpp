#include <cmath>
#include <map>
#include <random>

#include "core/mesh.h"
#include "doctest.h"

using namespace artrec;
using namespace artrec::mesh;

namespace {
double sphere_sdf(Vec3 p) { return norm(p) - 0.5; }
embed::Bounds unit_bounds() {
  embed::Bounds b;
  b.lo = {-0.9, -0.9, -0.9};
  b.hi = {0.9, 0.9, 0.9};
  return b;
}
}  // namespace

TEST_CASE("isosurface of the analytic sphere: vertices near the radius") {
  TriMesh m = extract_isosurface(sphere_sdf, unit_bounds(), 64);
  REQUIRE(!m.triangles.empty());
  double cell = 1.8 / 63.0;
  for (const Vec3& v : m.vertices) CHECK(std::abs(norm(v) - 0.5) < 2 * cell);
  // interpolation bound: |field| below the cell diagonal at every vertex
  double diag = cell * std::sqrt(3.0);
  for (const Vec3& v : m.vertices) CHECK(std::abs(sphere_sdf(v)) < diag);
}

TEST_CASE("constant-sign field has no surface") {
  CHECK_THROWS_AS((void)extract_isosurface([](Vec3) { return 1.0; }, unit_bounds(), 16),
                  Error);
}

TEST_CASE("sphere mesh is watertight: every edge shared by exactly two triangles") {
  TriMesh m = extract_isosurface(sphere_sdf, unit_bounds(), 24);
  std::map<std::pair<int, int>, int> edge_count;
  for (const auto& t : m.triangles) {
    for (int e = 0; e < 3; ++e) {
      int a = t[e], b = t[(e + 1) % 3];
      edge_count[{std::min(a, b), std::max(a, b)}]++;
    }
  }
  for (const auto& [edge, count] : edge_count) CHECK(count == 2);
  // no degenerate triangles
  for (const auto& t : m.triangles) {
    Vec3 a = m.vertices[t[0]], b = m.vertices[t[1]], c = m.vertices[t[2]];
    CHECK(0.5 * norm(cross(b - a, c - a)) > 1e-12);
  }
}

TEST_CASE("pose_mesh: identity, rigid rotation preserves distances") {
  TriMesh m = extract_isosurface(sphere_sdf, unit_bounds(), 12);
  TriMesh same = pose_mesh(m, [](Vec3 v) { return v; });
  for (size_t i = 0; i < m.vertices.size(); ++i)
    CHECK(norm(same.vertices[i] - m.vertices[i]) == 0.0);
  CHECK(same.triangles.size() == m.triangles.size());
  Mat3 R = geom::rodrigues({0.4, -0.2, 0.7});
  TriMesh rot = pose_mesh(m, [&](Vec3 v) { return R * v + Vec3{1, 2, 3}; });
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<size_t> d(0, m.vertices.size() - 1);
  for (int k = 0; k < 200; ++k) {
    size_t i = d(rng), j = d(rng);
    double before = norm(m.vertices[i] - m.vertices[j]);
    double after = norm(rot.vertices[i] - rot.vertices[j]);
    CHECK(after == doctest::Approx(before).epsilon(1e-9));
  }
}

TEST_CASE("chamfer: zero on identical clouds, hand value on two points, symmetric") {
  std::vector<Vec3> a = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  CHECK(chamfer(a, a) == 0.0);
  std::vector<Vec3> p = {{0, 0, 0}}, q = {{1, 0, 0}};
  CHECK(chamfer(p, q) == doctest::Approx(2.0));  // 1 + 1 in squared distance
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> c1, c2;
  for (int i = 0; i < 40; ++i) c1.push_back({u(rng), u(rng), u(rng)});
  for (int i = 0; i < 55; ++i) c2.push_back({u(rng), u(rng), u(rng)});
  CHECK(chamfer(c1, c2) == doctest::Approx(chamfer(c2, c1)).epsilon(1e-12));
  std::vector<Vec3> empty;
  CHECK_THROWS_AS((void)chamfer(empty, a), Error);
}

TEST_CASE("chamfer is invariant under a common rigid transform") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> a, b;
  for (int i = 0; i < 30; ++i) a.push_back({u(rng), u(rng), u(rng)});
  for (int i = 0; i < 30; ++i) b.push_back({u(rng), u(rng), u(rng)});
  double before = chamfer(a, b);
  Mat3 R = geom::rodrigues({0.3, 0.5, -0.2});
  Vec3 t = {2, -1, 3};
  for (auto& p : a) p = R * p + t;
  for (auto& p : b) p = R * p + t;
  CHECK(chamfer(a, b) == doctest::Approx(before).epsilon(1e-9));
}

TEST_CASE("aligned chamfer absorbs a global scale and translation") {
  TriMesh m = extract_isosurface(sphere_sdf, unit_bounds(), 16);
  auto gt = sample_surface(m, 800, 11);
  std::vector<Vec3> est = gt;
  for (auto& p : est) p = 2.0 * p + Vec3{0.5, -0.2, 0.8};
  auto res = aligned_chamfer(est, gt, 20);
  CHECK(res.chamfer < 1e-9);
  // with a moderate rotation on an asymmetric cloud the alignment is exact too
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> cloud;
  for (int i = 0; i < 300; ++i) cloud.push_back({u(rng), 0.5 * u(rng), 0.2 * u(rng)});
  std::vector<Vec3> moved = cloud;
  Mat3 R = geom::rodrigues({0.2, 0.1, -0.15});
  for (auto& p : moved) p = 1.7 * (R * p) + Vec3{0.4, 0.1, -0.3};
  auto res2 = aligned_chamfer(moved, cloud, 20);
  CHECK(res2.chamfer < 1e-9);
}

TEST_CASE("surface sampling covers the sphere area-uniformly") {
  TriMesh m = extract_isosurface(sphere_sdf, unit_bounds(), 32);
  auto pts = sample_surface(m, 4000, 21);
  REQUIRE(pts.size() == 4000);
  // all samples near the surface, and octant counts roughly balanced
  int octants[8] = {0};
  for (const Vec3& p : pts) {
    CHECK(std::abs(norm(p) - 0.5) < 0.05);
    octants[(p.x > 0) + 2 * (p.y > 0) + 4 * (p.z > 0)]++;
  }
  for (int c : octants) CHECK(c > 4000 / 8 / 2);
}

TEST_CASE("ply round trip preserves geometry and colors") {
  TriMesh m = extract_isosurface(sphere_sdf, unit_bounds(), 8);
  m.colors.resize(m.vertices.size(), Vec3{0.25, 0.5, 1.0});
  write_ply("/tmp/artrec_test_mesh.ply", m);
  TriMesh back = read_ply("/tmp/artrec_test_mesh.ply");
  REQUIRE(back.vertices.size() == m.vertices.size());
  REQUIRE(back.triangles.size() == m.triangles.size());
  for (size_t i = 0; i < m.vertices.size(); ++i)
    CHECK(norm(back.vertices[i] - m.vertices[i]) < 1e-6);
  CHECK(back.colors.size() == m.colors.size());
}
