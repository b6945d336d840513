#include <cmath>
#include <random>

#include "core/embed.h"
#include "doctest.h"
#include "helpers.h"

using namespace artrec;
using namespace artrec::embed;
using nnet::Group;
using nnet::ParamStore;

namespace {
canonical::CanonicalConfig small_cfg() {
  canonical::CanonicalConfig c;
  c.width = 16;
  c.depth = 2;
  c.pe_xyz = 4;
  return c;
}
}  // namespace

TEST_CASE("refresh_grid: lattice includes endpoints with exact spacing") {
  ParamStore store;
  canonical::CanonicalModel canon(store, small_cfg(), 3);
  Bounds b;
  b.lo = {0, 0, 0};
  b.hi = {1, 1, 1};
  CanonicalGrid g = refresh_grid(canon, store, b, 2);
  REQUIRE(g.count() == 8);
  CHECK(norm(g.points.front() - Vec3{0, 0, 0}) == 0.0);
  CHECK(norm(g.points.back() - Vec3{1, 1, 1}) == 0.0);
  CanonicalGrid g5 = refresh_grid(canon, store, b, 5);
  // spacing = (max - min) / (res - 1) exactly
  CHECK(g5.points[1].x - g5.points[0].x == doctest::Approx(0.25).epsilon(1e-15));
  // cached embeddings are unit
  for (int i = 0; i < g5.count(); ++i) {
    double n2 = 0;
    for (int k = 0; k < 16; ++k) n2 += g5.psi[i * 16 + k] * g5.psi[i * 16 + k];
    CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-6);
  }
  Bounds bad;
  bad.lo = {0, 0, 0};
  bad.hi = {1, 0, 1};  // min == max on y
  CHECK_THROWS_AS((void)refresh_grid(canon, store, bad, 4), Error);
}

TEST_CASE("soft argmax: peaked, symmetric and uniform limits") {
  // hand-built 2-point grid with orthogonal embeddings
  CanonicalGrid g;
  g.res = 2;
  g.embed_dim = 16;
  g.points = {{0, 0, 0}, {1, 0, 0}};
  g.psi.assign(32, 0.0);
  g.psi[0] = 1.0;   // e0
  g.psi[17] = 1.0;  // e1
  g.dpsi.assign(32, 0.0);
  std::vector<double> pix(16, 0.0);
  pix[0] = 1.0;
  Vec3 peaked = match_soft_argmax(pix, g, 100.0);
  CHECK(norm(peaked - Vec3{0, 0, 0}) < 1e-3);
  // equal similarity -> midpoint
  std::vector<double> both(16, 0.0);
  both[0] = both[1] = 1.0 / std::sqrt(2.0);
  Vec3 mid = match_soft_argmax(both, g, 37.0);
  CHECK(mid.x == doctest::Approx(0.5).epsilon(1e-12));
  // alpha = 0 -> centroid
  Vec3 centroid = match_soft_argmax(pix, g, 0.0);
  CHECK(centroid.x == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("soft argmax output stays in the grid's convex hull") {
  ParamStore store;
  canonical::CanonicalModel canon(store, small_cfg(), 7);
  Bounds b;
  b.lo = {-0.4, -0.6, -0.2};
  b.hi = {0.5, 0.3, 0.7};
  CanonicalGrid g = refresh_grid(canon, store, b, 6);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> pix(16);
    for (auto& v : pix) v = u(rng);
    Vec3 out = match_soft_argmax(pix, g, 10.0);
    for (int a = 0; a < 3; ++a) {
      CHECK(out[a] >= b.lo[a] - 1e-12);
      CHECK(out[a] <= b.hi[a] + 1e-12);
    }
  }
}

TEST_CASE("soft argmax is exactly invariant to power-of-two feature rescaling") {
  ParamStore store;
  canonical::CanonicalModel canon(store, small_cfg(), 11);
  Bounds b;
  b.lo = {-0.5, -0.5, -0.5};
  b.hi = {0.5, 0.5, 0.5};
  CanonicalGrid g = refresh_grid(canon, store, b, 5);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> pix(16), pix2(16), pix4(16);
    for (int k = 0; k < 16; ++k) {
      pix[k] = u(rng);
      pix2[k] = 2.0 * pix[k];
      pix4[k] = 0.25 * pix[k];
    }
    Vec3 a = match_soft_argmax(pix, g, 10.0);
    Vec3 b2 = match_soft_argmax(pix2, g, 10.0);
    Vec3 c = match_soft_argmax(pix4, g, 10.0);
    CHECK(a.x == b2.x);
    CHECK(a.y == b2.y);
    CHECK(a.z == b2.z);
    CHECK(a.x == c.x);
    CHECK(a.y == c.y);
    CHECK(a.z == c.z);
  }
}

TEST_CASE("large alpha converges to the best-matching lattice point") {
  // grid of well-separated random unit embeddings (unique best match premise)
  CanonicalGrid g;
  g.res = 5;
  g.embed_dim = 16;
  std::mt19937_64 rng(19);
  std::normal_distribution<double> gauss(0, 1);
  for (int iz = 0; iz < 5; ++iz)
    for (int iy = 0; iy < 5; ++iy)
      for (int ix = 0; ix < 5; ++ix)
        g.points.push_back({ix * 0.25 - 0.5, iy * 0.25 - 0.5, iz * 0.25 - 0.5});
  g.psi.resize(g.points.size() * 16);
  for (size_t i = 0; i < g.points.size(); ++i) {
    double n2 = 0;
    for (int k = 0; k < 16; ++k) {
      g.psi[i * 16 + k] = gauss(rng);
      n2 += g.psi[i * 16 + k] * g.psi[i * 16 + k];
    }
    for (int k = 0; k < 16; ++k) g.psi[i * 16 + k] /= std::sqrt(n2);
  }
  g.dpsi.assign(g.psi.size(), 0.0);
  const double spacing = 0.25;
  for (int target : {0, 37, 88, 124}) {
    std::vector<double> pix(g.psi.begin() + target * 16, g.psi.begin() + (target + 1) * 16);
    Vec3 out = match_soft_argmax(pix, g, 1000.0);
    CHECK(norm(out - g.points[target]) < 1e-3 * spacing);
  }
}

TEST_CASE("soft argmax vjp matches finite differences (pixel feature and alpha)") {
  ParamStore store;
  canonical::CanonicalModel canon(store, small_cfg(), 23);
  Bounds b;
  b.lo = {-0.5, -0.5, -0.5};
  b.hi = {0.5, 0.5, 0.5};
  CanonicalGrid g = refresh_grid(canon, store, b, 4);
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> pix(16);
  for (auto& v : pix) v = u(rng);
  double alpha = 8.0;
  Vec3 w = {0.7, -0.3, 0.5};
  MatchTape tape;
  Vec3 out = match_soft_argmax(pix, g, alpha, &tape);
  (void)out;
  std::vector<double> dpix(16, 0.0);
  double dalpha = 0;
  g.clear_grads();
  match_soft_argmax_vjp(g, alpha, tape, w, dpix, g, dalpha);
  double h = 1e-6;
  for (int k = 0; k < 16; ++k) {
    double orig = pix[k];
    pix[k] = orig + h;
    double lp = dot(w, match_soft_argmax(pix, g, alpha));
    pix[k] = orig - h;
    double lm = dot(w, match_soft_argmax(pix, g, alpha));
    pix[k] = orig;
    CHECK(dpix[k] == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-4));
  }
  double lp = dot(w, match_soft_argmax(pix, g, alpha + h));
  double lm = dot(w, match_soft_argmax(pix, g, alpha - h));
  CHECK(dalpha == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-5));
}

TEST_CASE("grid gradients flush into the embedding net (finite differences)") {
  ParamStore store;
  canonical::CanonicalModel canon(store, small_cfg(), 31);
  Bounds b;
  b.lo = {-0.5, -0.5, -0.5};
  b.hi = {0.5, 0.5, 0.5};
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> pix(16);
  for (auto& v : pix) v = u(rng);
  double alpha = 6.0;
  Vec3 w = {0.4, 0.8, -0.6};
  auto loss = [&]() {
    CanonicalGrid g = refresh_grid(canon, store, b, 3);
    return dot(w, match_soft_argmax(pix, g, alpha));
  };
  auto backward = [&]() {
    store.zero_grads();
    CanonicalGrid g = refresh_grid(canon, store, b, 3);
    MatchTape tape;
    match_soft_argmax(pix, g, alpha, &tape);
    std::vector<double> dpix(16, 0.0);
    double dalpha = 0;
    match_soft_argmax_vjp(g, alpha, tape, w, dpix, g, dalpha);
    grid_flush_gradients(canon, store, g);
  };
  auto entries = testutil::pick_entries(store, 2, 41);
  auto res = testutil::check_param_gradients(store, loss, backward, entries, 1e-5, 1e-6);
  CHECK_MESSAGE(res.max_rel < 1e-4, "worst ", res.worst_name, " analytic ",
                res.worst_analytic, " fd ", res.worst_fd);
}

TEST_CASE("bounds from surface vertices: minmax, translation equivariance, degeneracy") {
  std::vector<Vec3> verts = {{-1, 0, 2}, {3, -0.5, 0}, {0, 4, -2}};
  Bounds b = update_bounds_from_surface(verts);
  CHECK(b.lo.x == -1);
  CHECK(b.hi.x == 3);
  CHECK(b.lo.y == -0.5);
  CHECK(b.hi.y == 4);
  CHECK(b.lo.z == -2);
  CHECK(b.hi.z == 2);
  std::vector<Vec3> moved = verts;
  for (auto& v : moved) v += Vec3{10, 20, 30};
  Bounds b2 = update_bounds_from_surface(moved);
  CHECK(b2.lo.x == doctest::Approx(b.lo.x + 10));
  CHECK(b2.hi.z == doctest::Approx(b.hi.z + 30));
  std::vector<Vec3> single = {{1, 2, 3}};
  CHECK_THROWS_AS((void)update_bounds_from_surface(single), Error);
  std::vector<Vec3> empty;
  CHECK_THROWS_AS((void)update_bounds_from_surface(empty), Error);
}
