#include <cmath>
#include <filesystem>

#include "core/fit.h"
#include "core/synth.h"
#include "doctest.h"
#include "helpers.h"

using namespace artrec;
using namespace artrec::fit;

namespace {

const std::string kDsDir = "/tmp/artrec_fit_ds";

const dataset::Dataset& pendulum_micro() {
  static dataset::Dataset ds = [] {
    synth::SceneScript s = synth::builtin_script("pendulum");
    s.width = s.height = 28;
    for (auto& vid : s.videos) {
      vid.resize(4);
      for (auto& fr : vid) fr.cam = {0.9 * 28, 0.9 * 28, 13.5, 13.5, 28, 28};
    }
    s.videos.resize(1);
    std::filesystem::remove_all(kDsDir);
    synth::export_dataset(s, kDsDir);
    return dataset::load_dataset(kDsDir);
  }();
  return ds;
}

config::KeyValues micro_config(uint64_t seed) {
  config::KeyValues kv = default_config();
  kv.set("seed", std::to_string(seed));
  kv.set("mlp_width", "16");
  kv.set("mlp_depth", "2");
  kv.set("pose_width", "16");
  kv.set("pose_depth", "1");
  kv.set("skin_width", "12");
  kv.set("skin_depth", "1");
  kv.set("uncert_width", "12");
  kv.set("uncert_depth", "2");
  kv.set("pe_xyz", "4");
  kv.set("pe_view", "2");
  kv.set("pe_uncert", "3");
  kv.set("bones", "3");
  kv.set("grid_res", "4");
  kv.set("mc_res", "12");
  kv.set("samples_per_ray", "20");
  kv.set("rays_per_batch", "16");
  kv.set("active_rays", "8");
  kv.set("active_pool", "32");
  return kv;
}

// pixels chosen away from the opacity gate: on-object rays through the init
// sphere have opacity near 1, corner rays near 0
objective::SampleSet micro_samples() {
  objective::SampleSet set;
  objective::PixelSample a;
  a.x = 14; a.y = 12; a.t = 0; a.flow_slot = 0;
  objective::PixelSample b;
  b.x = 1; b.y = 1; b.t = 1; b.flow_slot = 1;
  objective::PixelSample c;
  c.x = 13; c.y = 16; c.t = 2; c.flow_slot = 2;
  objective::PixelSample d;
  d.x = 15; d.y = 9; d.t = 3; d.flow_slot = 1;
  set.samples = {a, b, c, d};
  set.n_uniform = 4;
  return set;
}

std::vector<int> all_frames(const dataset::Dataset& ds) {
  std::vector<int> out;
  for (int t = 0; t < ds.total_frames; ++t) out.push_back(t);
  return out;
}

}  // namespace

TEST_CASE("iteration budget formula and floor") {
  CHECK(iteration_budget(1000, 8192, 8192, 2000) == 61000);
  CHECK(iteration_budget(164, 8192, 8192, 2000) == 10000);
  CHECK(iteration_budget(16, 8192, 8192, 2000) == 2000);
  CHECK_THROWS_AS((void)iteration_budget(0, 8192, 8192, 2000), Error);
}

TEST_CASE("root pose init: exact mode, identity mode, bounded geodesic error") {
  const auto& ds = pendulum_micro();
  auto exact = init_root_poses(ds, RootInitMode::GroundTruthNoisy, 0.0, 3);
  for (int t = 0; t < ds.total_frames; ++t) {
    CHECK(geodesic_distance(exact[t], ds.frame(t).gt_root) < 1e-6);
    CHECK(norm(exact[t].trans - Vec3{0, 0, 3}) == 0.0);
  }
  auto ident = init_root_poses(ds, RootInitMode::Identity, 0.3, 3);
  for (auto& g : ident) {
    CHECK(norm(g.rot) == 0.0);
    CHECK(norm(g.trans - Vec3{0, 0, 3}) == 0.0);
  }
  double theta = 15.0 * kPi / 180.0;
  auto noisy = init_root_poses(ds, RootInitMode::GroundTruthNoisy, theta, 3);
  for (int t = 0; t < ds.total_frames; ++t)
    CHECK(geodesic_distance(noisy[t], ds.frame(t).gt_root) <= theta + 1e-9);
}

TEST_CASE("composite loss gradient matches finite differences on a 4-pixel batch") {
  const auto& ds = pendulum_micro();
  Model m = Model::build(ds, micro_config(11));
  auto nearfar = compute_nearfar(m, all_frames(ds));
  objective::SampleSet set = micro_samples();

  BatchOptions opt;
  opt.weights = m.cfg.weights;
  opt.fixed_nearfar = &nearfar;

  auto loss = [&]() {
    BatchOptions o = opt;
    o.backward = false;
    return evaluate_batch(m, ds, set, o).total();
  };
  auto backward = [&]() {
    m.store.zero_grads();
    BatchOptions o = opt;
    o.backward = true;
    evaluate_batch(m, ds, set, o);
  };

  // sanity: the batch exercises every loss path
  {
    BatchOptions o = opt;
    o.backward = false;
    auto rep = evaluate_batch(m, ds, set, o);
    CHECK(rep.n_flow_valid > 0);
    CHECK(rep.n_match_valid > 0);
    CHECK(rep.rgb > 0);
    CHECK(rep.sil > 0);
    CHECK(rep.cyc3d >= 0);
  }

  // exclude fixed (non-parameter) tensors and the uncertainty net (its loss
  // is isolated and checked separately)
  std::vector<std::pair<int, int>> entries;
  for (auto& e : testutil::pick_entries(m.store, 2, 13)) {
    const auto& t = m.store.tensor(e.first);
    if (t.group == nnet::Group::Fixed) continue;
    if (t.name.rfind("mlp_u/", 0) == 0) continue;
    entries.push_back(e);
  }
  auto res = testutil::check_param_gradients(m.store, loss, backward, entries, 1e-5, 1e-6);
  CHECK_MESSAGE(res.max_rel < 1e-3, "worst ", res.worst_name, " analytic ",
                res.worst_analytic, " fd ", res.worst_fd);
}

TEST_CASE("uncertainty loss: identities, stop gradient, finite differences") {
  const auto& ds = pendulum_micro();
  Model m = Model::build(ds, micro_config(13));
  objective::SampleSet set = micro_samples();
  std::vector<double> errs = {0.1, 0.1, 0.1, 0.1};
  // zero-initialized head predicts 0 -> MAE equals the constant error
  m.store.zero_grads();
  double lu = uncertainty_step(m, set, errs, true);
  CHECK(lu == doctest::Approx(0.1));
  // gradients confined to the uncertainty net
  for (int id = 0; id < m.store.count(); ++id) {
    const auto& t = m.store.tensor(id);
    bool is_u = t.name.rfind("mlp_u/", 0) == 0;
    double gsum = 0;
    for (double g : m.store.grad(id)) gsum += std::abs(g);
    if (!is_u) CHECK(gsum == 0.0);
  }
  // FD over the uncertainty parameters (skip the kink by nonzero head)
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (auto* nm : {"mlp_u/w2", "mlp_u/b2"})
    for (auto& v : m.store.value(m.store.id(nm))) v = u(rng);
  auto loss = [&]() { return uncertainty_step(m, set, errs, false); };
  auto backward = [&]() {
    m.store.zero_grads();
    uncertainty_step(m, set, errs, true);
  };
  std::vector<std::pair<int, int>> entries;
  for (auto& e : testutil::pick_entries(m.store, 2, 17))
    if (m.store.tensor(e.first).name.rfind("mlp_u/", 0) == 0) entries.push_back(e);
  auto res = testutil::check_param_gradients(m.store, loss, backward, entries, 1e-6, 1e-6);
  CHECK_MESSAGE(res.max_rel < 1e-3, "worst ", res.worst_name);
}

TEST_CASE("zero weight and disabled path produce identical gradients") {
  const auto& ds = pendulum_micro();
  Model m = Model::build(ds, micro_config(17));
  auto nearfar = compute_nearfar(m, all_frames(ds));
  objective::SampleSet set = micro_samples();

  auto grads_with = [&](bool by_flag) {
    m.store.zero_grads();
    BatchOptions o;
    o.weights = m.cfg.weights;
    o.fixed_nearfar = &nearfar;
    o.backward = true;
    if (by_flag)
      o.enable_flow = false;
    else
      o.weights.flow = 0.0;
    evaluate_batch(m, ds, set, o);
    std::vector<std::vector<double>> out;
    for (int id = 0; id < m.store.count(); ++id) out.push_back(m.store.grad(id));
    return out;
  };
  auto a = grads_with(true);
  auto b = grads_with(false);
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t k = 0; k < a[i].size(); ++k) CHECK(a[i][k] == b[i][k]);
}

TEST_CASE("ablating the delta skinning net keeps its gradients at zero") {
  const auto& ds = pendulum_micro();
  auto kv = micro_config(19);
  kv.set("ablate_mlp_delta", "1");
  Model m = Model::build(ds, kv);
  auto nearfar = compute_nearfar(m, all_frames(ds));
  objective::SampleSet set = micro_samples();
  m.store.zero_grads();
  BatchOptions o;
  o.weights = m.cfg.weights;
  o.fixed_nearfar = &nearfar;
  o.backward = true;
  evaluate_batch(m, ds, set, o);
  for (int id = 0; id < m.store.count(); ++id) {
    const auto& t = m.store.tensor(id);
    if (t.name.rfind("mlp_delta/", 0) != 0) continue;
    for (double g : m.store.grad(id)) CHECK(g == 0.0);
  }
}

TEST_CASE("model checkpoint round-trips the full state") {
  const auto& ds = pendulum_micro();
  Model m = Model::build(ds, micro_config(23));
  m.iteration = 42;
  m.bounds.lo = {-0.4, -0.5, -0.6};
  m.bounds.hi = {0.7, 0.8, 0.9};
  std::string path = "/tmp/artrec_fit_ckpt.bin";
  m.save(path);
  Model back = Model::load(path);
  CHECK(back.iteration == 42);
  CHECK(back.total_frames == m.total_frames);
  CHECK(back.n_videos == m.n_videos);
  CHECK(norm(back.bounds.lo - m.bounds.lo) == 0.0);
  REQUIRE(back.store.count() == m.store.count());
  for (int id = 0; id < m.store.count(); ++id) {
    const auto& a = m.store.value(id);
    const auto& b = back.store.value(back.store.id(m.store.tensor(id).name));
    REQUIRE(a.size() == b.size());
    for (size_t k = 0; k < a.size(); ++k) CHECK(a[k] == b[k]);
  }
  // cameras and poses rebuild identically
  for (int v = 0; v < m.n_videos; ++v) {
    CHECK(back.camera(v).fx == m.camera(v).fx);
    CHECK(back.camera(v).cx == m.camera(v).cx);
  }
  Vec3 probe = {0.2, 0.1, 0.05};
  warp::FramePose p1 = m.make_pose(1);
  warp::FramePose p2 = back.make_pose(1);
  CHECK(norm(m.warp_model.warp_forward_pt(m.store, p1, probe) -
             back.warp_model.warp_forward_pt(back.store, p2, probe)) == 0.0);
}

TEST_CASE("a short fit run decreases reconstruction losses and is deterministic") {
  const auto& ds = pendulum_micro();
  auto kv = micro_config(29);
  kv.set("iterations", "25");
  kv.set("refresh_every", "10");
  kv.set("checkpoint_every", "0");
  auto run = [&](const std::string& dir) {
    std::filesystem::remove_all(dir);
    Model m = Model::build(ds, kv);
    return run_fit(m, ds, dir, false);
  };
  FitResult r1 = run("/tmp/artrec_fit_run1");
  CHECK(r1.iterations == 25);
  CHECK(r1.final_report.finite());
  // first-iteration loss from the log exceeds the final loss
  std::string log = io::read_text_file("/tmp/artrec_fit_run1/metrics.log");
  double first_sil = -1;
  {
    auto pos = log.find("sil=");
    first_sil = std::stod(log.substr(pos + 4));
  }
  CHECK(r1.final_report.sil < first_sil);

  FitResult r2 = run("/tmp/artrec_fit_run2");
  // determinism: bit-identical checkpoints
  std::string c1 = io::read_text_file(r1.checkpoint_path);
  std::string c2 = io::read_text_file(r2.checkpoint_path);
  CHECK(c1 == c2);
}

TEST_CASE("retargeting freezes shared parameters and moves codes") {
  const auto& ds = pendulum_micro();
  auto kv = micro_config(31);
  kv.set("iterations", "8");
  kv.set("refresh_every", "4");
  std::filesystem::remove_all("/tmp/artrec_fit_rt0");
  Model trained = Model::build(ds, kv);
  run_fit(trained, ds, "/tmp/artrec_fit_rt0", false);

  Model driven = Model::build(ds, kv);
  driven.adopt_shared(trained.store);
  driven.bounds = trained.bounds;
  driven.grid = embed::refresh_grid(driven.canon, driven.store, driven.bounds,
                                    driven.cfg.grid_res);
  uint64_t shared_before = 0;
  for (const char* p : {"mlp_sdf/", "mlp_col/", "mlp_psi/", "mlp_g/", "mlp_j/", "mlp_delta/",
                        "bones/", "code/body_rest"})
    shared_before = io::hash_combine(shared_before, driven.store.checksum(p));
  std::vector<double> code_before = driven.store.value(driven.root_ids[0]);
  std::filesystem::remove_all("/tmp/artrec_fit_rt1");
  run_fit(driven, ds, "/tmp/artrec_fit_rt1", true);
  uint64_t shared_after = 0;
  for (const char* p : {"mlp_sdf/", "mlp_col/", "mlp_psi/", "mlp_g/", "mlp_j/", "mlp_delta/",
                        "bones/", "code/body_rest"})
    shared_after = io::hash_combine(shared_after, driven.store.checksum(p));
  CHECK(shared_before == shared_after);
  // codes did move
  double diff = 0;
  const auto& code_after = driven.store.value(driven.root_ids[0]);
  for (size_t i = 0; i < code_before.size(); ++i)
    diff += std::abs(code_after[i] - code_before[i]);
  CHECK(diff > 0.0);
}

TEST_CASE("pixel embeddings move under optimization and re-normalize") {
  const auto& ds = pendulum_micro();
  Model m = Model::build(ds, micro_config(37));
  // initial features: unit on the object, zero off it
  const auto& fv0 = m.store.value(m.feat_ids[0]);
  int unit = 0, zero = 0;
  for (size_t i = 0; i < fv0.size(); i += 16) {
    double n2 = 0;
    for (int k = 0; k < 16; ++k) n2 += fv0[i + k] * fv0[i + k];
    if (n2 == 0.0) ++zero;
    else {
      CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-6);
      ++unit;
    }
  }
  CHECK(unit > 0);
  CHECK(zero > 0);

  auto nearfar = compute_nearfar(m, all_frames(ds));
  objective::SampleSet set = micro_samples();
  m.store.zero_grads();
  BatchOptions o;
  o.weights = m.cfg.weights;
  o.fixed_nearfar = &nearfar;
  o.backward = true;
  evaluate_batch(m, ds, set, o);
  double gsum = 0;
  for (double g : m.store.grad(m.feat_ids[0])) gsum += std::abs(g);
  CHECK(gsum > 0.0);  // matching reached the pixel features
  std::vector<double> before = m.store.value(m.feat_ids[0]);
  m.store.adam_step(1e-2);
  renormalize_features(m);
  const auto& after = m.store.value(m.feat_ids[0]);
  double moved = 0;
  for (size_t i = 0; i < after.size(); ++i) moved += std::abs(after[i] - before[i]);
  CHECK(moved > 0.0);
  for (size_t i = 0; i < after.size(); i += 16) {
    double n2 = 0;
    for (int k = 0; k < 16; ++k) n2 += after[i + k] * after[i + k];
    if (n2 > 0.0) CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-9);
  }
}

TEST_CASE("rendered flow matches a pure image-plane root translation") {
  const auto& ds = pendulum_micro();
  Model m = Model::build(ds, micro_config(41));
  const int t = 0;
  warp::FramePose pose = m.make_pose(t);
  warp::FramePose pose2 = pose;  // same articulation, root shifted in-plane
  Vec3 shift = {0.06, -0.04, 0.0};
  pose2.G_t += shift;
  geom::Camera cam = m.camera(0);
  auto iso = m.bounds.isotropic();
  auto nf = render::near_far(pose.G_R, pose.G_t, iso.lo, iso.hi);
  render::RenderConfig rc;
  rc.samples_per_ray = 48;
  rc.tau_min = m.cfg.tau_min;
  render::RayWork work;
  int checked = 0;
  for (int x = 10; x < 18 && checked < 6; ++x)
    for (int y = 10; y < 18 && checked < 6; ++y) {
      geom::Ray ray = geom::pixel_ray(cam, {(double)x, (double)y});
      march_ray(m.canon, m.warp_model, m.store, pose, ray, m.store.value(m.env_ids[0]),
                nf.first, nf.second, 48, nullptr, work, false);
      render_pixel(rc, work);
      if (!work.xstar_valid || work.opacity < 0.9) continue;
      Vec3 xp1 = m.warp_model.warp_forward_pt(m.store, pose, work.xstar_pix);
      Vec3 xp2 = m.warp_model.warp_forward_pt(m.store, pose2, work.xstar_pix);
      Vec2 p1 = geom::project(cam, xp1);
      Vec2 p2 = geom::project(cam, xp2);
      Vec2 flow = p2 - p1;
      // analytic projected displacement of the same 3D point
      double fx_expect = cam.fx * ((xp1.x + shift.x) / xp2.z - xp1.x / xp1.z);
      double fy_expect = cam.fy * ((xp1.y + shift.y) / xp2.z - xp1.y / xp1.z);
      CHECK(std::abs(flow.x - fx_expect) < 0.5);
      CHECK(std::abs(flow.y - fy_expect) < 0.5);
      CHECK(std::abs(flow.x) > 0.5);  // the motion is actually visible
      ++checked;
    }
  CHECK(checked > 0);
}
