#include "core/objective.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_set>

namespace artrec::objective {

bool LossReport::finite() const {
  for (double v : {rgb, sil, flow, match, cyc2d, cyc2d_norm, cyc3d, uncert})
    if (!std::isfinite(v)) return false;
  return true;
}

double loss_rgb(std::span<const Vec3> rendered, std::span<const Vec3> observed) {
  double acc = 0;
  for (size_t i = 0; i < rendered.size(); ++i) acc += norm2(rendered[i] - observed[i]);
  return rendered.empty() ? 0.0 : acc / (double)rendered.size();
}

double loss_sil(std::span<const double> opacity, std::span<const double> observed) {
  double acc = 0;
  for (size_t i = 0; i < opacity.size(); ++i) {
    double r = opacity[i] - observed[i];
    acc += r * r;
  }
  return opacity.empty() ? 0.0 : acc / (double)opacity.size();
}

double loss_flow(std::span<const Vec2> rendered, std::span<const Vec2> observed,
                 std::span<const uint8_t> valid, int* valid_count) {
  double acc = 0;
  int n = 0;
  for (size_t i = 0; i < rendered.size(); ++i) {
    if (!valid[i]) continue;
    Vec2 r = rendered[i] - observed[i];
    acc += r.x * r.x + r.y * r.y;
    ++n;
  }
  if (valid_count) *valid_count = n;
  return n == 0 ? 0.0 : acc / (double)rendered.size();
}

double loss_match(std::span<const Vec3> warped, std::span<const Vec3> matched,
                  std::span<const uint8_t> valid, int* valid_count) {
  double acc = 0;
  int n = 0;
  for (size_t i = 0; i < warped.size(); ++i) {
    if (!valid[i]) continue;
    acc += norm2(warped[i] - matched[i]);
    ++n;
  }
  if (valid_count) *valid_count = n;
  return n == 0 ? 0.0 : acc / (double)warped.size();
}

namespace {

PixelSample draw_sample(const dataset::Dataset& ds, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> frame_dist(0, ds.total_frames - 1);
  std::uniform_int_distribution<int> xd(0, ds.width - 1), yd(0, ds.height - 1);
  PixelSample s;
  s.t = frame_dist(rng);
  s.x = xd(rng);
  s.y = yd(rng);
  const auto& obs = ds.frame(s.t);
  // Short-baseline flow pair among the available neighbors.
  int slots[4];
  int n = 0;
  for (int k = 0; k < 4; ++k)
    if (obs.has_flow[k]) slots[n++] = k;
  if (n > 0) {
    std::uniform_int_distribution<int> sd(0, n - 1);
    s.flow_slot = slots[sd(rng)];
  }
  return s;
}

}  // namespace

SampleSet sample_pixels(const dataset::Dataset& ds, int64_t iteration, int64_t total_iters,
                        int n_uniform, int n_active, int n_pool, uint64_t seed,
                        const std::function<double(int, int, int)>& uncertainty,
                        bool active_enabled) {
  SampleSet set;
  std::mt19937_64 rng(hash_mix(seed, 0x5a3fULL + (uint64_t)iteration));
  set.samples.reserve(n_uniform + n_active);
  for (int i = 0; i < n_uniform; ++i) set.samples.push_back(draw_sample(ds, rng));
  set.n_uniform = n_uniform;
  const bool second_half = iteration * 2 >= total_iters;
  if (active_enabled && second_half && n_active > 0) {
    // Uniform candidate pool, deduplicated, scored by the uncertainty net.
    struct Cand { PixelSample s; double u; };
    std::vector<Cand> pool;
    pool.reserve(n_pool);
    std::unordered_set<int64_t> seen;
    for (int i = 0; i < n_pool; ++i) {
      PixelSample s = draw_sample(ds, rng);
      int64_t key = ((int64_t)s.t * ds.height + s.y) * ds.width + s.x;
      if (!seen.insert(key).second) continue;
      pool.push_back({s, uncertainty(s.x, s.y, s.t)});
    }
    int keep = std::min<int>(n_active, (int)pool.size());
    std::partial_sort(pool.begin(), pool.begin() + keep, pool.end(),
                      [](const Cand& a, const Cand& b) { return a.u > b.u; });
    for (int i = 0; i < keep; ++i) {
      PixelSample s = pool[i].s;
      s.active = true;
      set.samples.push_back(s);
      ++set.n_active;
    }
  }
  return set;
}

UncertaintyNet::UncertaintyNet(nnet::ParamStore& store, int width, int hidden_layers,
                               int pe_freqs, uint64_t seed)
    : pe_freqs_(pe_freqs) {
  nnet::MlpSpec spec{nnet::positional_encode_size(3, pe_freqs),
                     std::vector<int>(hidden_layers, width), 1, nnet::Act::Softplus, pe_freqs};
  mlp_ = nnet::Mlp(store, "mlp_u", spec, hash_mix(seed, 301), 0.0);
}

double UncertaintyNet::predict(const nnet::ParamStore& store, double xn, double yn, double tn,
                               nnet::MlpTape* tape) const {
  enc_.resize(mlp_.spec().in);
  const double raw[3] = {xn, yn, tn};
  nnet::positional_encode(std::span(raw, 3), pe_freqs_, enc_);
  double out;
  mlp_.forward(store, enc_, std::span(&out, 1), tape);
  return out;
}

void UncertaintyNet::backward(nnet::ParamStore& store, const nnet::MlpTape& tape,
                              double dout) const {
  std::vector<double> din(mlp_.spec().in, 0.0);
  mlp_.backward(store, tape, std::span(&dout, 1), din);
}

}  // namespace artrec::objective
