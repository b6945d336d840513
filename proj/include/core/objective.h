#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "core/common.h"
#include "core/dataset.h"
#include "core/nnet.h"

namespace artrec::objective {

struct LossWeights {
  double rgb = 1.0;
  double sil = 1.0;
  double flow = 0.5;
  double match = 0.1;
  double cyc2d = 0.1;  // applied in normalized pixel units (px / image width)
  double cyc3d = 0.1;
  double uncert = 1.0;  // isolated: only reaches the uncertainty net
};

struct LossReport {
  double rgb = 0, sil = 0, flow = 0, match = 0, cyc2d = 0, cyc3d = 0, uncert = 0;
  double cyc2d_norm = 0;  // cyc2d in normalized pixel units (px / image width)^2
  int n_pixels = 0;
  int n_flow_valid = 0, n_match_valid = 0, n_skipped_depth = 0;
  LossWeights weights;

  // Weighted total of the joint objective; the uncertainty term is excluded
  // because its gradient is confined to the uncertainty net by construction.
  double total() const {
    return weights.rgb * rgb + weights.sil * sil + weights.flow * flow +
           weights.match * match + weights.cyc2d * cyc2d_norm + weights.cyc3d * cyc3d;
  }
  bool finite() const;
};

// Set-level loss definitions (means over pixels). The optimization pipeline
// computes the same quantities in streaming form.
double loss_rgb(std::span<const Vec3> rendered, std::span<const Vec3> observed);
double loss_sil(std::span<const double> opacity, std::span<const double> observed);
// Mean over eligible samples; invalid (low-opacity) entries contribute zero
// to the numerator, and an all-invalid set reports zero (vacuous mean).
double loss_flow(std::span<const Vec2> rendered, std::span<const Vec2> observed,
                 std::span<const uint8_t> valid, int* valid_count = nullptr);
double loss_match(std::span<const Vec3> warped, std::span<const Vec3> matched,
                  std::span<const uint8_t> valid, int* valid_count = nullptr);

struct PixelSample {
  int x = 0, y = 0;
  int t = 0;          // global frame index
  int flow_slot = -1; // index into FrameObs::flow / kFlowOffset, -1 when unavailable
  bool active = false;
};

struct SampleSet {
  std::vector<PixelSample> samples;
  int n_uniform = 0, n_active = 0;
};

/// Easy-to-hard curriculum: uniform pixel samples for the first half of the
/// budget, then additional active samples chosen as the highest-uncertainty
/// pixels among a uniformly drawn candidate pool (deduplicated).
SampleSet sample_pixels(const dataset::Dataset& ds, int64_t iteration, int64_t total_iters,
                        int n_uniform, int n_active, int n_pool, uint64_t seed,
                        const std::function<double(int, int, int)>& uncertainty,
                        bool active_enabled);

/// Compact coordinate net predicting per-pixel color reconstruction error
/// from (x, y, t); its loss is mean absolute error against detached errors
/// and its gradient reaches nothing else.
class UncertaintyNet {
 public:
  UncertaintyNet() = default;
  UncertaintyNet(nnet::ParamStore& store, int width, int hidden_layers, int pe_freqs,
                 uint64_t seed);

  double predict(const nnet::ParamStore& store, double xn, double yn, double tn,
                 nnet::MlpTape* tape = nullptr) const;
  void backward(nnet::ParamStore& store, const nnet::MlpTape& tape, double dout) const;

 private:
  nnet::Mlp mlp_;
  int pe_freqs_ = 6;
  mutable std::vector<double> enc_;
};

}  // namespace artrec::objective
