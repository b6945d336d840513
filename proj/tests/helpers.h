#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "core/nnet.h"

namespace testutil {

// Central finite differences of a scalar function over selected parameter
// entries, compared against analytic gradients. Returns max relative error
// (relative to max(|analytic|, |fd|, floor)).
struct GradCheck {
  double max_rel = 0;
  double worst_analytic = 0, worst_fd = 0;
  std::string worst_name;
};

inline GradCheck check_param_gradients(
    artrec::nnet::ParamStore& store,
    const std::function<double()>& loss_fn,       // pure forward
    const std::function<void()>& backward_fn,     // zero_grads + forward + backward
    const std::vector<std::pair<int, int>>& entries,  // (tensor id, flat index)
    double h = 1e-5, double floor = 1e-6) {
  backward_fn();
  std::vector<double> analytic;
  for (auto [id, idx] : entries) analytic.push_back(store.grad(id)[idx]);
  GradCheck out;
  for (size_t k = 0; k < entries.size(); ++k) {
    auto [id, idx] = entries[k];
    double orig = store.value(id)[idx];
    store.value(id)[idx] = orig + h;
    double lp = loss_fn();
    store.value(id)[idx] = orig - h;
    double lm = loss_fn();
    store.value(id)[idx] = orig;
    double fd = (lp - lm) / (2 * h);
    double denom = std::max({std::abs(analytic[k]), std::abs(fd), floor});
    double rel = std::abs(analytic[k] - fd) / denom;
    if (rel > out.max_rel) {
      out.max_rel = rel;
      out.worst_analytic = analytic[k];
      out.worst_fd = fd;
      out.worst_name = store.tensor(id).name + "[" + std::to_string(idx) + "]";
    }
  }
  return out;
}

// Deterministic selection of parameter entries spread over all tensors.
inline std::vector<std::pair<int, int>> pick_entries(const artrec::nnet::ParamStore& store,
                                                     int per_tensor, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::pair<int, int>> out;
  for (int id = 0; id < store.count(); ++id) {
    int n = store.tensor(id).numel();
    for (int k = 0; k < per_tensor && k < n; ++k) {
      std::uniform_int_distribution<int> d(0, n - 1);
      out.push_back({id, d(rng)});
    }
  }
  return out;
}

}  // namespace testutil
