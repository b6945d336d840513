#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "core/common.h"

namespace artrec::nnet {

// Parameter groups drive per-group learning rates in the optimizer. Fixed
// tensors (e.g. root-pose initializers) are state carried in the store but
// never updated.
enum class Group : int { Mlp = 0, Codes = 1, Bones = 2, Feat = 3, Cam = 4, Scalar = 5, Fixed = 6 };
constexpr int kNumGroups = 7;

struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> v;
  Group group = Group::Mlp;

  int numel() const {
    int n = 1;
    for (int d : shape) n *= d;
    return n;
  }
};

/// Named learnable tensors with one gradient buffer and one Adam moment pair
/// per tensor. The step counter increases by exactly one per adam_step.
class ParamStore {
 public:
  int add(const std::string& name, std::vector<int> shape, Group group);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  int id(const std::string& name) const;
  int count() const { return (int)tensors_.size(); }

  Tensor& tensor(int id) { return tensors_[id]; }
  const Tensor& tensor(int id) const { return tensors_[id]; }
  std::vector<double>& value(int id) { return tensors_[id].v; }
  const std::vector<double>& value(int id) const { return tensors_[id].v; }
  std::vector<double>& grad(int id) { return grads_[id]; }
  const std::vector<double>& grad(int id) const { return grads_[id]; }

  void zero_grads();

  // Standard Adam with bias correction. lr_of returns the learning rate for a
  // tensor; a non-positive rate skips the tensor entirely (params and moments
  // untouched). Gradients are left in place; the caller zeroes them.
  void adam_step(const std::function<double(const Tensor&)>& lr_of,
                 double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void adam_step(double lr) {
    adam_step([lr](const Tensor&) { return lr; });
  }

  int64_t step() const { return step_; }

  // Self-describing binary container of named tensors + shapes + step counter
  // together with free-form text metadata. Round-trips bit-exactly.
  void save(const std::string& path,
            const std::vector<std::pair<std::string, std::string>>& meta = {}) const;
  static ParamStore load(const std::string& path,
                         std::vector<std::pair<std::string, std::string>>* meta = nullptr);

  // Order-insensitive digest of all parameter values (shared-parameter freeze checks).
  uint64_t checksum(const std::string& name_prefix = "") const;

  const std::vector<Tensor>& tensors() const { return tensors_; }

 private:
  std::unordered_map<std::string, int> index_;
  std::vector<Tensor> tensors_;
  std::vector<std::vector<double>> grads_;
  std::vector<std::vector<double>> m_, v_;
  int64_t step_ = 0;
};

// NeRF-style encoding [x, sin(2^k pi x), cos(2^k pi x)] for k = 0..freqs-1.
// freqs = 0 passes the input through unchanged.
int positional_encode_size(int dim, int freqs);
void positional_encode(std::span<const double> x, int freqs, std::span<double> out);
// d(loss)/dx given d(loss)/d(encoded).
void positional_encode_vjp(std::span<const double> x, int freqs,
                           std::span<const double> dout, std::span<double> dx);

enum class Act { Softplus, Tanh, Relu, None };
Act act_from_name(const std::string& name);
std::string act_name(Act a);

struct MlpSpec {
  int in = 0;
  std::vector<int> hidden;
  int out = 0;
  Act act = Act::Softplus;
  int pe_freqs = 0;  // encoding convention used by the owner; the net itself takes encoded input

  void validate() const;
};

// Activation record of one forward call; post-activations are enough to
// recover every local derivative.
struct MlpTape {
  std::vector<double> in;
  std::vector<std::vector<double>> post;  // one per hidden layer
  std::vector<double> out;
};

/// A small fully-connected network whose weights live in a ParamStore.
/// Layer l computes act(W_l x + b_l); the final layer is linear.
class Mlp {
 public:
  Mlp() = default;
  // Registers (or re-binds, when the tensors already exist) weights named
  // "<prefix>/w<l>" and "<prefix>/b<l>".
  Mlp(ParamStore& store, const std::string& prefix, MlpSpec spec,
      uint64_t init_seed, double final_scale = 1.0);

  const MlpSpec& spec() const { return spec_; }

  void forward(const ParamStore& store, std::span<const double> input,
               std::span<double> output, MlpTape* tape = nullptr) const;

  // Accumulates parameter gradients into the store and returns d(loss)/d(input)
  // in dinput (accumulated as well).
  void backward(ParamStore& store, const MlpTape& tape,
                std::span<const double> dout, std::span<double> dinput) const;

  int num_layers() const { return (int)w_ids_.size(); }
  int weight_id(int layer) const { return w_ids_[layer]; }
  int bias_id(int layer) const { return b_ids_[layer]; }

 private:
  MlpSpec spec_;
  std::vector<int> w_ids_, b_ids_;
  std::vector<int> dims_;  // in, hidden..., out
};

// Uniform Kaiming-style fan-in init in [-sqrt(3/fan_in), +sqrt(3/fan_in)].
void kaiming_uniform(std::vector<double>& w, int fan_in, uint64_t seed, double scale = 1.0);

}  // namespace artrec::nnet
