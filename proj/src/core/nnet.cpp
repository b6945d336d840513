#include "core/nnet.h"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>

namespace artrec::nnet {

int ParamStore::add(const std::string& name, std::vector<int> shape, Group group) {
  if (index_.count(name)) fail(Err::Config, "duplicate tensor name: " + name);
  Tensor t;
  t.name = name;
  t.shape = std::move(shape);
  t.group = group;
  t.v.assign(t.numel(), 0.0);
  int id = (int)tensors_.size();
  tensors_.push_back(std::move(t));
  grads_.emplace_back(tensors_.back().numel(), 0.0);
  m_.emplace_back(tensors_.back().numel(), 0.0);
  v_.emplace_back(tensors_.back().numel(), 0.0);
  index_[name] = id;
  return id;
}

int ParamStore::id(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(Err::Config, "unknown tensor: " + name);
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
}

void ParamStore::adam_step(const std::function<double(const Tensor&)>& lr_of,
                           double beta1, double beta2, double eps) {
  step_ += 1;
  const double bc1 = 1.0 - std::pow(beta1, (double)step_);
  const double bc2 = 1.0 - std::pow(beta2, (double)step_);
  for (size_t i = 0; i < tensors_.size(); ++i) {
    double lr = lr_of(tensors_[i]);
    if (lr <= 0.0) continue;
    auto& p = tensors_[i].v;
    auto& g = grads_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t k = 0; k < p.size(); ++k) {
      m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
      v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
      double mhat = m[k] / bc1;
      double vhat = v[k] / bc2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

namespace {
constexpr char kMagic[8] = {'A', 'R', 'T', 'C', 'K', 'P', '0', '1'};

void write_u64(std::ostream& os, uint64_t v) { os.write((const char*)&v, 8); }
uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read((char*)&v, 8);
  return v;
}
void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), (std::streamsize)s.size());
}
std::string read_str(std::istream& is) {
  uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), (std::streamsize)n);
  return s;
}
}  // namespace

void ParamStore::save(const std::string& path,
                      const std::vector<std::pair<std::string, std::string>>& meta) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Err::Io, "cannot write checkpoint: " + path);
  os.write(kMagic, 8);
  write_u64(os, (uint64_t)step_);
  write_u64(os, meta.size());
  for (auto& [k, val] : meta) {
    write_str(os, k);
    write_str(os, val);
  }
  write_u64(os, tensors_.size());
  for (size_t i = 0; i < tensors_.size(); ++i) {
    const Tensor& t = tensors_[i];
    write_str(os, t.name);
    write_u64(os, (uint64_t)(int)t.group);
    write_u64(os, t.shape.size());
    for (int d : t.shape) write_u64(os, (uint64_t)d);
    os.write((const char*)t.v.data(), (std::streamsize)(t.v.size() * sizeof(double)));
    os.write((const char*)m_[i].data(), (std::streamsize)(m_[i].size() * sizeof(double)));
    os.write((const char*)v_[i].data(), (std::streamsize)(v_[i].size() * sizeof(double)));
  }
  if (!os) fail(Err::Io, "short write: " + path);
}

ParamStore ParamStore::load(const std::string& path,
                            std::vector<std::pair<std::string, std::string>>* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Err::Checkpoint, "cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    fail(Err::Checkpoint, "not a checkpoint file: " + path);
  ParamStore ps;
  ps.step_ = (int64_t)read_u64(is);
  uint64_t nmeta = read_u64(is);
  for (uint64_t i = 0; i < nmeta; ++i) {
    std::string k = read_str(is);
    std::string v = read_str(is);
    if (meta) meta->emplace_back(k, v);
  }
  uint64_t nt = read_u64(is);
  for (uint64_t i = 0; i < nt; ++i) {
    std::string name = read_str(is);
    Group group = (Group)(int)read_u64(is);
    uint64_t nd = read_u64(is);
    std::vector<int> shape(nd);
    for (auto& d : shape) d = (int)read_u64(is);
    int id = ps.add(name, shape, group);
    auto& t = ps.tensors_[id];
    is.read((char*)t.v.data(), (std::streamsize)(t.v.size() * sizeof(double)));
    is.read((char*)ps.m_[id].data(), (std::streamsize)(ps.m_[id].size() * sizeof(double)));
    is.read((char*)ps.v_[id].data(), (std::streamsize)(ps.v_[id].size() * sizeof(double)));
  }
  if (!is) fail(Err::Checkpoint, "truncated checkpoint: " + path);
  return ps;
}

uint64_t ParamStore::checksum(const std::string& prefix) const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& t : tensors_) {
    if (!prefix.empty() && t.name.rfind(prefix, 0) != 0) continue;
    for (char c : t.name) { h ^= (uint8_t)c; h *= 0x100000001b3ULL; }
    for (double d : t.v) {
      uint64_t bits;
      std::memcpy(&bits, &d, 8);
      for (int i = 0; i < 8; ++i) { h ^= (bits >> (8 * i)) & 0xff; h *= 0x100000001b3ULL; }
    }
  }
  return h;
}

int positional_encode_size(int dim, int freqs) { return dim * (1 + 2 * freqs); }

void positional_encode(std::span<const double> x, int freqs, std::span<double> out) {
  const int d = (int)x.size();
  for (int i = 0; i < d; ++i) out[i] = x[i];
  int o = d;
  double scale = kPi;  // 2^k * pi
  for (int k = 0; k < freqs; ++k) {
    for (int i = 0; i < d; ++i) out[o + i] = std::sin(scale * x[i]);
    for (int i = 0; i < d; ++i) out[o + d + i] = std::cos(scale * x[i]);
    o += 2 * d;
    scale *= 2.0;
  }
}

void positional_encode_vjp(std::span<const double> x, int freqs,
                           std::span<const double> dout, std::span<double> dx) {
  const int d = (int)x.size();
  for (int i = 0; i < d; ++i) dx[i] += dout[i];
  int o = d;
  double scale = kPi;
  for (int k = 0; k < freqs; ++k) {
    for (int i = 0; i < d; ++i) {
      double a = scale * x[i];
      dx[i] += dout[o + i] * scale * std::cos(a);
      dx[i] -= dout[o + d + i] * scale * std::sin(a);
    }
    o += 2 * d;
    scale *= 2.0;
  }
}

Act act_from_name(const std::string& name) {
  if (name == "softplus") return Act::Softplus;
  if (name == "tanh") return Act::Tanh;
  if (name == "relu") return Act::Relu;
  if (name == "none") return Act::None;
  fail(Err::Config, "unknown activation: " + name);
}

std::string act_name(Act a) {
  switch (a) {
    case Act::Softplus: return "softplus";
    case Act::Tanh: return "tanh";
    case Act::Relu: return "relu";
    case Act::None: return "none";
  }
  return "?";
}

void MlpSpec::validate() const {
  if (in <= 0 || out <= 0) fail(Err::Config, "mlp widths must be positive");
  for (int h : hidden)
    if (h <= 0) fail(Err::Config, "mlp widths must be positive");
  if (pe_freqs < 0) fail(Err::Config, "pe_freqs must be >= 0");
}

void kaiming_uniform(std::vector<double>& w, int fan_in, uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  double bound = scale * std::sqrt(3.0 / (double)fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : w) x = dist(rng);
}

namespace {
inline double act_fwd(Act a, double x) {
  switch (a) {
    case Act::Softplus:
      // Overflow-safe log(1+e^x).
      return x > 30.0 ? x : std::log1p(std::exp(x));
    case Act::Tanh: return std::tanh(x);
    case Act::Relu: return x > 0 ? x : 0.0;
    case Act::None: return x;
  }
  return x;
}
// Derivative from the post-activation value.
inline double act_bwd_from_post(Act a, double post) {
  switch (a) {
    case Act::Softplus: return 1.0 - std::exp(-post);  // sigmoid(pre)
    case Act::Tanh: return 1.0 - post * post;
    case Act::Relu: return post > 0 ? 1.0 : 0.0;
    case Act::None: return 1.0;
  }
  return 1.0;
}
}  // namespace

Mlp::Mlp(ParamStore& store, const std::string& prefix, MlpSpec spec,
         uint64_t init_seed, double final_scale)
    : spec_(std::move(spec)) {
  spec_.validate();
  dims_.push_back(spec_.in);
  for (int h : spec_.hidden) dims_.push_back(h);
  dims_.push_back(spec_.out);
  const int L = (int)dims_.size() - 1;
  for (int l = 0; l < L; ++l) {
    std::string wn = prefix + "/w" + std::to_string(l);
    std::string bn = prefix + "/b" + std::to_string(l);
    if (store.has(wn)) {
      w_ids_.push_back(store.id(wn));
      b_ids_.push_back(store.id(bn));
      continue;
    }
    int wid = store.add(wn, {dims_[l + 1], dims_[l]}, Group::Mlp);
    int bid = store.add(bn, {dims_[l + 1]}, Group::Mlp);
    double scale = (l == L - 1) ? final_scale : 1.0;
    kaiming_uniform(store.value(wid), dims_[l], hash_mix(init_seed, 2 * l), scale);
    if (l < L - 1)
      kaiming_uniform(store.value(bid), dims_[l], hash_mix(init_seed, 2 * l + 1), scale);
    w_ids_.push_back(wid);
    b_ids_.push_back(bid);
  }
}

void Mlp::forward(const ParamStore& store, std::span<const double> input,
                  std::span<double> output, MlpTape* tape) const {
  if ((int)input.size() != spec_.in) fail(Err::ShapeMismatch, "mlp input width mismatch");
  if ((int)output.size() != spec_.out) fail(Err::ShapeMismatch, "mlp output width mismatch");
  const int L = (int)w_ids_.size();
  if (tape) {
    tape->in.assign(input.begin(), input.end());
    tape->post.resize(L - 1);
  }
  thread_local std::vector<double> cur, next;
  cur.assign(input.begin(), input.end());
  for (int l = 0; l < L; ++l) {
    const auto& W = store.value(w_ids_[l]);
    const auto& b = store.value(b_ids_[l]);
    const int ni = dims_[l], no = dims_[l + 1];
    next.assign(no, 0.0);
    for (int r = 0; r < no; ++r) {
      const double* wrow = W.data() + (size_t)r * ni;
      // four accumulators break the add latency chain; order stays fixed
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      int c = 0;
      for (; c + 4 <= ni; c += 4) {
        s0 += wrow[c] * cur[c];
        s1 += wrow[c + 1] * cur[c + 1];
        s2 += wrow[c + 2] * cur[c + 2];
        s3 += wrow[c + 3] * cur[c + 3];
      }
      double s = b[r] + ((s0 + s1) + (s2 + s3));
      for (; c < ni; ++c) s += wrow[c] * cur[c];
      next[r] = (l == L - 1) ? s : act_fwd(spec_.act, s);
    }
    if (tape && l < L - 1) tape->post[l] = next;
    cur.swap(next);
  }
  std::copy(cur.begin(), cur.end(), output.begin());
  if (tape) tape->out = cur;
}

void Mlp::backward(ParamStore& store, const MlpTape& tape,
                   std::span<const double> dout, std::span<double> dinput) const {
  const int L = (int)w_ids_.size();
  thread_local std::vector<double> dcur, dprev;
  dcur.assign(dout.begin(), dout.end());
  for (int l = L - 1; l >= 0; --l) {
    const auto& W = store.value(w_ids_[l]);
    auto& dW = store.grad(w_ids_[l]);
    auto& db = store.grad(b_ids_[l]);
    const int ni = dims_[l], no = dims_[l + 1];
    const std::vector<double>& x =
        (l == 0) ? tape.in : tape.post[l - 1];
    // Activation derivative first (final layer is linear).
    if (l < L - 1) {
      const auto& post = tape.post[l];
      for (int r = 0; r < no; ++r) dcur[r] *= act_bwd_from_post(spec_.act, post[r]);
    }
    dprev.assign(ni, 0.0);
    for (int r = 0; r < no; ++r) {
      const double g = dcur[r];
      if (g == 0.0) continue;
      double* dwrow = dW.data() + (size_t)r * ni;
      const double* wrow = W.data() + (size_t)r * ni;
      db[r] += g;
      for (int c = 0; c < ni; ++c) {
        dwrow[c] += g * x[c];
        dprev[c] += g * wrow[c];
      }
    }
    dcur.swap(dprev);
  }
  for (size_t i = 0; i < dinput.size(); ++i) dinput[i] += dcur[i];
}

}  // namespace artrec::nnet
