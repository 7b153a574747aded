#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vpet/autodiff.hpp"
#include "vpet/rng.hpp"

namespace vpet::nn {

using ad::Shape;
using ad::Tape;
using ad::Value;

struct Param {
  Shape shape;
  std::vector<double> value;
};

// Named parameter tensors. Iteration order is the map order (sorted by
// name), which keeps serialization and optimizer traversal deterministic.
class ParamStore {
 public:
  Param& create(const std::string& name, Shape shape) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) throw std::invalid_argument("ParamStore: duplicate name " + name);
    it->second.shape = std::move(shape);
    it->second.value.assign(ad::numel(it->second.shape), 0.0);
    return it->second;
  }

  Param& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end())
      throw std::out_of_range("ParamStore: unknown parameter " + name);
    return it->second;
  }

  const Param& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end())
      throw std::out_of_range("ParamStore: unknown parameter " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& [k, p] : params_) n += p.value.size();
    return n;
  }

 private:
  std::map<std::string, Param> params_;
};

// uniform fan-in init: U(-sqrt(3/fan_in), sqrt(3/fan_in)) scaled by gain
inline void init_uniform_fan_in(Param& p, int fan_in, Rng& rng, double gain = 1.0) {
  double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  for (double& v : p.value) v = rng.uniform(-bound, bound);
}

// ---- dense / MLP ----

inline void create_dense(ParamStore& store, const std::string& prefix, int in,
                         int out, Rng& rng, double gain = 1.0) {
  init_uniform_fan_in(store.create(prefix + ".w", Shape{in, out}), in, rng, gain);
  store.create(prefix + ".b", Shape{out});
}

inline void create_mlp(ParamStore& store, const std::string& prefix,
                       const std::vector<int>& widths, Rng& rng,
                       double final_gain = 1.0) {
  if (widths.size() < 2) throw std::invalid_argument("create_mlp: need >= 2 widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    double gain = (i + 2 == widths.size()) ? final_gain : 1.0;
    create_dense(store, prefix + "." + std::to_string(i), widths[i],
                 widths[i + 1], rng, gain);
  }
}

inline void create_conv(ParamStore& store, const std::string& prefix, int k,
                        int cin, int cout, Rng& rng) {
  init_uniform_fan_in(store.create(prefix + ".w", Shape{k, cin, cout}),
                      k * cin, rng);
  store.create(prefix + ".b", Shape{cout});
}

inline void create_layer_norm(ParamStore& store, const std::string& prefix, int c) {
  Param& g = store.create(prefix + ".g", Shape{c});
  std::fill(g.value.begin(), g.value.end(), 1.0);
  store.create(prefix + ".o", Shape{c});
}

// Binds store parameters into a tape as leaf values (one per step/tape).
class Binding {
 public:
  Binding(Tape& tape, ParamStore& store, bool requires_grad = true)
      : tape_(&tape), store_(&store), rg_(requires_grad) {}

  Value operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Param& p = store_->at(name);
    Value v = tape_->input(p.shape, p.value, rg_);
    bound_.emplace(name, v);
    return v;
  }

  // read accumulated gradients back out, keyed by name
  void export_grads(std::map<std::string, std::vector<double>>& grads) const {
    for (const auto& [name, v] : bound_) {
      auto g = v.grad();
      auto [it, inserted] = grads.try_emplace(name);
      if (inserted) it->second.assign(v.size(), 0.0);
      if (!g.empty())
        for (int i = 0; i < v.size(); ++i) it->second[i] += g[i];
    }
  }

  Tape& tape() { return *tape_; }

 private:
  Tape* tape_;
  ParamStore* store_;
  bool rg_;
  std::map<std::string, Value> bound_;
};

enum class Act { kRelu, kTanh, kSoftplus, kNone };

inline Value activate(const Value& x, Act act) {
  switch (act) {
    case Act::kRelu: return ad::relu(x);
    case Act::kTanh: return ad::tanh(x);
    case Act::kSoftplus: return ad::softplus(x);
    case Act::kNone: return x;
  }
  return x;
}

inline Value dense(Binding& p, const std::string& prefix, const Value& x) {
  Value w = p(prefix + ".w");
  Value b = p(prefix + ".b");
  bool was_1d = x.shape().size() == 1;
  Value x2 = x;
  if (was_1d) x2 = ad::stack_rows({x});
  Value y = ad::add_rowvec(ad::matmul(x2, w), b);
  if (was_1d) y = ad::row(y, 0);
  return y;
}

// affine-activation stack; the final layer stays linear
inline Value mlp_forward(Binding& p, const std::string& prefix, const Value& x,
                         int layers, Act act = Act::kRelu) {
  Value h = x;
  for (int i = 0; i < layers; ++i) {
    h = dense(p, prefix + "." + std::to_string(i), h);
    if (i + 1 < layers) h = activate(h, act);
  }
  return h;
}

inline Value conv1d(Binding& p, const std::string& prefix, const Value& x) {
  return ad::conv1d(x, p(prefix + ".w"), p(prefix + ".b"));
}

inline Value layer_norm(Binding& p, const std::string& prefix, const Value& x) {
  return ad::layer_norm(x, p(prefix + ".g"), p(prefix + ".o"));
}

// ---- probabilistic pieces ----

// z = mu + exp(log_sigma) * eps with externally supplied noise
inline Value reparameterize(const Value& mu, const Value& log_sigma,
                            const Value& eps) {
  if (mu.shape() != log_sigma.shape())
    ad::shape_error("reparameterize", mu.shape(), log_sigma.shape());
  if (mu.shape() != eps.shape())
    ad::shape_error("reparameterize", mu.shape(), eps.shape());
  return ad::add(mu, ad::mul(ad::exp(log_sigma), eps));
}

inline Value reparameterize(Tape& tape, const Value& mu, const Value& log_sigma,
                            std::uint64_t noise_seed) {
  Rng rng(derive_seed(noise_seed, "reparam"));
  std::vector<double> eps(mu.size());
  for (double& e : eps) e = rng.normal();
  return reparameterize(mu, log_sigma, tape.constant(mu.shape(), eps));
}

// KL(N(mu, sigma) || N(0, I)) = 0.5 sum(mu^2 + sigma^2 - 1 - 2 log sigma)
inline Value kl_diag_gaussian(const Value& mu, const Value& log_sigma) {
  if (mu.shape() != log_sigma.shape())
    ad::shape_error("kl_diag_gaussian", mu.shape(), log_sigma.shape());
  Value s2 = ad::exp(ad::mul_scalar(log_sigma, 2.0));
  Value core = ad::add(ad::add(ad::square(mu), s2),
                       ad::add_scalar(ad::mul_scalar(log_sigma, -2.0), -1.0));
  return ad::mul_scalar(ad::sum(core), 0.5);
}

// fixed sinusoidal table, rows t = 0..T-1:
// col 2i   -> sin(t / 10000^(2i/dim)), col 2i+1 -> cos(same)
inline std::vector<double> time_embedding_table(int t_count, int dim = 128) {
  if (t_count < 1) throw std::invalid_argument("time_embeddings: T must be >= 1");
  if (dim % 2 != 0) throw std::invalid_argument("time_embeddings: dim must be even");
  std::vector<double> out(static_cast<std::size_t>(t_count) * dim);
  for (int t = 0; t < t_count; ++t)
    for (int i = 0; i < dim / 2; ++i) {
      double rate = std::pow(10000.0, -2.0 * i / static_cast<double>(dim));
      out[static_cast<std::size_t>(t) * dim + 2 * i] = std::sin(t * rate);
      out[static_cast<std::size_t>(t) * dim + 2 * i + 1] = std::cos(t * rate);
    }
  return out;
}

inline Value time_embeddings(Tape& tape, int t_count, int dim = 128) {
  return tape.constant(Shape{t_count, dim}, time_embedding_table(t_count, dim));
}

// ---- Adam ----

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t s) { step_ = s; }

  void step(ParamStore& params,
            const std::map<std::string, std::vector<double>>& grads) {
    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, p] : params) {
      auto git = grads.find(name);
      if (git == grads.end()) continue;
      const std::vector<double>& g = git->second;
      if (g.size() != p.value.size())
        throw std::invalid_argument("adam_step: gradient shape mismatch for " + name);
      Moments& m = moments_[name];
      if (m.m.empty()) {
        m.m.assign(g.size(), 0.0);
        m.v.assign(g.size(), 0.0);
      }
      for (std::size_t i = 0; i < g.size(); ++i) {
        m.m[i] = cfg_.beta1 * m.m[i] + (1.0 - cfg_.beta1) * g[i];
        m.v[i] = cfg_.beta2 * m.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        double mhat = m.m[i] / bc1;
        double vhat = m.v[i] / bc2;
        p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  // expose moments for checkpointing
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
  export_moments() const {
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> out;
    for (const auto& [k, m] : moments_) out[k] = {m.m, m.v};
    return out;
  }

  void import_moments(
      const std::map<std::string,
                     std::pair<std::vector<double>, std::vector<double>>>& in) {
    moments_.clear();
    for (const auto& [k, mv] : in) moments_[k] = Moments{mv.first, mv.second};
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

// ---- checkpoint format ----
// magic "VPET", u32 version, then length-prefixed entries:
//   u32 name_len, name bytes, u32 rank, u32 dims..., f64le values.

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'V', 'P', 'E', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(std::ostream& out, const ParamStore& store) {
  out.write(kCheckpointMagic, 4);
  detail::write_u32(out, kCheckpointVersion);
  for (const auto& [name, p] : store) {
    detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(out, static_cast<std::uint32_t>(p.shape.size()));
    for (int d : p.shape) detail::write_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

inline void save_checkpoint(const std::string& path, const ParamStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  save_checkpoint(out, store);
}

inline ParamStore load_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic bytes");
  std::uint32_t version = detail::read_u32(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  ParamStore store;
  while (true) {
    std::uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), 4);
    if (in.eof()) break;
    if (!in) throw std::runtime_error("checkpoint: truncated entry header");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint32_t rank = detail::read_u32(in);
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i)
      shape[i] = static_cast<int>(detail::read_u32(in));
    Param& p = store.create(name, shape);
    in.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated payload for " + name);
  }
  return store;
}

inline ParamStore load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  return load_checkpoint(in);
}

// A training checkpoint is one store: model parameters plus optimizer
// moments under "opt.m."/"opt.v." and named scalars under "meta.".
inline ParamStore pack_training_state(const ParamStore& params,
                                      const AdamState& adam,
                                      const std::map<std::string, double>& meta) {
  ParamStore out;
  for (const auto& [name, p] : params) {
    Param& q = out.create(name, p.shape);
    q.value = p.value;
  }
  for (const auto& [name, mv] : adam.export_moments()) {
    Param& m = out.create("opt.m." + name, params.at(name).shape);
    m.value = mv.first;
    Param& v = out.create("opt.v." + name, params.at(name).shape);
    v.value = mv.second;
  }
  out.create("meta.step", Shape{1}).value = {
      static_cast<double>(adam.step_count())};
  for (const auto& [key, val] : meta) out.create("meta." + key, Shape{1}).value = {val};
  return out;
}

struct TrainingState {
  ParamStore params;
  AdamState adam;
  std::map<std::string, double> meta;
};

inline TrainingState unpack_training_state(const ParamStore& packed,
                                           AdamConfig adam_cfg = {}) {
  TrainingState st;
  st.adam = AdamState(adam_cfg);
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
  for (const auto& [name, p] : packed) {
    if (name.rfind("opt.m.", 0) == 0) {
      moments[name.substr(6)].first = p.value;
    } else if (name.rfind("opt.v.", 0) == 0) {
      moments[name.substr(6)].second = p.value;
    } else if (name.rfind("meta.", 0) == 0) {
      st.meta[name.substr(5)] = p.value.at(0);
    } else {
      Param& q = st.params.create(name, p.shape);
      q.value = p.value;
    }
  }
  st.adam.import_moments(moments);
  auto it = st.meta.find("step");
  if (it != st.meta.end())
    st.adam.set_step_count(static_cast<std::int64_t>(it->second));
  return st;
}

}  // namespace vpet::nn
