#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace vpet::ad {

using Shape = std::vector<int>;

inline int numel(const Shape& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

[[noreturn]] inline void shape_error(const std::string& op, const Shape& a,
                                     const Shape& b) {
  throw std::invalid_argument(op + ": shape mismatch " + shape_str(a) +
                              " vs " + shape_str(b));
}

class Tape;

// Lightweight handle to a tape node. Values are created eagerly: forward
// results are available as soon as the op returns, which lets graph
// construction consult intermediate values (nearest-neighbor assignments,
// hemisphere signs) before the backward pass exists.
class Value {
 public:
  Value() = default;
  Value(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

  const Shape& shape() const;
  int size() const;
  bool requires_grad() const;
  std::span<const double> data() const;
  std::span<const double> grad() const;
  double scalar() const { return data()[0]; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;
    bool rg = false;
    std::function<void()> back;
  };

  Value input(Shape shape, std::span<const double> data, bool requires_grad) {
    if (numel(shape) != static_cast<int>(data.size()))
      throw std::invalid_argument("Tape::input: data length does not match shape");
    nodes_.push_back(Node{std::move(shape),
                          std::vector<double>(data.begin(), data.end()),
                          {}, requires_grad, nullptr});
    return Value(this, static_cast<int>(nodes_.size()) - 1);
  }

  Value input(Shape shape, const std::vector<double>& data, bool requires_grad) {
    return input(std::move(shape), std::span<const double>(data), requires_grad);
  }

  Value constant(Shape shape, std::span<const double> data) {
    return input(std::move(shape), data, false);
  }

  Value scalar_constant(double v) {
    return input(Shape{1}, std::vector<double>{v}, false);
  }

  Value make(Shape shape, bool rg, std::vector<double> val,
             std::function<void()> back) {
    if (numel(shape) != static_cast<int>(val.size()))
      throw std::logic_error("Tape::make: value length does not match shape");
    nodes_.push_back(Node{std::move(shape), std::move(val), {}, rg,
                          rg ? std::move(back) : nullptr});
    return Value(this, static_cast<int>(nodes_.size()) - 1);
  }

  const Node& node(int id) const { return nodes_[id]; }
  Node& mutable_node(int id) { return nodes_[id]; }
  std::span<const double> val(int id) const { return nodes_[id].val; }
  bool rg(int id) const { return nodes_[id].rg; }
  const Shape& shape(int id) const { return nodes_[id].shape; }

  // gradient accumulator view, allocated on first touch
  std::span<double> grad_acc(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
    return n.grad;
  }

  std::span<const double> grad(int id) const { return nodes_[id].grad; }

  void backward(const Value& loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: foreign value");
    if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!nodes_[loss.id()].rg)
      throw std::invalid_argument("backward: loss does not require grad");
    for (Node& n : nodes_)
      if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    grad_acc(loss.id())[0] = 1.0;
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.rg && n.back && !n.grad.empty()) n.back();
    }
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

inline const Shape& Value::shape() const { return tape_->shape(id_); }
inline int Value::size() const { return numel(tape_->shape(id_)); }
inline bool Value::requires_grad() const { return tape_->rg(id_); }
inline std::span<const double> Value::data() const { return tape_->val(id_); }
inline std::span<const double> Value::grad() const { return tape_->grad(id_); }

namespace detail {

inline Tape* same_tape(const Value& a, const Value& b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape())
    throw std::invalid_argument(std::string(op) + ": values from different tapes");
  return a.tape();
}

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

}  // namespace detail

// ---- elementwise binary ----

inline Value add(const Value& a, const Value& b) {
  Tape* t = detail::same_tape(a, b, "add");
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  std::vector<double> out(a.size());
  auto av = a.data(), bv = b.data();
  for (int i = 0; i < a.size(); ++i) out[i] = av[i] + bv[i];
  bool rg = a.requires_grad() || b.requires_grad();
  int ai = a.id(), bi = b.id();
  Value v = t->make(a.shape(), rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, ai, bi, oi] {
      auto g = t->grad(oi);
      if (t->rg(ai)) {
        auto ga = t->grad_acc(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (t->rg(bi)) {
        auto gb = t->grad_acc(bi);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    };
  return v;
}

inline Value sub(const Value& a, const Value& b) {
  Tape* t = detail::same_tape(a, b, "sub");
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  std::vector<double> out(a.size());
  auto av = a.data(), bv = b.data();
  for (int i = 0; i < a.size(); ++i) out[i] = av[i] - bv[i];
  bool rg = a.requires_grad() || b.requires_grad();
  int ai = a.id(), bi = b.id();
  Value v = t->make(a.shape(), rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, ai, bi, oi] {
      auto g = t->grad(oi);
      if (t->rg(ai)) {
        auto ga = t->grad_acc(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (t->rg(bi)) {
        auto gb = t->grad_acc(bi);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    };
  return v;
}

inline Value mul(const Value& a, const Value& b) {
  Tape* t = detail::same_tape(a, b, "mul");
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<double> out(a.size());
  auto av = a.data(), bv = b.data();
  for (int i = 0; i < a.size(); ++i) out[i] = av[i] * bv[i];
  bool rg = a.requires_grad() || b.requires_grad();
  int ai = a.id(), bi = b.id();
  Value v = t->make(a.shape(), rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, ai, bi, oi] {
      auto g = t->grad(oi);
      auto av = t->val(ai);
      auto bv = t->val(bi);
      if (t->rg(ai)) {
        auto ga = t->grad_acc(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (t->rg(bi)) {
        auto gb = t->grad_acc(bi);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    };
  return v;
}

// ---- elementwise unary ----

template <class F, class DF>
inline Value unary(const Value& a, F f, DF df) {
  Tape* t = a.tape();
  std::vector<double> out(a.size());
  auto av = a.data();
  for (int i = 0; i < a.size(); ++i) out[i] = f(av[i]);
  bool rg = a.requires_grad();
  int ai = a.id();
  Value v = t->make(a.shape(), rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, ai, oi, df] {
      auto g = t->grad(oi);
      auto av = t->val(ai);
      auto ov = t->val(oi);
      auto ga = t->grad_acc(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(av[i], ov[i]);
    };
  return v;
}

inline Value relu(const Value& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Value tanh(const Value& a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

inline Value softplus(const Value& a) {
  return unary(a,
               [](double x) {
                 // overflow-safe log(1 + e^x)
                 return x > 30.0 ? x : std::log1p(std::exp(x));
               },
               [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

inline Value exp(const Value& a) {
  return unary(a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

inline Value log(const Value& a) {
  return unary(a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

inline Value sqrt(const Value& a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

inline Value square(const Value& a) {
  return unary(a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

inline Value abs(const Value& a) {
  return unary(a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Value rsqrt(const Value& a) {
  return unary(a, [](double x) { return 1.0 / std::sqrt(x); },
               [](double, double y) { return -0.5 * y * y * y; });
}

inline Value clamp(const Value& a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

inline Value mul_scalar(const Value& a, double c) {
  return unary(a, [c](double x) { return c * x; },
               [c](double, double) { return c; });
}

inline Value add_scalar(const Value& a, double c) {
  return unary(a, [c](double x) { return x + c; },
               [](double, double) { return 1.0; });
}

inline Value neg(const Value& a) { return mul_scalar(a, -1.0); }

// multiply every element by a 1-element tensor (both sides differentiable)
inline Value scale_by(const Value& a, const Value& s) {
  Tape* t = detail::same_tape(a, s, "scale_by");
  if (s.size() != 1) throw std::invalid_argument("scale_by: scale must be scalar");
  double sv = s.data()[0];
  std::vector<double> out(a.size());
  auto av = a.data();
  for (int i = 0; i < a.size(); ++i) out[i] = av[i] * sv;
  bool rg = a.requires_grad() || s.requires_grad();
  int ai = a.id(), si = s.id();
  Value v = t->make(a.shape(), rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, ai, si, oi] {
      auto g = t->grad(oi);
      auto av = t->val(ai);
      double sv = t->val(si)[0];
      if (t->rg(ai)) {
        auto ga = t->grad_acc(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
      }
      if (t->rg(si)) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
        t->grad_acc(si)[0] += acc;
      }
    };
  return v;
}

// ---- broadcast helpers over rows ----

inline std::pair<int, int> rows_cols(const Value& m, const char* op) {
  const Shape& s = m.shape();
  if (s.size() == 2) return {s[0], s[1]};
  if (s.size() == 1) return {1, s[0]};
  throw std::invalid_argument(std::string(op) + ": expected 1-D or 2-D, got " +
                              shape_str(s));
}

inline Value add_rowvec(const Value& m, const Value& v) {
  Tape* t = detail::same_tape(m, v, "add_rowvec");
  auto [r, c] = rows_cols(m, "add_rowvec");
  if (v.shape().size() != 1 || v.shape()[0] != c)
    shape_error("add_rowvec", m.shape(), v.shape());
  std::vector<double> out(m.size());
  auto mv = m.data(), vv = v.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[i * c + j] = mv[i * c + j] + vv[j];
  bool rg = m.requires_grad() || v.requires_grad();
  int mi = m.id(), vi = v.id();
  Value out_v = t->make(m.shape(), rg, std::move(out), nullptr);
  int oi = out_v.id();
  if (rg)
    t->mutable_node(oi).back = [t, mi, vi, oi, r, c] {
      auto g = t->grad(oi);
      if (t->rg(mi)) {
        auto gm = t->grad_acc(mi);
        for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
      }
      if (t->rg(vi)) {
        auto gv = t->grad_acc(vi);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) gv[j] += g[i * c + j];
      }
    };
  return out_v;
}

// scale row i of m by s[i]
inline Value scale_rows(const Value& m, const Value& s) {
  Tape* t = detail::same_tape(m, s, "scale_rows");
  auto [r, c] = rows_cols(m, "scale_rows");
  if (s.shape().size() != 1 || s.shape()[0] != r)
    shape_error("scale_rows", m.shape(), s.shape());
  std::vector<double> out(m.size());
  auto mv = m.data(), sv = s.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[i * c + j] = mv[i * c + j] * sv[i];
  bool rg = m.requires_grad() || s.requires_grad();
  int mi = m.id(), si = s.id();
  Value out_v = t->make(m.shape(), rg, std::move(out), nullptr);
  int oi = out_v.id();
  if (rg)
    t->mutable_node(oi).back = [t, mi, si, oi, r, c] {
      auto g = t->grad(oi);
      auto mv = t->val(mi);
      auto sv = t->val(si);
      if (t->rg(mi)) {
        auto gm = t->grad_acc(mi);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) gm[i * c + j] += g[i * c + j] * sv[i];
      }
      if (t->rg(si)) {
        auto gs = t->grad_acc(si);
        for (int i = 0; i < r; ++i) {
          double acc = 0.0;
          for (int j = 0; j < c; ++j) acc += g[i * c + j] * mv[i * c + j];
          gs[i] += acc;
        }
      }
    };
  return out_v;
}

// repeat a 1-D vector as n identical rows
inline Value repeat_row(const Value& v, int n) {
  Tape* t = v.tape();
  if (v.shape().size() != 1)
    throw std::invalid_argument("repeat_row: expected 1-D input");
  int c = v.shape()[0];
  std::vector<double> out(static_cast<std::size_t>(n) * c);
  auto vv = v.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) out[i * c + j] = vv[j];
  bool rg = v.requires_grad();
  int vi = v.id();
  Value out_v = t->make(Shape{n, c}, rg, std::move(out), nullptr);
  int oi = out_v.id();
  if (rg)
    t->mutable_node(oi).back = [t, vi, oi, n, c] {
      auto g = t->grad(oi);
      auto gv = t->grad_acc(vi);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) gv[j] += g[i * c + j];
    };
  return out_v;
}

// ---- reductions ----

inline Value sum(const Value& a) {
  Tape* t = a.tape();
  double acc = 0.0;
  for (double x : a.data()) acc += x;
  bool rg = a.requires_grad();
  int ai = a.id();
  Value v = t->make(Shape{1}, rg, {acc}, nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, ai, oi] {
      double g = t->grad(oi)[0];
      auto ga = t->grad_acc(ai);
      for (double& x : ga) x += g;
    };
  return v;
}

inline Value mean(const Value& a) {
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size()));
}

// axis 0: column sums -> [C]; axis 1: row sums -> [R]
inline Value sum_axis(const Value& m, int axis) {
  Tape* t = m.tape();
  auto [r, c] = rows_cols(m, "sum_axis");
  if (axis != 0 && axis != 1) throw std::invalid_argument("sum_axis: axis must be 0 or 1");
  int out_n = axis == 0 ? c : r;
  std::vector<double> out(out_n, 0.0);
  auto mv = m.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[axis == 0 ? j : i] += mv[i * c + j];
  bool rg = m.requires_grad();
  int mi = m.id();
  Value v = t->make(Shape{out_n}, rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, mi, oi, r, c, axis] {
      auto g = t->grad(oi);
      auto gm = t->grad_acc(mi);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) gm[i * c + j] += g[axis == 0 ? j : i];
    };
  return v;
}

// columnwise max over rows; gradient routes to the first argmax row
inline Value max_rows(const Value& m) {
  Tape* t = m.tape();
  auto [r, c] = rows_cols(m, "max_rows");
  std::vector<double> out(c);
  std::vector<int> arg(c, 0);
  auto mv = m.data();
  for (int j = 0; j < c; ++j) {
    double best = mv[j];
    int bi = 0;
    for (int i = 1; i < r; ++i)
      if (mv[i * c + j] > best) { best = mv[i * c + j]; bi = i; }
    out[j] = best;
    arg[j] = bi;
  }
  bool rg = m.requires_grad();
  int mi = m.id();
  Value v = t->make(Shape{c}, rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, mi, oi, c, arg] {
      auto g = t->grad(oi);
      auto gm = t->grad_acc(mi);
      for (int j = 0; j < c; ++j) gm[arg[j] * c + j] += g[j];
    };
  return v;
}

// ---- shape ops ----

inline Value concat1d(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat1d: no inputs");
  Tape* t = parts[0].tape();
  int total = 0;
  bool rg = false;
  for (const Value& p : parts) {
    if (p.tape() != t) throw std::invalid_argument("concat1d: mixed tapes");
    if (p.shape().size() != 1)
      throw std::invalid_argument("concat1d: expected 1-D parts, got " +
                                  shape_str(p.shape()));
    total += p.size();
    rg = rg || p.requires_grad();
  }
  std::vector<double> out;
  out.reserve(total);
  std::vector<int> ids;
  std::vector<int> sizes;
  for (const Value& p : parts) {
    auto d = p.data();
    out.insert(out.end(), d.begin(), d.end());
    ids.push_back(p.id());
    sizes.push_back(p.size());
  }
  Value v = t->make(Shape{total}, rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, oi, ids, sizes] {
      auto g = t->grad(oi);
      int off = 0;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        if (t->rg(ids[k])) {
          auto gp = t->grad_acc(ids[k]);
          for (int i = 0; i < sizes[k]; ++i) gp[i] += g[off + i];
        }
        off += sizes[k];
      }
    };
  return v;
}

inline Value slice(const Value& a, int start, int len) {
  Tape* t = a.tape();
  if (a.shape().size() != 1)
    throw std::invalid_argument("slice: expected 1-D input");
  if (start < 0 || len < 1 || start + len > a.size())
    throw std::invalid_argument("slice: range out of bounds");
  auto av = a.data();
  std::vector<double> out(av.begin() + start, av.begin() + start + len);
  bool rg = a.requires_grad();
  int ai = a.id();
  Value v = t->make(Shape{len}, rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, ai, oi, start, len] {
      auto g = t->grad(oi);
      auto ga = t->grad_acc(ai);
      for (int i = 0; i < len; ++i) ga[start + i] += g[i];
    };
  return v;
}

inline Value stack_rows(const std::vector<Value>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
  Tape* t = rows[0].tape();
  int c = rows[0].size();
  bool rg = false;
  for (const Value& r : rows) {
    if (r.tape() != t) throw std::invalid_argument("stack_rows: mixed tapes");
    if (r.shape().size() != 1 || r.size() != c)
      throw std::invalid_argument("stack_rows: rows must be 1-D of equal size");
    rg = rg || r.requires_grad();
  }
  int n = static_cast<int>(rows.size());
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n) * c);
  std::vector<int> ids;
  for (const Value& r : rows) {
    auto d = r.data();
    out.insert(out.end(), d.begin(), d.end());
    ids.push_back(r.id());
  }
  Value v = t->make(Shape{n, c}, rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, oi, ids, c] {
      auto g = t->grad(oi);
      for (std::size_t k = 0; k < ids.size(); ++k) {
        if (!t->rg(ids[k])) continue;
        auto gr = t->grad_acc(ids[k]);
        for (int j = 0; j < c; ++j) gr[j] += g[k * c + j];
      }
    };
  return v;
}

inline Value concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape* t = parts[0].tape();
  auto [r0, c0] = rows_cols(parts[0], "concat_cols");
  int r = r0;
  int total_c = 0;
  bool rg = false;
  std::vector<int> ids, cols;
  for (const Value& p : parts) {
    if (p.tape() != t) throw std::invalid_argument("concat_cols: mixed tapes");
    auto [pr, pc] = rows_cols(p, "concat_cols");
    if (pr != r) shape_error("concat_cols", parts[0].shape(), p.shape());
    total_c += pc;
    rg = rg || p.requires_grad();
    ids.push_back(p.id());
    cols.push_back(pc);
  }
  std::vector<double> out(static_cast<std::size_t>(r) * total_c);
  int off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto d = parts[k].data();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < cols[k]; ++j)
        out[i * total_c + off + j] = d[i * cols[k] + j];
    off += cols[k];
  }
  Value v = t->make(Shape{r, total_c}, rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, oi, ids, cols, r, total_c] {
      auto g = t->grad(oi);
      int off = 0;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        if (t->rg(ids[k])) {
          auto gp = t->grad_acc(ids[k]);
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < cols[k]; ++j)
              gp[i * cols[k] + j] += g[i * total_c + off + j];
        }
        off += cols[k];
      }
    };
  return v;
}

inline Value slice_rows(const Value& m, int start, int len) {
  Tape* t = m.tape();
  auto [r, c] = rows_cols(m, "slice_rows");
  if (start < 0 || len < 1 || start + len > r)
    throw std::invalid_argument("slice_rows: range out of bounds");
  auto mv = m.data();
  std::vector<double> out(mv.begin() + static_cast<std::size_t>(start) * c,
                          mv.begin() + static_cast<std::size_t>(start + len) * c);
  bool rg = m.requires_grad();
  int mi = m.id();
  Value v = t->make(Shape{len, c}, rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, mi, oi, start, len, c] {
      auto g = t->grad(oi);
      auto gm = t->grad_acc(mi);
      for (int i = 0; i < len; ++i)
        for (int j = 0; j < c; ++j)
          gm[(start + i) * c + j] += g[i * c + j];
    };
  return v;
}

inline Value slice_cols(const Value& m, int start, int len) {
  Tape* t = m.tape();
  auto [r, c] = rows_cols(m, "slice_cols");
  if (start < 0 || len < 1 || start + len > c)
    throw std::invalid_argument("slice_cols: range out of bounds");
  std::vector<double> out(static_cast<std::size_t>(r) * len);
  auto mv = m.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < len; ++j) out[i * len + j] = mv[i * c + start + j];
  bool rg = m.requires_grad();
  int mi = m.id();
  Value v = t->make(Shape{r, len}, rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, mi, oi, r, c, start, len] {
      auto g = t->grad(oi);
      auto gm = t->grad_acc(mi);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < len; ++j) gm[i * c + start + j] += g[i * len + j];
    };
  return v;
}

inline Value row(const Value& m, int i) {
  Tape* t = m.tape();
  auto [r, c] = rows_cols(m, "row");
  if (i < 0 || i >= r) throw std::invalid_argument("row: index out of bounds");
  auto mv = m.data();
  std::vector<double> out(mv.begin() + static_cast<std::size_t>(i) * c,
                          mv.begin() + static_cast<std::size_t>(i + 1) * c);
  bool rg = m.requires_grad();
  int mi = m.id();
  Value v = t->make(Shape{c}, rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, mi, oi, i, c] {
      auto g = t->grad(oi);
      auto gm = t->grad_acc(mi);
      for (int j = 0; j < c; ++j) gm[i * c + j] += g[j];
    };
  return v;
}

// ---- linear algebra ----

inline Value matmul(const Value& a, const Value& b) {
  Tape* t = detail::same_tape(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    shape_error("matmul", sa, sb);
  int m = sa[0], k = sa[1], n = sb[1];
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  {
    detail::MapC A(a.data().data(), m, k);
    detail::MapC B(b.data().data(), k, n);
    detail::MapM C(out.data(), m, n);
    C.noalias() = A * B;
  }
  bool rg = a.requires_grad() || b.requires_grad();
  int ai = a.id(), bi = b.id();
  Value v = t->make(Shape{m, n}, rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, ai, bi, oi, m, k, n] {
      detail::MapC G(t->grad(oi).data(), m, n);
      if (t->rg(ai)) {
        detail::MapC B(t->val(bi).data(), k, n);
        detail::MapM GA(t->grad_acc(ai).data(), m, k);
        GA.noalias() += G * B.transpose();
      }
      if (t->rg(bi)) {
        detail::MapC A(t->val(ai).data(), m, k);
        detail::MapM GB(t->grad_acc(bi).data(), k, n);
        GB.noalias() += A.transpose() * G;
      }
    };
  return v;
}

// temporal convolution, stride 1, zero-padded to the input length;
// x: [T, Cin], w: [K, Cin, Cout] (K odd), bias: [Cout]
inline Value conv1d(const Value& x, const Value& w, const Value& bias) {
  Tape* t = detail::same_tape(x, w, "conv1d");
  detail::same_tape(x, bias, "conv1d");
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 2 || sw.size() != 3 || sw[1] != sx[1])
    shape_error("conv1d", sx, sw);
  if (sw[0] % 2 == 0) throw std::invalid_argument("conv1d: kernel size must be odd");
  int T = sx[0], cin = sx[1], K = sw[0], cout = sw[2];
  if (bias.shape() != Shape{cout}) shape_error("conv1d", sw, bias.shape());
  int P = (K - 1) / 2;
  std::vector<double> out(static_cast<std::size_t>(T) * cout);
  auto xv = x.data();
  auto wv = w.data();
  auto bv = bias.data();
  for (int ti = 0; ti < T; ++ti)
    for (int o = 0; o < cout; ++o) {
      double acc = bv[o];
      for (int kk = 0; kk < K; ++kk) {
        int src = ti + kk - P;
        if (src < 0 || src >= T) continue;
        const double* xr = xv.data() + static_cast<std::size_t>(src) * cin;
        const double* wr = wv.data() + (static_cast<std::size_t>(kk) * cin) * cout + o;
        for (int i = 0; i < cin; ++i) acc += xr[i] * wr[static_cast<std::size_t>(i) * cout];
      }
      out[static_cast<std::size_t>(ti) * cout + o] = acc;
    }
  bool rg = x.requires_grad() || w.requires_grad() || bias.requires_grad();
  int xi = x.id(), wi = w.id(), bi = bias.id();
  Value v = t->make(Shape{T, cout}, rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, xi, wi, bi, oi, T, cin, K, cout, P] {
      auto g = t->grad(oi);
      auto xv = t->val(xi);
      auto wv = t->val(wi);
      if (t->rg(xi)) {
        auto gx = t->grad_acc(xi);
        for (int ti = 0; ti < T; ++ti)
          for (int kk = 0; kk < K; ++kk) {
            int src = ti + kk - P;
            if (src < 0 || src >= T) continue;
            double* gxr = gx.data() + static_cast<std::size_t>(src) * cin;
            const double* gr = g.data() + static_cast<std::size_t>(ti) * cout;
            const double* wr = wv.data() + (static_cast<std::size_t>(kk) * cin) * cout;
            for (int i = 0; i < cin; ++i) {
              double acc = 0.0;
              const double* wro = wr + static_cast<std::size_t>(i) * cout;
              for (int o = 0; o < cout; ++o) acc += gr[o] * wro[o];
              gxr[i] += acc;
            }
          }
      }
      if (t->rg(wi)) {
        auto gw = t->grad_acc(wi);
        for (int kk = 0; kk < K; ++kk)
          for (int ti = 0; ti < T; ++ti) {
            int src = ti + kk - P;
            if (src < 0 || src >= T) continue;
            const double* xr = xv.data() + static_cast<std::size_t>(src) * cin;
            const double* gr = g.data() + static_cast<std::size_t>(ti) * cout;
            double* gwr = gw.data() + (static_cast<std::size_t>(kk) * cin) * cout;
            for (int i = 0; i < cin; ++i) {
              double* gwro = gwr + static_cast<std::size_t>(i) * cout;
              double xi_v = xr[i];
              for (int o = 0; o < cout; ++o) gwro[o] += xi_v * gr[o];
            }
          }
      }
      if (t->rg(bi)) {
        auto gb = t->grad_acc(bi);
        for (int ti = 0; ti < T; ++ti)
          for (int o = 0; o < cout; ++o) gb[o] += g[static_cast<std::size_t>(ti) * cout + o];
      }
    };
  return v;
}

// per-row layer normalization with learned gain/offset
inline Value layer_norm(const Value& x, const Value& gamma, const Value& beta,
                        double eps = 1e-5) {
  Tape* t = detail::same_tape(x, gamma, "layer_norm");
  detail::same_tape(x, beta, "layer_norm");
  auto [r, c] = rows_cols(x, "layer_norm");
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    shape_error("layer_norm", x.shape(), gamma.shape());
  std::vector<double> out(x.size());
  std::vector<double> inv_std(r), xhat(x.size());
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  for (int i = 0; i < r; ++i) {
    const double* xr = xv.data() + static_cast<std::size_t>(i) * c;
    double m = 0.0;
    for (int j = 0; j < c; ++j) m += xr[j];
    m /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (xr[j] - m) * (xr[j] - m);
    var /= c;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int j = 0; j < c; ++j) {
      double xh = (xr[j] - m) * is;
      xhat[static_cast<std::size_t>(i) * c + j] = xh;
      out[static_cast<std::size_t>(i) * c + j] = xh * gv[j] + bv[j];
    }
  }
  bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  int xi = x.id(), gi = gamma.id(), bi = beta.id();
  Value v = t->make(x.shape(), rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back =
        [t, xi, gi, bi, oi, r, c, inv_std, xhat] {
          auto g = t->grad(oi);
          auto gv = t->val(gi);
          if (t->rg(xi)) {
            auto gx = t->grad_acc(xi);
            for (int i = 0; i < r; ++i) {
              const double* gr = g.data() + static_cast<std::size_t>(i) * c;
              const double* xh = xhat.data() + static_cast<std::size_t>(i) * c;
              double sum_gy = 0.0, sum_gyx = 0.0;
              for (int j = 0; j < c; ++j) {
                double gy = gr[j] * gv[j];
                sum_gy += gy;
                sum_gyx += gy * xh[j];
              }
              double mg = sum_gy / c, mgx = sum_gyx / c;
              double* gxr = gx.data() + static_cast<std::size_t>(i) * c;
              for (int j = 0; j < c; ++j) {
                double gy = gr[j] * gv[j];
                gxr[j] += (gy - mg - xh[j] * mgx) * inv_std[i];
              }
            }
          }
          if (t->rg(gi)) {
            auto gg = t->grad_acc(gi);
            for (int i = 0; i < r; ++i)
              for (int j = 0; j < c; ++j)
                gg[j] += g[static_cast<std::size_t>(i) * c + j] *
                         xhat[static_cast<std::size_t>(i) * c + j];
          }
          if (t->rg(bi)) {
            auto gb = t->grad_acc(bi);
            for (int i = 0; i < r; ++i)
              for (int j = 0; j < c; ++j)
                gb[j] += g[static_cast<std::size_t>(i) * c + j];
          }
        };
  return v;
}

// ---- domain ops ----

// [x, sin(2^k pi x), cos(2^k pi x)]_{k=0..K-1} per scalar, blocks concatenated
inline Value fourier_embed(const Value& x, int num_freqs) {
  if (num_freqs < 1) throw std::invalid_argument("fourier_embed: K must be >= 1");
  Tape* t = x.tape();
  auto [r, d] = rows_cols(x, "fourier_embed");
  const int block = 2 * num_freqs + 1;
  const int oc = d * block;
  constexpr double pi = 3.14159265358979323846;
  std::vector<double> out(static_cast<std::size_t>(r) * oc);
  auto xv = x.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < d; ++j) {
      double xx = xv[static_cast<std::size_t>(i) * d + j];
      double* o = out.data() + static_cast<std::size_t>(i) * oc + static_cast<std::size_t>(j) * block;
      o[0] = xx;
      double f = pi;
      for (int k = 0; k < num_freqs; ++k) {
        o[1 + 2 * k] = std::sin(f * xx);
        o[2 + 2 * k] = std::cos(f * xx);
        f *= 2.0;
      }
    }
  bool rg = x.requires_grad();
  int xi = x.id();
  Shape os = x.shape().size() == 2 ? Shape{r, oc} : Shape{oc};
  Value v = t->make(os, rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, xi, oi, r, d, num_freqs, block, oc] {
      auto g = t->grad(oi);
      auto xv = t->val(xi);
      auto gx = t->grad_acc(xi);
      constexpr double pi = 3.14159265358979323846;
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < d; ++j) {
          double xx = xv[static_cast<std::size_t>(i) * d + j];
          const double* go = g.data() + static_cast<std::size_t>(i) * oc +
                             static_cast<std::size_t>(j) * block;
          double acc = go[0];
          double f = pi;
          for (int k = 0; k < num_freqs; ++k) {
            acc += f * std::cos(f * xx) * go[1 + 2 * k];
            acc -= f * std::sin(f * xx) * go[2 + 2 * k];
            f *= 2.0;
          }
          gx[static_cast<std::size_t>(i) * d + j] += acc;
        }
    };
  return v;
}

namespace detail {

// Hamilton product matrices: quat_mul(a, b) = L(a) b = R(b) a
inline void quat_L(const double* a, double L[4][4]) {
  L[0][0] = a[0]; L[0][1] = -a[1]; L[0][2] = -a[2]; L[0][3] = -a[3];
  L[1][0] = a[1]; L[1][1] = a[0];  L[1][2] = -a[3]; L[1][3] = a[2];
  L[2][0] = a[2]; L[2][1] = a[3];  L[2][2] = a[0];  L[2][3] = -a[1];
  L[3][0] = a[3]; L[3][1] = -a[2]; L[3][2] = a[1];  L[3][3] = a[0];
}

inline void quat_R(const double* b, double R[4][4]) {
  R[0][0] = b[0]; R[0][1] = -b[1]; R[0][2] = -b[2]; R[0][3] = -b[3];
  R[1][0] = b[1]; R[1][1] = b[0];  R[1][2] = b[3];  R[1][3] = -b[2];
  R[2][0] = b[2]; R[2][1] = -b[3]; R[2][2] = b[0];  R[2][3] = b[1];
  R[3][0] = b[3]; R[3][1] = b[2];  R[3][2] = -b[1]; R[3][3] = b[0];
}

}  // namespace detail

inline Value quat_mul(const Value& a, const Value& b) {
  Tape* t = detail::same_tape(a, b, "quat_mul");
  if (a.shape() != Shape{4} || b.shape() != Shape{4})
    shape_error("quat_mul", a.shape(), b.shape());
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(4);
  out[0] = av[0] * bv[0] - av[1] * bv[1] - av[2] * bv[2] - av[3] * bv[3];
  out[1] = av[0] * bv[1] + av[1] * bv[0] + av[2] * bv[3] - av[3] * bv[2];
  out[2] = av[0] * bv[2] - av[1] * bv[3] + av[2] * bv[0] + av[3] * bv[1];
  out[3] = av[0] * bv[3] + av[1] * bv[2] - av[2] * bv[1] + av[3] * bv[0];
  bool rg = a.requires_grad() || b.requires_grad();
  int ai = a.id(), bi = b.id();
  Value v = t->make(Shape{4}, rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, ai, bi, oi] {
      auto g = t->grad(oi);
      if (t->rg(ai)) {
        double R[4][4];
        detail::quat_R(t->val(bi).data(), R);
        auto ga = t->grad_acc(ai);
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j) ga[j] += R[i][j] * g[i];
      }
      if (t->rg(bi)) {
        double L[4][4];
        detail::quat_L(t->val(ai).data(), L);
        auto gb = t->grad_acc(bi);
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j) gb[j] += L[i][j] * g[i];
      }
    };
  return v;
}

// Rotate points by a (not necessarily unit) quaternion:
//   y = p + (2/|q|^2) (w (v x p) + v x (v x p)).
// pts is [N,3] or [3]; gradients flow to both q and pts.
inline Value quat_rotate(const Value& q, const Value& pts) {
  Tape* t = detail::same_tape(q, pts, "quat_rotate");
  if (q.shape() != Shape{4}) shape_error("quat_rotate", q.shape(), Shape{4});
  auto [n, c] = rows_cols(pts, "quat_rotate");
  if (c != 3) shape_error("quat_rotate", pts.shape(), Shape{n, 3});
  auto qv = q.data();
  auto pv = pts.data();
  const double w = qv[0], vx = qv[1], vy = qv[2], vz = qv[3];
  const double n2 = w * w + vx * vx + vy * vy + vz * vz;
  const double k = 2.0 / n2;
  std::vector<double> out(pts.size());
  for (int i = 0; i < n; ++i) {
    const double* p = pv.data() + 3 * static_cast<std::size_t>(i);
    double c1x = vy * p[2] - vz * p[1];
    double c1y = vz * p[0] - vx * p[2];
    double c1z = vx * p[1] - vy * p[0];
    double c2x = vy * c1z - vz * c1y;
    double c2y = vz * c1x - vx * c1z;
    double c2z = vx * c1y - vy * c1x;
    double* o = out.data() + 3 * static_cast<std::size_t>(i);
    o[0] = p[0] + k * (w * c1x + c2x);
    o[1] = p[1] + k * (w * c1y + c2y);
    o[2] = p[2] + k * (w * c1z + c2z);
  }
  bool rg = q.requires_grad() || pts.requires_grad();
  int qi = q.id(), pi = pts.id();
  Value v = t->make(pts.shape(), rg, std::move(out), nullptr);
  int oi = v.id();
  if (rg)
    t->mutable_node(oi).back = [t, qi, pi, oi, n] {
      auto g = t->grad(oi);
      auto qv = t->val(qi);
      auto pv = t->val(pi);
      const double w = qv[0], vx = qv[1], vy = qv[2], vz = qv[3];
      const double n2 = w * w + vx * vx + vy * vy + vz * vz;
      const double k = 2.0 / n2;
      const bool want_q = t->rg(qi);
      const bool want_p = t->rg(pi);
      double gq[4] = {0, 0, 0, 0};
      std::span<double> gp;
      if (want_p) gp = t->grad_acc(pi);
      for (int i = 0; i < n; ++i) {
        const double* p = pv.data() + 3 * static_cast<std::size_t>(i);
        const double* gr = g.data() + 3 * static_cast<std::size_t>(i);
        double c1x = vy * p[2] - vz * p[1];
        double c1y = vz * p[0] - vx * p[2];
        double c1z = vx * p[1] - vy * p[0];
        double c2x = vy * c1z - vz * c1y;
        double c2y = vz * c1x - vx * c1z;
        double c2z = vx * c1y - vy * c1x;
        double ux = w * c1x + c2x, uy = w * c1y + c2y, uz = w * c1z + c2z;
        if (want_p) {
          // transpose of I + k (w [v]x + [v]x^2): flip the sign of w
          double d1x = vy * gr[2] - vz * gr[1];
          double d1y = vz * gr[0] - vx * gr[2];
          double d1z = vx * gr[1] - vy * gr[0];
          double d2x = vy * d1z - vz * d1y;
          double d2y = vz * d1x - vx * d1z;
          double d2z = vx * d1y - vy * d1x;
          gp[3 * static_cast<std::size_t>(i) + 0] += gr[0] + k * (-w * d1x + d2x);
          gp[3 * static_cast<std::size_t>(i) + 1] += gr[1] + k * (-w * d1y + d2y);
          gp[3 * static_cast<std::size_t>(i) + 2] += gr[2] + k * (-w * d1z + d2z);
        }
        if (want_q) {
          double gu = gr[0] * ux + gr[1] * uy + gr[2] * uz;
          // d/dw: k*c1 - (2w/n2)*k*u
          gq[0] += k * (gr[0] * c1x + gr[1] * c1y + gr[2] * c1z) -
                   (2.0 * w / n2) * k * gu;
          // d/dv_m: k*(w de_m x p + e_m x c1 + v x (e_m x p)) - (2 v_m/n2) k u
          // e_x x p = (0, -p2, p1); e_y x p = (p2, 0, -p0); e_z x p = (-p1, p0, 0)
          {
            double ex_px = 0.0, ex_py = -p[2], ex_pz = p[1];
            double t1x = vy * ex_pz - vz * ex_py;
            double t1y = vz * ex_px - vx * ex_pz;
            double t1z = vx * ex_py - vy * ex_px;
            double exc1x = 0.0, exc1y = -c1z, exc1z = c1y;
            double dx = w * ex_px + exc1x + t1x;
            double dy = w * ex_py + exc1y + t1y;
            double dz = w * ex_pz + exc1z + t1z;
            gq[1] += k * (gr[0] * dx + gr[1] * dy + gr[2] * dz) -
                     (2.0 * vx / n2) * k * gu;
          }
          {
            double ey_px = p[2], ey_py = 0.0, ey_pz = -p[0];
            double t1x = vy * ey_pz - vz * ey_py;
            double t1y = vz * ey_px - vx * ey_pz;
            double t1z = vx * ey_py - vy * ey_px;
            double eyc1x = c1z, eyc1y = 0.0, eyc1z = -c1x;
            double dx = w * ey_px + eyc1x + t1x;
            double dy = w * ey_py + eyc1y + t1y;
            double dz = w * ey_pz + eyc1z + t1z;
            gq[2] += k * (gr[0] * dx + gr[1] * dy + gr[2] * dz) -
                     (2.0 * vy / n2) * k * gu;
          }
          {
            double ez_px = -p[1], ez_py = p[0], ez_pz = 0.0;
            double t1x = vy * ez_pz - vz * ez_py;
            double t1y = vz * ez_px - vx * ez_pz;
            double t1z = vx * ez_py - vy * ez_px;
            double ezc1x = -c1y, ezc1y = c1x, ezc1z = 0.0;
            double dx = w * ez_px + ezc1x + t1x;
            double dy = w * ez_py + ezc1y + t1y;
            double dz = w * ez_pz + ezc1z + t1z;
            gq[3] += k * (gr[0] * dx + gr[1] * dy + gr[2] * dz) -
                     (2.0 * vz / n2) * k * gu;
          }
        }
      }
      if (want_q) {
        auto gacc = t->grad_acc(qi);
        for (int j = 0; j < 4; ++j) gacc[j] += gq[j];
      }
    };
  return v;
}

// normalize a 1-D vector to unit Euclidean norm (used for quaternion heads)
inline Value normalize(const Value& v) {
  Value n2 = sum(square(v));
  Value inv = rsqrt(n2);
  return scale_by(v, inv);
}

}  // namespace vpet::ad
