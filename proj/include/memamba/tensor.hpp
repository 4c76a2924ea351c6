#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "memamba/rng.hpp"

namespace memamba {

// Multiply-add counter hook for the analytic efficiency benchmark. Kernels
// report their forward MAC counts here when a counter is installed.
struct MacCounter {
  unsigned long long macs = 0;
};

inline MacCounter*& active_mac_counter() {
  thread_local MacCounter* counter = nullptr;
  return counter;
}

inline void count_macs(unsigned long long n) {
  if (MacCounter* c = active_mac_counter()) c->macs += n;
}

struct MacScope {
  explicit MacScope(MacCounter& c) : prev_(active_mac_counter()) {
    active_mac_counter() = &c;
  }
  ~MacScope() { active_mac_counter() = prev_; }
  MacCounter* prev_;
};

using Shape = std::vector<std::int64_t>;

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily on first accumulation
  bool requires_grad = false;

  std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Value-semantics handle onto a shared buffer. Tensors without gradient
// records are immutable values and may be shared freely.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto node = std::make_shared<TensorData>();
    std::int64_t n = 1;
    for (std::int64_t e : shape) n *= e;
    node->shape = std::move(shape);
    node->value.assign(static_cast<std::size_t>(n), 0.0);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor scalar(double v) { return full({1}, v); }

  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false) {
    std::int64_t n = 1;
    for (std::int64_t e : shape) n *= e;
    if (n != static_cast<std::int64_t>(data.size()))
      throw std::invalid_argument("tensor: shape does not match data length");
    auto node = std::make_shared<TensorData>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor randn(Shape shape, Rng& rng, double scale = 1.0,
                      bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.node_->value) v = scale * rng.normal();
    return t;
  }

  static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi,
                             bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.node_->value) v = rng.uniform(lo, hi);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->numel(); }
  std::int64_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }

  // 2-D conventions: rows x cols. A 1-D tensor is a single row.
  std::int64_t rows() const { return rank() == 2 ? dim(0) : 1; }
  std::int64_t cols() const { return rank() == 2 ? dim(1) : dim(0); }

  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }
  double& at(std::int64_t i) { return node_->value[static_cast<std::size_t>(i)]; }
  double at(std::int64_t i) const { return node_->value[static_cast<std::size_t>(i)]; }
  double& at(std::int64_t r, std::int64_t c) {
    return node_->value[static_cast<std::size_t>(r * cols() + c)];
  }
  double at(std::int64_t r, std::int64_t c) const {
    return node_->value[static_cast<std::size_t>(r * cols() + c)];
  }
  double item() const {
    if (numel() != 1) throw std::logic_error("item: tensor is not scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  const std::shared_ptr<TensorData>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorData> node_;
};

// Ordered record of executed differentiable operations. Replaying the
// entries in reverse order visits each recorded node exactly once; clearing
// releases every saved intermediate.
class Tape {
 public:
  static Tape*& active() {
    thread_local Tape* tape = nullptr;
    return tape;
  }

  void record(std::function<void()> backward_fn) {
    entries_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return entries_.size(); }

  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
      throw std::logic_error("backward: loss must be a defined scalar");
    if (!loss.requires_grad() || entries_.empty())
      throw std::logic_error("backward: tensor is detached from the tape");
    auto node = loss.node();
    node->ensure_grad();
    node->grad[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

  void clear() { entries_.clear(); }

  struct Scope {
    explicit Scope(Tape& t) : prev_(active()) { active() = &t; }
    ~Scope() { active() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
    Tape* prev_;
  };

 private:
  std::vector<std::function<void()>> entries_;
};

namespace detail {

inline void check_finite(const char* op, const Tensor& t) {
  for (double v : t.node()->value) {
    if (!std::isfinite(v))
      throw std::domain_error(std::string(op) + ": produced a non-finite value");
  }
}

inline bool taping(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs)
    if ((*t).requires_grad()) return true;
  return false;
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// c[p x r] += a[p x q] * b[q x r]
inline void gemm_nn(const double* a, const double* b, double* c, std::int64_t p,
                    std::int64_t q, std::int64_t r) {
  for (std::int64_t i = 0; i < p; ++i) {
    const double* arow = a + i * q;
    double* crow = c + i * r;
    for (std::int64_t k = 0; k < q; ++k) {
      double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b + k * r;
      for (std::int64_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  }
}

// c[p x r] += a[q x p]^T * b[q x r]
inline void gemm_tn(const double* a, const double* b, double* c, std::int64_t p,
                    std::int64_t q, std::int64_t r) {
  for (std::int64_t k = 0; k < q; ++k) {
    const double* arow = a + k * p;
    const double* brow = b + k * r;
    for (std::int64_t i = 0; i < p; ++i) {
      double aki = arow[i];
      if (aki == 0.0) continue;
      double* crow = c + i * r;
      for (std::int64_t j = 0; j < r; ++j) crow[j] += aki * brow[j];
    }
  }
}

// c[p x r] += a[p x q] * b[r x q]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::int64_t p,
                    std::int64_t q, std::int64_t r) {
  for (std::int64_t i = 0; i < p; ++i) {
    const double* arow = a + i * q;
    double* crow = c + i * r;
    for (std::int64_t j = 0; j < r; ++j) {
      const double* brow = b + j * q;
      double acc = 0.0;
      for (std::int64_t k = 0; k < q; ++k) acc += arow[k] * brow[k];
      crow[j] += acc;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix product with reverse-mode rule  a.grad += g b^T,  b.grad += a^T g.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: expects 2-D operands");
  std::int64_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  if (b.dim(0) != q)
    throw std::invalid_argument("matmul: inner dimensions do not match");
  Tensor out = Tensor::zeros({p, r});
  detail::gemm_nn(a.data(), b.data(), out.data(), p, q, r);
  count_macs(static_cast<unsigned long long>(p * q * r));
  detail::check_finite("matmul", out);
  if (detail::taping({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::active()->record([an, bn, on, p, q, r] {
      if (an->requires_grad) {
        an->ensure_grad();
        detail::gemm_nt(on->grad.data(), bn->value.data(), an->grad.data(), p, r, q);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        detail::gemm_tn(an->value.data(), on->grad.data(), bn->grad.data(), q, p, r);
      }
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: expects a 2-D tensor");
  std::int64_t n = a.dim(0), m = a.dim(1);
  Tensor out = Tensor::zeros({m, n});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j) out.at(j, i) = a.at(i, j);
  if (detail::taping({&a})) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    Tape::active()->record([an, on, n, m] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < m; ++j)
          an->grad[i * m + j] += on->grad[j * n + i];
    });
  }
  return out;
}

namespace detail {

template <typename Fwd, typename Bwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  require_same_shape(name, a, b);
  Tensor out = Tensor::zeros(a.shape());
  std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = fwd(a.at(i), b.at(i));
  check_finite(name, out);
  if (taping({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::active()->record([an, bn, on, n, bwd] {
      if (an->requires_grad) an->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        auto [da, db] = bwd(an->value[i], bn->value[i]);
        if (an->requires_grad) an->grad[i] += on->grad[i] * da;
        if (bn->requires_grad) bn->grad[i] += on->grad[i] * db;
      }
    });
  }
  return out;
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Bwd bwd) {
  Tensor out = Tensor::zeros(a.shape());
  std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = fwd(a.at(i));
  check_finite(name, out);
  if (taping({&a})) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    Tape::active()->record([an, on, n, bwd] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        an->grad[i] += on->grad[i] * bwd(an->value[i], on->value[i]);
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  count_macs(static_cast<unsigned long long>(a.numel()));
  return detail::binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair<double, double>{y, x}; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary_op(
      "add_scalar", a, [s](double x) { return x + s; },
      [](double, double) { return 1.0; });
}

inline Tensor mul_scalar(const Tensor& a, double s) {
  return detail::unary_op(
      "mul_scalar", a, [s](double x) { return x * s; },
      [s](double, double) { return s; });
}

// s - a  (scalar-vs-shape broadcast of the subtraction)
inline Tensor sub_from_scalar(double s, const Tensor& a) {
  return detail::unary_op(
      "sub_from_scalar", a, [s](double x) { return s - x; },
      [](double, double) { return -1.0; });
}

inline Tensor uexp(const Tensor& a) {
  return detail::unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

inline Tensor utanh(const Tensor& a) {
  return detail::unary_op(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor usigmoid(const Tensor& a) {
  return detail::unary_op(
      "sigmoid", a,
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                   : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor usilu(const Tensor& a) {
  return detail::unary_op(
      "silu", a,
      [](double x) {
        double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        return x * s;
      },
      [](double x, double) {
        double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        return s * (1.0 + x * (1.0 - s));
      });
}

inline Tensor softplus(const Tensor& a) {
  return detail::unary_op(
      "softplus", a,
      [](double x) {
        if (x > 30.0) return x;
        if (x < -30.0) return std::exp(x);
        return std::log1p(std::exp(x));
      },
      [](double x, double) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      });
}

// -log(x); the domain requirement (x > 0) is part of the contract.
inline Tensor neg_log(const Tensor& a) {
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (a.at(i) <= 0.0)
      throw std::domain_error("neg_log: input must be strictly positive");
  return detail::unary_op(
      "neg_log", a, [](double x) { return -std::log(x); },
      [](double x, double) { return -1.0 / x; });
}

// Gradient passes only through the un-clamped region.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  return detail::unary_op(
      "clamp", a,
      [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// Row-wise softmax over the last axis; rows sum to one.
inline Tensor softmax_lastdim(const Tensor& a) {
  std::int64_t n = a.rows(), d = a.cols();
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    const double* x = a.data() + i * d;
    double* y = out.data() + i * d;
    double mx = x[0];
    for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::int64_t j = 0; j < d; ++j) y[j] /= z;
  }
  detail::check_finite("softmax", out);
  if (detail::taping({&a})) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    Tape::active()->record([an, on, n, d] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const double* y = on->value.data() + i * d;
        const double* g = on->grad.data() + i * d;
        double dot = 0.0;
        for (std::int64_t j = 0; j < d; ++j) dot += g[j] * y[j];
        for (std::int64_t j = 0; j < d; ++j)
          an->grad[i * d + j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

// x[n x d] + b[d] broadcast over rows.
inline Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  std::int64_t n = x.rows(), d = x.cols();
  if (b.numel() != d)
    throw std::invalid_argument("add_rowvec: bias length does not match columns");
  Tensor out = Tensor::zeros(x.shape());
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j)
      out.data()[i * d + j] = x.data()[i * d + j] + b.at(j);
  detail::check_finite("add_rowvec", out);
  if (detail::taping({&x, &b})) {
    out.set_requires_grad(true);
    auto xn = x.node(), bn = b.node(), on = out.node();
    Tape::active()->record([xn, bn, on, n, d] {
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (std::int64_t i = 0; i < n * d; ++i) xn->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < d; ++j) bn->grad[j] += on->grad[i * d + j];
      }
    });
  }
  return out;
}

inline Tensor sum(const Tensor& a) {
  Tensor out = Tensor::scalar(std::accumulate(a.data(), a.data() + a.numel(), 0.0));
  detail::check_finite("sum", out);
  if (detail::taping({&a})) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    Tape::active()->record([an, on] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (double& g : an->grad) g += on->grad[0];
    });
  }
  return out;
}

// Copies rows x[idx[i]] into row i; backward scatter-adds.
inline Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& idx) {
  std::int64_t d = x.cols(), m = static_cast<std::int64_t>(idx.size());
  for (std::int64_t i : idx)
    if (i < 0 || i >= x.rows()) throw std::out_of_range("gather_rows: index out of range");
  Tensor out = Tensor::zeros({m, d});
  for (std::int64_t i = 0; i < m; ++i)
    std::copy_n(x.data() + idx[static_cast<std::size_t>(i)] * d, d, out.data() + i * d);
  if (detail::taping({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record([xn, on, idx, d, m] {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::int64_t i = 0; i < m; ++i) {
        double* dst = xn->grad.data() + idx[static_cast<std::size_t>(i)] * d;
        const double* src = on->grad.data() + i * d;
        for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

inline Tensor reverse_rows(const Tensor& x) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(x.rows()));
  for (std::size_t i = 0; i < idx.size(); ++i)
    idx[i] = x.rows() - 1 - static_cast<std::int64_t>(i);
  return gather_rows(x, idx);
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("concat_rows: column widths differ");
  std::int64_t na = a.rows(), nb = b.rows(), d = a.cols();
  Tensor out = Tensor::zeros({na + nb, d});
  std::copy_n(a.data(), na * d, out.data());
  std::copy_n(b.data(), nb * d, out.data() + na * d);
  if (detail::taping({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::active()->record([an, bn, on, na, nb, d] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::int64_t i = 0; i < na * d; ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::int64_t i = 0; i < nb * d; ++i)
          bn->grad[i] += on->grad[na * d + i];
      }
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  std::int64_t n = 1;
  for (std::int64_t e : shape) n *= e;
  if (n != x.numel()) throw std::invalid_argument("reshape: element count mismatch");
  Tensor out = Tensor::from(std::move(shape),
                            std::vector<double>(x.data(), x.data() + x.numel()));
  if (detail::taping({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record([xn, on, n] {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

// D(i, j) = |x_i - y_j|^2 for row sets x[n x d], y[m x d].
inline Tensor pairwise_sqdist(const Tensor& x, const Tensor& y) {
  if (x.cols() != y.cols())
    throw std::invalid_argument("pairwise_sqdist: feature widths differ");
  std::int64_t n = x.rows(), m = y.rows(), d = x.cols();
  Tensor out = Tensor::zeros({n, m});
  for (std::int64_t i = 0; i < n; ++i) {
    const double* xi = x.data() + i * d;
    for (std::int64_t j = 0; j < m; ++j) {
      const double* yj = y.data() + j * d;
      double acc = 0.0;
      for (std::int64_t k = 0; k < d; ++k) {
        double diff = xi[k] - yj[k];
        acc += diff * diff;
      }
      out.at(i, j) = acc;
    }
  }
  count_macs(static_cast<unsigned long long>(n * m * d));
  detail::check_finite("pairwise_sqdist", out);
  if (detail::taping({&x, &y})) {
    out.set_requires_grad(true);
    auto xn = x.node(), yn = y.node(), on = out.node();
    Tape::active()->record([xn, yn, on, n, m, d] {
      if (xn->requires_grad) xn->ensure_grad();
      if (yn->requires_grad) yn->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < m; ++j) {
          double g = on->grad[i * m + j];
          if (g == 0.0) continue;
          for (std::int64_t k = 0; k < d; ++k) {
            double diff = xn->value[i * d + k] - yn->value[j * d + k];
            if (xn->requires_grad) xn->grad[i * d + k] += 2.0 * g * diff;
            if (yn->requires_grad) yn->grad[j * d + k] -= 2.0 * g * diff;
          }
        }
      }
    });
  }
  return out;
}

// Row-wise layer normalization with learned affine scale/shift.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  std::int64_t n = x.rows(), d = x.cols();
  if (gamma.numel() != d || beta.numel() != d)
    throw std::invalid_argument("layer_norm: affine parameter width mismatch");
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> xhat(static_cast<std::size_t>(n * d));
  std::vector<double> inv_sigma(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = x.data() + i * d;
    double mean = 0.0;
    for (std::int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[static_cast<std::size_t>(i)] = is;
    for (std::int64_t j = 0; j < d; ++j) {
      double h = (row[j] - mean) * is;
      xhat[static_cast<std::size_t>(i * d + j)] = h;
      out.data()[i * d + j] = h * gamma.at(j) + beta.at(j);
    }
  }
  detail::check_finite("layer_norm", out);
  if (detail::taping({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    Tape::active()->record([xn, gn, bn, on, n, d, xhat = std::move(xhat),
                            inv_sigma = std::move(inv_sigma)] {
      if (gn->requires_grad) gn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      if (xn->requires_grad) xn->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const double* g = on->grad.data() + i * d;
        const double* h = xhat.data() + i * d;
        if (gn->requires_grad || bn->requires_grad) {
          for (std::int64_t j = 0; j < d; ++j) {
            if (gn->requires_grad) gn->grad[j] += g[j] * h[j];
            if (bn->requires_grad) bn->grad[j] += g[j];
          }
        }
        if (xn->requires_grad) {
          double mean_gh = 0.0, mean_ghh = 0.0;
          for (std::int64_t j = 0; j < d; ++j) {
            double gh = g[j] * gn->value[j];
            mean_gh += gh;
            mean_ghh += gh * h[j];
          }
          mean_gh /= static_cast<double>(d);
          mean_ghh /= static_cast<double>(d);
          double is = inv_sigma[static_cast<std::size_t>(i)];
          for (std::int64_t j = 0; j < d; ++j) {
            double gh = g[j] * gn->value[j];
            xn->grad[i * d + j] += is * (gh - mean_gh - h[j] * mean_ghh);
          }
        }
      }
    });
  }
  return out;
}

// Depth-wise causal convolution: y[t][c] = b[c] + sum_j w[j][c] x[t-K+1+j][c].
inline Tensor conv1d_causal(const Tensor& x, const Tensor& w, const Tensor& b) {
  std::int64_t L = x.rows(), d = x.cols(), K = w.rows();
  if (w.cols() != d || b.numel() != d)
    throw std::invalid_argument("conv1d_causal: channel widths differ");
  Tensor out = Tensor::zeros(x.shape());
  for (std::int64_t t = 0; t < L; ++t) {
    for (std::int64_t c = 0; c < d; ++c) {
      double acc = b.at(c);
      for (std::int64_t j = 0; j < K; ++j) {
        std::int64_t s = t - (K - 1) + j;
        if (s >= 0) acc += w.at(j, c) * x.at(s, c);
      }
      out.at(t, c) = acc;
    }
  }
  count_macs(static_cast<unsigned long long>(L * K * d));
  detail::check_finite("conv1d_causal", out);
  if (detail::taping({&x, &w, &b})) {
    out.set_requires_grad(true);
    auto xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
    Tape::active()->record([xn, wn, bn, on, L, d, K] {
      if (xn->requires_grad) xn->ensure_grad();
      if (wn->requires_grad) wn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (std::int64_t t = 0; t < L; ++t) {
        for (std::int64_t c = 0; c < d; ++c) {
          double g = on->grad[t * d + c];
          if (g == 0.0) continue;
          if (bn->requires_grad) bn->grad[c] += g;
          for (std::int64_t j = 0; j < K; ++j) {
            std::int64_t s = t - (K - 1) + j;
            if (s < 0) continue;
            if (wn->requires_grad) wn->grad[j * d + c] += g * xn->value[s * d + c];
            if (xn->requires_grad) xn->grad[s * d + c] += g * wn->value[j * d + c];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer step: p <- p - lr * grad  (plain SGD).
inline void sgd_step(std::vector<Tensor>& params, double lr) {
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    double* v = p.data();
    const double* g = p.grad().data();
    for (std::int64_t i = 0; i < p.numel(); ++i) v[i] -= lr * g[i];
  }
}

inline void zero_grads(std::vector<Tensor>& params) {
  for (Tensor& p : params) p.zero_grad();
}

}  // namespace memamba
