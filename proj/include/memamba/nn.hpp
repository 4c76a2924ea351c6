#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "memamba/rng.hpp"
#include "memamba/tensor.hpp"

namespace memamba {

// Affine map y = x W + b with W stored [in x out].
struct Linear {
  Tensor w;
  Tensor b;

  static Linear init(std::int64_t in, std::int64_t out, Rng& rng) {
    Linear l;
    double lim = std::sqrt(6.0 / static_cast<double>(in + out));
    l.w = Tensor::rand_uniform({in, out}, rng, -lim, lim, true);
    l.b = Tensor::zeros({out}, true);
    return l;
  }

  Tensor operator()(const Tensor& x) const { return add_rowvec(matmul(x, w), b); }

  void collect(std::vector<Tensor>& out) {
    out.push_back(w);
    out.push_back(b);
  }

  void fill_zero() {
    std::fill(w.data(), w.data() + w.numel(), 0.0);
    std::fill(b.data(), b.data() + b.numel(), 0.0);
  }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  static LayerNorm init(std::int64_t d) {
    LayerNorm n;
    n.gamma = Tensor::full({d}, 1.0, true);
    n.beta = Tensor::zeros({d}, true);
    return n;
  }

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

  void collect(std::vector<Tensor>& out) {
    out.push_back(gamma);
    out.push_back(beta);
  }
};

// ABMIL gated attention: score_i = w^T (tanh(V x_i) * sigmoid(U x_i)).
// Returns one raw score per instance as an [n x 1] tensor.
struct GatedAttentionScorer {
  Linear v;
  Linear u;
  Linear w;

  static GatedAttentionScorer init(std::int64_t d, std::int64_t hidden, Rng& rng) {
    GatedAttentionScorer s;
    s.v = Linear::init(d, hidden, rng);
    s.u = Linear::init(d, hidden, rng);
    s.w = Linear::init(hidden, 1, rng);
    return s;
  }

  Tensor operator()(const Tensor& x) const {
    return w(mul(utanh(v(x)), usigmoid(u(x))));
  }

  void collect(std::vector<Tensor>& out) {
    v.collect(out);
    u.collect(out);
    w.collect(out);
  }
};

// Two-layer perceptron with SiLU hidden activation.
struct Mlp {
  Linear fc1;
  Linear fc2;

  static Mlp init(std::int64_t in, std::int64_t hidden, std::int64_t out, Rng& rng) {
    Mlp m;
    m.fc1 = Linear::init(in, hidden, rng);
    m.fc2 = Linear::init(hidden, out, rng);
    return m;
  }

  Tensor operator()(const Tensor& x) const { return fc2(usilu(fc1(x))); }

  void collect(std::vector<Tensor>& out) {
    fc1.collect(out);
    fc2.collect(out);
  }
};

}  // namespace memamba
