#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "memamba/nn.hpp"
#include "memamba/tensor.hpp"

namespace memamba {

// phi1(w) = (e^w - 1) / w, the zero-order-hold input factor. Below 1e-6 the
// series limit 1 + w/2 + w^2/6 avoids the singular division.
inline double phi1(double w) {
  if (std::abs(w) < 1e-6) return 1.0 + 0.5 * w + w * w / 6.0;
  return std::expm1(w) / w;
}

inline double phi1_deriv(double w) {
  if (std::abs(w) < 1e-4) return 0.5 + w / 3.0 + w * w / 8.0;
  return (std::exp(w) * (w - 1.0) + 1.0) / (w * w);
}

// Diagonal per-channel LTI system: each of the d channels owns an N-state
// system (delta, A, B, C), all stored row-major [d x N].
struct SSMParams {
  std::int64_t d_model = 1;
  std::int64_t d_state = 1;
  std::vector<double> delta;  // [d], > 0
  std::vector<double> A;      // [d x N]
  std::vector<double> B;      // [d x N]
  std::vector<double> C;      // [d x N]
};

struct DiscretizedParams {
  std::int64_t d_model = 1;
  std::int64_t d_state = 1;
  std::vector<double> abar;  // [d x N]
  std::vector<double> bbar;  // [d x N]
  std::vector<double> C;     // [d x N], carried through for the output map
  bool time_varying = false;
};

// Zero-order-hold discretization: abar = exp(delta A), bbar = delta phi1(delta A) B.
inline DiscretizedParams discretize(const SSMParams& p) {
  DiscretizedParams out;
  out.d_model = p.d_model;
  out.d_state = p.d_state;
  out.C = p.C;
  out.abar.resize(p.A.size());
  out.bbar.resize(p.B.size());
  for (std::int64_t c = 0; c < p.d_model; ++c) {
    double dt = p.delta[static_cast<std::size_t>(c)];
    if (dt <= 0.0) throw std::domain_error("discretize: delta must be positive");
    for (std::int64_t n = 0; n < p.d_state; ++n) {
      std::size_t i = static_cast<std::size_t>(c * p.d_state + n);
      double w = dt * p.A[i];
      out.abar[i] = std::exp(w);
      out.bbar[i] = dt * phi1(w) * p.B[i];
    }
  }
  return out;
}

// Left-to-right recurrence h_t = abar h_{t-1} + bbar x_t, y_t = C h_t, h_0 = 0.
// Plain-valued (no tape); x and y are row-major [L x d].
inline std::vector<double> scan_recurrent(const std::vector<double>& x,
                                          std::int64_t L, const DiscretizedParams& p) {
  std::int64_t d = p.d_model, N = p.d_state;
  if (static_cast<std::int64_t>(x.size()) != L * d)
    throw std::invalid_argument("scan_recurrent: input size mismatch");
  std::vector<double> y(static_cast<std::size_t>(L * d), 0.0);
  std::vector<double> h(static_cast<std::size_t>(d * N), 0.0);
  for (std::int64_t t = 0; t < L; ++t) {
    for (std::int64_t c = 0; c < d; ++c) {
      double xt = x[static_cast<std::size_t>(t * d + c)];
      double acc = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        std::size_t i = static_cast<std::size_t>(c * N + n);
        std::size_t it = p.time_varying ? static_cast<std::size_t>((t * d + c) * N + n) : i;
        double hn = p.abar[it] * h[i] + p.bbar[it] * xt;
        h[i] = hn;
        acc += p.C[it] * hn;
      }
      y[static_cast<std::size_t>(t * d + c)] = acc;
    }
  }
  return y;
}

// Causal kernel K[c][j] = sum_n C abar^j bbar of length L (M = L, full kernel).
inline std::vector<double> ssm_kernel(const DiscretizedParams& p, std::int64_t L) {
  if (p.time_varying)
    throw std::logic_error("ssm_kernel: parameters are input-dependent (LTI mode only)");
  std::int64_t d = p.d_model, N = p.d_state;
  std::vector<double> K(static_cast<std::size_t>(d * L), 0.0);
  for (std::int64_t c = 0; c < d; ++c) {
    for (std::int64_t n = 0; n < N; ++n) {
      std::size_t i = static_cast<std::size_t>(c * N + n);
      double pow_a = 1.0;
      for (std::int64_t j = 0; j < L; ++j) {
        K[static_cast<std::size_t>(c * L + j)] += p.C[i] * pow_a * p.bbar[i];
        pow_a *= p.abar[i];
      }
    }
  }
  return K;
}

// LTI-only convolutional form: y = x * K (causal). Must match scan_recurrent.
inline std::vector<double> scan_convolutional(const std::vector<double>& x,
                                              std::int64_t L,
                                              const DiscretizedParams& p) {
  if (p.time_varying)
    throw std::logic_error("scan_convolutional: parameters are input-dependent (LTI mode only)");
  std::int64_t d = p.d_model;
  if (static_cast<std::int64_t>(x.size()) != L * d)
    throw std::invalid_argument("scan_convolutional: input size mismatch");
  std::vector<double> K = ssm_kernel(p, L);
  std::vector<double> y(static_cast<std::size_t>(L * d), 0.0);
  for (std::int64_t c = 0; c < d; ++c) {
    for (std::int64_t t = 0; t < L; ++t) {
      double acc = 0.0;
      for (std::int64_t j = 0; j <= t; ++j)
        acc += K[static_cast<std::size_t>(c * L + j)] *
               x[static_cast<std::size_t>((t - j) * d + c)];
      y[static_cast<std::size_t>(t * d + c)] = acc;
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Differentiable selective scan. Per step t, channel c, state n:
//   w    = delta[t][c] * A[c][n]
//   h_t  = exp(w) h_{t-1} + delta[t][c] phi1(w) B[t][n] u[t][c]
//   y[t][c] = sum_n C[t][n] h_t[c][n]
// Backward is a hand-rolled reverse recurrence over the saved states.
inline Tensor selective_scan_core(const Tensor& u, const Tensor& delta,
                                  const Tensor& Bseq, const Tensor& Cseq,
                                  const Tensor& A) {
  std::int64_t L = u.rows(), d = u.cols(), N = A.cols();
  if (delta.rows() != L || delta.cols() != d || Bseq.rows() != L ||
      Bseq.cols() != N || Cseq.rows() != L || Cseq.cols() != N || A.rows() != d)
    throw std::invalid_argument("selective_scan: operand shapes are inconsistent");
  for (std::int64_t i = 0; i < delta.numel(); ++i)
    if (delta.at(i) <= 0.0)
      throw std::domain_error("selective_scan: delta must be positive");

  Tensor out = Tensor::zeros({L, d});
  auto h = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(L * d * N), 0.0);
  for (std::int64_t t = 0; t < L; ++t) {
    for (std::int64_t c = 0; c < d; ++c) {
      double dt = delta.at(t, c);
      double ut = u.at(t, c);
      double acc = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        double w = dt * A.at(c, n);
        double abar = std::exp(w);
        double bbar = dt * phi1(w) * Bseq.at(t, n);
        double hprev = t > 0 ? (*h)[static_cast<std::size_t>(((t - 1) * d + c) * N + n)] : 0.0;
        double hn = abar * hprev + bbar * ut;
        (*h)[static_cast<std::size_t>((t * d + c) * N + n)] = hn;
        acc += Cseq.at(t, n) * hn;
      }
      out.at(t, c) = acc;
    }
  }
  count_macs(static_cast<unsigned long long>(6 * L * d * N));
  detail::check_finite("selective_scan", out);

  if (detail::taping({&u, &delta, &Bseq, &Cseq, &A})) {
    out.set_requires_grad(true);
    auto un = u.node(), dn = delta.node(), bn = Bseq.node(), cn = Cseq.node(),
         an = A.node(), on = out.node();
    Tape::active()->record([un, dn, bn, cn, an, on, h, L, d, N] {
      un->ensure_grad();
      dn->ensure_grad();
      bn->ensure_grad();
      cn->ensure_grad();
      an->ensure_grad();
      std::vector<double> gh_run(static_cast<std::size_t>(d * N), 0.0);
      for (std::int64_t t = L - 1; t >= 0; --t) {
        for (std::int64_t c = 0; c < d; ++c) {
          double gy = on->grad[static_cast<std::size_t>(t * d + c)];
          double dt = dn->value[static_cast<std::size_t>(t * d + c)];
          double ut = un->value[static_cast<std::size_t>(t * d + c)];
          double gu_acc = 0.0, gdt_acc = 0.0;
          for (std::int64_t n = 0; n < N; ++n) {
            std::size_t ri = static_cast<std::size_t>(c * N + n);
            std::size_t hi = static_cast<std::size_t>((t * d + c) * N + n);
            double ht = (*h)[hi];
            double hprev =
                t > 0 ? (*h)[static_cast<std::size_t>(((t - 1) * d + c) * N + n)] : 0.0;
            double a_cn = an->value[static_cast<std::size_t>(c * N + n)];
            double b_tn = bn->value[static_cast<std::size_t>(t * N + n)];
            double c_tn = cn->value[static_cast<std::size_t>(t * N + n)];
            double w = dt * a_cn;
            double abar = std::exp(w);
            double p1 = phi1(w);
            double bbar = dt * p1 * b_tn;

            double gh = gh_run[ri] + gy * c_tn;
            cn->grad[static_cast<std::size_t>(t * N + n)] += gy * ht;

            double gabar = gh * hprev;
            double gbbar = gh * ut;
            gu_acc += gh * bbar;
            double gw = gabar * abar + gbbar * dt * b_tn * phi1_deriv(w);
            gdt_acc += gbbar * p1 * b_tn + gw * a_cn;
            an->grad[static_cast<std::size_t>(c * N + n)] += gw * dt;
            bn->grad[static_cast<std::size_t>(t * N + n)] += gbbar * dt * p1;
            gh_run[ri] = gh * abar;
          }
          un->grad[static_cast<std::size_t>(t * d + c)] += gu_acc;
          dn->grad[static_cast<std::size_t>(t * d + c)] += gdt_acc;
        }
      }
    });
  }
  return out;
}

// Input-dependent projections producing per-step delta (softplus-positive),
// B and C from the scanned sequence itself.
struct SelectiveProjections {
  Tensor A;  // [d x N]
  Linear delta_proj;
  Linear b_proj;
  Linear c_proj;

  static SelectiveProjections init(std::int64_t d, std::int64_t n_state, Rng& rng) {
    SelectiveProjections p;
    p.A = Tensor::zeros({d, n_state}, true);
    for (std::int64_t c = 0; c < d; ++c)
      for (std::int64_t n = 0; n < n_state; ++n)
        p.A.at(c, n) = -static_cast<double>(n + 1);
    p.delta_proj = Linear::init(d, d, rng);
    // Bias set so softplus lands in roughly [1e-3, 1e-1] at the start.
    for (std::int64_t c = 0; c < d; ++c) {
      double target = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
      p.delta_proj.b.at(c) = std::log(std::expm1(target));
    }
    p.b_proj = Linear::init(d, n_state, rng);
    p.c_proj = Linear::init(d, n_state, rng);
    return p;
  }

  void collect(std::vector<Tensor>& out) {
    out.push_back(A);
    delta_proj.collect(out);
    b_proj.collect(out);
    c_proj.collect(out);
  }
};

// Eq.-4 recurrence with per-step discretization, differentiable end-to-end.
inline Tensor selective_scan(const Tensor& x, const SelectiveProjections& proj) {
  Tensor delta = softplus(proj.delta_proj(x));
  Tensor b = proj.b_proj(x);
  Tensor c = proj.c_proj(x);
  return selective_scan_core(x, delta, b, c, proj.A);
}

// One Mamba-style branch: Linear -> causal Conv1D -> SiLU -> selective SSM,
// gated by Z = SiLU(Linear(x)).
struct MambaBranch {
  Linear in_proj;
  Tensor conv_w;  // [K x d]
  Tensor conv_b;  // [d]
  SelectiveProjections ssm;
  Linear gate_proj;

  static MambaBranch init(std::int64_t d, std::int64_t n_state, std::int64_t conv_k,
                          Rng& rng) {
    MambaBranch b;
    b.in_proj = Linear::init(d, d, rng);
    double lim = std::sqrt(1.0 / static_cast<double>(conv_k));
    b.conv_w = Tensor::rand_uniform({conv_k, d}, rng, -lim, lim, true);
    b.conv_b = Tensor::zeros({d}, true);
    b.ssm = SelectiveProjections::init(d, n_state, rng);
    b.gate_proj = Linear::init(d, d, rng);
    return b;
  }

  Tensor operator()(const Tensor& x) const {
    Tensor u = usilu(conv1d_causal(in_proj(x), conv_w, conv_b));
    Tensor y = selective_scan(u, ssm);
    Tensor z = usilu(gate_proj(x));
    return mul(z, y);
  }

  void collect(std::vector<Tensor>& out) {
    in_proj.collect(out);
    out.push_back(conv_w);
    out.push_back(conv_b);
    ssm.collect(out);
    gate_proj.collect(out);
  }
};

// Forward branch on x plus backward branch on the reversed sequence
// (re-reversed), summed and linearly projected.
struct BiMamba {
  MambaBranch fwd;
  MambaBranch bwd;
  Linear out_proj;

  static BiMamba init(std::int64_t d, std::int64_t n_state, std::int64_t conv_k,
                      Rng& rng) {
    BiMamba b;
    b.fwd = MambaBranch::init(d, n_state, conv_k, rng);
    b.bwd = MambaBranch::init(d, n_state, conv_k, rng);
    b.out_proj = Linear::init(d, d, rng);
    return b;
  }

  Tensor operator()(const Tensor& x) const {
    Tensor yf = fwd(x);
    Tensor yb = reverse_rows(bwd(reverse_rows(x)));
    return out_proj(add(yf, yb));
  }

  void collect(std::vector<Tensor>& out) {
    fwd.collect(out);
    bwd.collect(out);
    out_proj.collect(out);
  }
};

}  // namespace memamba
