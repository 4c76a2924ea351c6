#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "memamba/ssm.hpp"
#include "memamba/tensor.hpp"

namespace memamba {

// Cosine-distance cost matrix C(i,j) = 1 - cos(a_i, b_j), entries in [0, 2].
// Row norms are guarded with a 1e-12 floor. Plain-valued: the plan built from
// it is a routing decision and carries no gradient.
struct CostMatrix {
  std::int64_t n = 0, m = 0;
  std::vector<double> c;  // [n x m]
  double at(std::int64_t i, std::int64_t j) const {
    return c[static_cast<std::size_t>(i * m + j)];
  }
};

inline CostMatrix cosine_cost(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("cosine_cost: feature widths differ");
  std::int64_t n = a.rows(), m = b.rows(), d = a.cols();
  std::vector<double> na(static_cast<std::size_t>(n)), nb(static_cast<std::size_t>(m));
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::int64_t k = 0; k < d; ++k) s += a.at(i, k) * a.at(i, k);
    na[static_cast<std::size_t>(i)] = std::max(std::sqrt(s), 1e-12);
  }
  for (std::int64_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::int64_t k = 0; k < d; ++k) s += b.at(j, k) * b.at(j, k);
    nb[static_cast<std::size_t>(j)] = std::max(std::sqrt(s), 1e-12);
  }
  CostMatrix cost;
  cost.n = n;
  cost.m = m;
  cost.c.resize(static_cast<std::size_t>(n * m));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < m; ++j) {
      double dot = 0.0;
      for (std::int64_t k = 0; k < d; ++k) dot += a.at(i, k) * b.at(j, k);
      cost.c[static_cast<std::size_t>(i * m + j)] =
          1.0 - dot / (na[static_cast<std::size_t>(i)] * nb[static_cast<std::size_t>(j)]);
    }
  }
  count_macs(static_cast<unsigned long long>(n * m * d));
  return cost;
}

// Simplified transport plan: each source row sends its whole 1/n mass to the
// cheapest anchor (ties to the smallest column index).
struct TransportPlan {
  std::int64_t n = 0, m = 0;
  std::vector<std::int64_t> assign;  // [n], argmin column per row
  double mass = 0.0;                 // 1/n

  double entry(std::int64_t i, std::int64_t j) const {
    return assign[static_cast<std::size_t>(i)] == j ? mass : 0.0;
  }
  std::vector<double> dense() const {
    std::vector<double> out(static_cast<std::size_t>(n * m), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
      out[static_cast<std::size_t>(i * m + assign[static_cast<std::size_t>(i)])] = mass;
    return out;
  }
  double objective(const CostMatrix& cost) const {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
      s += mass * cost.at(i, assign[static_cast<std::size_t>(i)]);
    return s;
  }
};

inline TransportPlan transport_plan(const CostMatrix& cost) {
  TransportPlan plan;
  plan.n = cost.n;
  plan.m = cost.m;
  plan.mass = 1.0 / static_cast<double>(cost.n);
  plan.assign.resize(static_cast<std::size_t>(cost.n));
  for (std::int64_t i = 0; i < cost.n; ++i) {
    std::int64_t best = 0;
    double best_c = cost.at(i, 0);
    for (std::int64_t j = 1; j < cost.m; ++j) {
      if (cost.at(i, j) < best_c) {
        best_c = cost.at(i, j);
        best = j;
      }
    }
    plan.assign[static_cast<std::size_t>(i)] = best;
  }
  return plan;
}

// X' = M^T X: anchor row j collects mass/n-weighted rows assigned to it.
// Differentiable in X; the plan itself is constant.
inline Tensor transport_apply(const TransportPlan& plan, const Tensor& x) {
  if (x.rows() != plan.n)
    throw std::invalid_argument("transport_apply: row count does not match plan");
  std::int64_t m = plan.m, n = plan.n, d = x.cols();
  Tensor out = Tensor::zeros({m, d});
  for (std::int64_t i = 0; i < n; ++i) {
    double* dst = out.data() + plan.assign[static_cast<std::size_t>(i)] * d;
    const double* src = x.data() + i * d;
    for (std::int64_t k = 0; k < d; ++k) dst[k] += plan.mass * src[k];
  }
  count_macs(static_cast<unsigned long long>(n * d));
  detail::check_finite("transport_apply", out);
  if (detail::taping({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    auto assign = plan.assign;
    double mass = plan.mass;
    Tape::active()->record([xn, on, assign, mass, n, d] {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const double* g = on->grad.data() + assign[static_cast<std::size_t>(i)] * d;
        double* dst = xn->grad.data() + i * d;
        for (std::int64_t k = 0; k < d; ++k) dst[k] += mass * g[k];
      }
    });
  }
  return out;
}

// Median pairwise Euclidean distance over the union of two row sets; used as
// the Gaussian bandwidth when none is fixed. No gradient flows through it.
inline double median_heuristic_sigma(const Tensor& x, const Tensor& y) {
  std::int64_t n = x.rows(), m = y.rows(), d = x.cols();
  std::vector<double> all;
  all.reserve(static_cast<std::size_t>((n + m) * d));
  all.insert(all.end(), x.data(), x.data() + n * d);
  all.insert(all.end(), y.data(), y.data() + m * d);
  std::int64_t total = n + m;
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(total * (total - 1) / 2));
  for (std::int64_t i = 0; i < total; ++i) {
    for (std::int64_t j = i + 1; j < total; ++j) {
      double s = 0.0;
      for (std::int64_t k = 0; k < d; ++k) {
        double diff = all[static_cast<std::size_t>(i * d + k)] -
                      all[static_cast<std::size_t>(j * d + k)];
        s += diff * diff;
      }
      dists.push_back(std::sqrt(s));
    }
  }
  if (dists.empty()) return 1.0;
  std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
  double med = dists[dists.size() / 2];
  return med > 1e-12 ? med : 1.0;
}

// Biased V-statistic of the squared maximum mean discrepancy under a
// Gaussian kernel k(x,y) = exp(-|x-y|^2 / (2 sigma^2)).
inline Tensor mmd2(const Tensor& x, const Tensor& y, double sigma) {
  if (sigma <= 0.0) throw std::domain_error("mmd2: sigma must be positive");
  if (x.rows() != y.rows())
    throw std::invalid_argument("mmd2: sample sets must have equal row counts");
  double inv = -1.0 / (2.0 * sigma * sigma);
  double n = static_cast<double>(x.rows());
  Tensor kxx = uexp(mul_scalar(pairwise_sqdist(x, x), inv));
  Tensor kyy = uexp(mul_scalar(pairwise_sqdist(y, y), inv));
  Tensor kxy = uexp(mul_scalar(pairwise_sqdist(x, y), inv));
  Tensor s = add(add(mul_scalar(sum(kxx), 1.0 / (n * n)),
                     mul_scalar(sum(kyy), 1.0 / (n * n))),
                 mul_scalar(sum(kxy), -2.0 / (n * n)));
  return s;
}

// L_global = MMD^2(Xp', Xg) + MMD^2(Xg', Xp).
inline Tensor global_loss(const Tensor& xp_prime, const Tensor& xg,
                          const Tensor& xg_prime, const Tensor& xp, double sigma) {
  if (xp_prime.rows() != xg.rows() || xg_prime.rows() != xp.rows())
    throw std::invalid_argument("global_loss: transported rows do not align with anchors");
  return add(mmd2(xp_prime, xg, sigma), mmd2(xg_prime, xp, sigma));
}

// Interleave rows a_1, b_1, a_2, b_2, ... then append the tail of the longer
// input; a bijective rearrangement of the m + n rows.
inline std::vector<std::int64_t> interleave_order(std::int64_t m, std::int64_t n) {
  std::vector<std::int64_t> order;
  order.reserve(static_cast<std::size_t>(m + n));
  std::int64_t pairs = std::min(m, n);
  for (std::int64_t i = 0; i < pairs; ++i) {
    order.push_back(i);      // row i of a
    order.push_back(m + i);  // row i of b
  }
  for (std::int64_t i = pairs; i < m; ++i) order.push_back(i);
  for (std::int64_t i = pairs; i < n; ++i) order.push_back(m + i);
  return order;
}

inline Tensor interleave(const Tensor& a, const Tensor& b) {
  if (a.rows() == 0) return b;
  if (b.rows() == 0) return a;
  Tensor cat = concat_rows(a, b);
  return gather_rows(cat, interleave_order(a.rows(), b.rows()));
}

struct FusionConfig {
  double sigma = 0.0;  // <= 0 selects the per-batch median heuristic
  double lambda = 1.0;
  std::int64_t fusion_depth = 2;
};

struct SynergisticResult {
  Tensor fused;    // [(m + n) x d] encoded sequence
  Tensor loss;     // scalar L_global
  Tensor xp_prime; // [m x d] transported pathology features
  Tensor xg_prime; // [n x d] transported genomic features
};

// The Synergistic Expert: bidirectional OT token alignment, MMD distribution
// alignment, interleaved sequence construction, stacked BiMamba encoding.
struct SynergisticExpert {
  std::vector<LayerNorm> norms;
  std::vector<BiMamba> layers;

  static SynergisticExpert init(std::int64_t d, std::int64_t depth,
                                std::int64_t n_state, std::int64_t conv_k, Rng& rng) {
    SynergisticExpert e;
    for (std::int64_t i = 0; i < depth; ++i) {
      Rng layer_rng = rng.fork(static_cast<std::uint64_t>(i + 101));
      e.norms.push_back(LayerNorm::init(d));
      e.layers.push_back(BiMamba::init(d, n_state, conv_k, layer_rng));
    }
    return e;
  }

  Tensor encode(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i)
      h = add(layers[i](norms[i](h)), h);
    return h;
  }

  struct Fused {
    Tensor xp_prime;  // [m x d]
    Tensor xg_prime;  // [n x d]
    Tensor seq;       // [(m + n) x d]
  };

  // OT alignment and interleaving, the inference part of the fusion path.
  Fused fuse(const Tensor& xp, const Tensor& xg) const {
    CostMatrix c_p2g = cosine_cost(xp, xg);
    CostMatrix c_g2p = cosine_cost(xg, xp);
    TransportPlan m_p2g = transport_plan(c_p2g);
    TransportPlan m_g2p = transport_plan(c_g2p);
    Tensor xp_prime = transport_apply(m_p2g, xp);
    Tensor xg_prime = transport_apply(m_g2p, xg);
    Tensor seq = interleave(xp_prime, xg_prime);
    return {std::move(xp_prime), std::move(xg_prime), std::move(seq)};
  }

  SynergisticResult operator()(const Tensor& xp, const Tensor& xg,
                               const FusionConfig& cfg) const {
    Fused f = fuse(xp, xg);

    double sigma = cfg.sigma;
    if (sigma <= 0.0) {
      double s1 = median_heuristic_sigma(f.xp_prime, xg);
      double s2 = median_heuristic_sigma(f.xg_prime, xp);
      sigma = 0.5 * (s1 + s2);
    }
    Tensor loss = global_loss(f.xp_prime, xg, f.xg_prime, xp, sigma);

    Tensor fused = encode(f.seq);
    return {std::move(fused), std::move(loss), std::move(f.xp_prime),
            std::move(f.xg_prime)};
  }

  void collect(std::vector<Tensor>& out) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      norms[i].collect(out);
      layers[i].collect(out);
    }
  }
};

}  // namespace memamba
