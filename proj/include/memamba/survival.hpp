#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "memamba/nn.hpp"
#include "memamba/tensor.hpp"

namespace memamba {

// c = 1 means right-censored; k is the 1-based interval index.
struct SurvivalLabel {
  double time = 0.0;
  int k = 1;
  int censor = 0;
};

inline constexpr double kProbClamp = 1e-7;

// Attention-weighted sum with softmax-normalized weights (ABMIL aggregation).
inline Tensor aggregate(const Tensor& x, const GatedAttentionScorer& scorer) {
  if (x.rows() < 1) throw std::invalid_argument("aggregate: empty sequence");
  Tensor scores = scorer(x);                                  // [L x 1]
  Tensor weights = softmax_lastdim(transpose(scores));        // [1 x L]
  return matmul(weights, x);                                  // [1 x d]
}

// Bag-level head: concatenate the expert sequences, aggregate, then a
// two-layer MLP to per-interval hazard probabilities.
struct HazardHead {
  GatedAttentionScorer scorer;
  Mlp mlp;

  static HazardHead init(std::int64_t d, std::int64_t attn_hidden,
                         std::int64_t n_bins, Rng& rng) {
    HazardHead h;
    h.scorer = GatedAttentionScorer::init(d, attn_hidden, rng);
    h.mlp = Mlp::init(d, d, n_bins, rng);
    return h;
  }

  // Sequences must share feature width d; any may be undefined/empty.
  Tensor operator()(const std::vector<Tensor>& sequences) const {
    Tensor cat;
    for (const Tensor& s : sequences) {
      if (!s.defined() || s.rows() == 0) continue;
      cat = cat.defined() ? concat_rows(cat, s) : s;
    }
    if (!cat.defined()) throw std::invalid_argument("predict_hazards: no input sequences");
    Tensor emb = aggregate(cat, scorer);
    return usigmoid(mlp(emb));  // [1 x n_bins]
  }

  void collect(std::vector<Tensor>& out) {
    scorer.collect(out);
    mlp.collect(out);
  }
};

// f_surv(H, k) = prod_{i<=k} (1 - h_i), with f_surv(H, 0) = 1.
inline double f_surv(const std::vector<double>& hazards, int k) {
  double p = 1.0;
  for (int i = 0; i < k; ++i) p *= 1.0 - hazards[static_cast<std::size_t>(i)];
  return p;
}

// Discrete-hazard likelihood:
//   L = -c log f(H,k) - (1-c) log f(H,k-1) - (1-c) log h_k
// with probabilities clamped to [1e-7, 1 - 1e-7] before the logs.
inline Tensor surv_loss(const Tensor& hazards, const SurvivalLabel& label) {
  std::int64_t n_bins = hazards.numel();
  if (label.k < 1 || label.k > n_bins)
    throw std::domain_error("surv_loss: interval index out of range");
  Tensor flat = hazards.rank() == 2 ? reshape(hazards, {n_bins}) : hazards;
  Tensor one_minus = clamp(sub_from_scalar(1.0, flat), kProbClamp, 1.0 - kProbClamp);
  Tensor log_surv_terms = neg_log(one_minus);  // [n_bins], -log(1 - h_i)

  auto prefix_mask = [n_bins](int k) {
    Tensor m = Tensor::zeros({n_bins});
    for (int i = 0; i < k; ++i) m.at(i) = 1.0;
    return m;
  };

  double c = static_cast<double>(label.censor);
  Tensor neg_log_f_k = sum(mul(log_surv_terms, prefix_mask(label.k)));
  Tensor neg_log_f_km1 = sum(mul(log_surv_terms, prefix_mask(label.k - 1)));

  Tensor onehot = Tensor::zeros({n_bins});
  onehot.at(label.k - 1) = 1.0;
  Tensor h_k = sum(mul(clamp(flat, kProbClamp, 1.0 - kProbClamp), onehot));
  Tensor neg_log_h_k = neg_log(h_k);

  return add(mul_scalar(neg_log_f_k, c),
             mul_scalar(add(neg_log_f_km1, neg_log_h_k), 1.0 - c));
}

inline Tensor total_loss(const Tensor& l_surv, const Tensor& l_global, double lambda) {
  if (lambda < 0.0) throw std::domain_error("total_loss: lambda must be nonnegative");
  return add(l_surv, mul_scalar(l_global, lambda));
}

// Risk score used for ranking: the negative restricted-mean-survival proxy
// -sum_k f_surv(H, k). Higher means worse prognosis.
inline double risk_from_hazards(const std::vector<double>& hazards) {
  double risk = 0.0;
  double surv = 1.0;
  for (double h : hazards) {
    surv *= 1.0 - h;
    risk -= surv;
  }
  return risk;
}

// Equal-frequency interval edges at the quantiles of the uncensored times
// (linear-interpolation quantiles over the sorted sample).
inline std::vector<double> discretize_times(const std::vector<double>& times,
                                            const std::vector<int>& censors,
                                            int n_bins = 4) {
  if (n_bins < 1) throw std::invalid_argument("discretize_times: n_bins must be >= 1");
  std::vector<double> uncensored;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (censors[i] == 0) uncensored.push_back(times[i]);
  if (uncensored.size() < 4)
    throw std::runtime_error("discretize_times: need at least 4 uncensored patients");
  std::sort(uncensored.begin(), uncensored.end());
  if (uncensored.front() == uncensored.back())
    throw std::runtime_error("discretize_times: degenerate cohort, all event times identical");
  std::vector<double> edges;
  std::size_t n = uncensored.size();
  for (int b = 1; b < n_bins; ++b) {
    double p = static_cast<double>(b) / static_cast<double>(n_bins);
    double pos = p * static_cast<double>(n - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    double frac = pos - static_cast<double>(lo);
    double q = uncensored[lo];
    if (lo + 1 < n) q += frac * (uncensored[lo + 1] - uncensored[lo]);
    edges.push_back(q);
  }
  return edges;
}

// Interval containing the time; boundary ties go to the lower interval.
inline int assign_interval(double time, const std::vector<double>& edges) {
  int k = 1;
  for (double e : edges) {
    if (time <= e) return k;
    ++k;
  }
  return k;
}

}  // namespace memamba
