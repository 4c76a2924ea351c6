#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "memamba/nn.hpp"
#include "memamba/ssm.hpp"
#include "memamba/tensor.hpp"

namespace memamba {

// A permutation over instance rows together with its inverse, so a reordered
// branch can be restored exactly (pure gather/scatter).
struct ScanPermutation {
  std::vector<std::int64_t> order;    // row i of the reordered sequence = order[i]
  std::vector<std::int64_t> inverse;  // restores the original layout

  static ScanPermutation from_order(std::vector<std::int64_t> order) {
    ScanPermutation p;
    p.inverse.assign(order.size(), 0);
    for (std::size_t i = 0; i < order.size(); ++i)
      p.inverse[static_cast<std::size_t>(order[i])] = static_cast<std::int64_t>(i);
    p.order = std::move(order);
    return p;
  }
};

// Transposed-scan order (SR): lay n instances on a ceil(sqrt(n)) x C grid
// row-major, read it column-major, skipping padded cells.
inline ScanPermutation transpose_scan_order(std::int64_t n) {
  std::int64_t R = static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  if (R < 1) R = 1;
  std::int64_t C = (n + R - 1) / R;
  std::vector<std::int64_t> order;
  order.reserve(static_cast<std::size_t>(n));
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t r = 0; r < R; ++r) {
      std::int64_t i = r * C + c;
      if (i < n) order.push_back(i);
    }
  return ScanPermutation::from_order(std::move(order));
}

inline std::pair<Tensor, ScanPermutation> transpose_reorder(const Tensor& x) {
  ScanPermutation p = transpose_scan_order(x.rows());
  return {gather_rows(x, p.order), std::move(p)};
}

// Attention-scan order (AR): stable sort by score descending, ties broken by
// the lower original index. The sort itself is a routing decision; gradients
// reach the scorer through the score values used downstream, not the order.
inline ScanPermutation attention_scan_order(const std::vector<double>& scores) {
  std::vector<std::int64_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  return ScanPermutation::from_order(std::move(order));
}

struct AttentionReorder {
  Tensor reordered;
  ScanPermutation perm;
  Tensor scores;  // raw scores, [n x 1], on the tape
};

inline AttentionReorder attention_reorder(const Tensor& x,
                                          const GatedAttentionScorer& scorer) {
  Tensor s = scorer(x);
  std::vector<double> vals(s.data(), s.data() + s.numel());
  ScanPermutation p = attention_scan_order(vals);
  Tensor gathered = gather_rows(x, p.order);
  return {std::move(gathered), std::move(p), std::move(s)};
}

// One attention-guided Mamba layer: three parallel branches (original order,
// transposed scan, attention scan), each Norm -> Linear -> Conv1D -> SiLU ->
// SSM with its own SiLU gate; reordered branches are restored, the attention
// branch is weighted by n * softmax(scores) so the scorer stays trainable,
// and the sum goes through a linear projection with a residual.
struct ExpertLayer {
  LayerNorm norm_orig;
  LayerNorm norm_trans;
  LayerNorm norm_attn;
  MambaBranch branch_orig;
  MambaBranch branch_trans;
  MambaBranch branch_attn;
  GatedAttentionScorer scorer;
  Linear out_proj;

  static ExpertLayer init(std::int64_t d, std::int64_t n_state, std::int64_t conv_k,
                          std::int64_t attn_hidden, Rng& rng) {
    ExpertLayer l;
    l.norm_orig = LayerNorm::init(d);
    l.norm_trans = LayerNorm::init(d);
    l.norm_attn = LayerNorm::init(d);
    l.branch_orig = MambaBranch::init(d, n_state, conv_k, rng);
    l.branch_trans = MambaBranch::init(d, n_state, conv_k, rng);
    l.branch_attn = MambaBranch::init(d, n_state, conv_k, rng);
    l.scorer = GatedAttentionScorer::init(d, attn_hidden, rng);
    l.out_proj = Linear::init(d, d, rng);
    return l;
  }

  Tensor operator()(const Tensor& x) const {
    std::int64_t n = x.rows();

    AttentionReorder ar = attention_reorder(x, scorer);
    auto [x_trans, perm_trans] = transpose_reorder(x);

    Tensor y_orig = branch_orig(norm_orig(x));
    Tensor y_trans = branch_trans(norm_trans(x_trans));
    Tensor y_attn = branch_attn(norm_attn(ar.reordered));

    Tensor restored_trans = gather_rows(y_trans, perm_trans.inverse);
    Tensor restored_attn = gather_rows(y_attn, ar.perm.inverse);

    // n * softmax keeps the scale near one under uniform attention.
    Tensor weights = mul_scalar(softmax_lastdim(reshape(ar.scores, {1, n})),
                                static_cast<double>(n));
    Tensor weighted_attn = mul(restored_attn, tile_rowsweight(weights, x.cols()));

    Tensor merged = add(add(y_orig, restored_trans), weighted_attn);
    return add(out_proj(merged), x);
  }

  void collect(std::vector<Tensor>& out) {
    norm_orig.collect(out);
    norm_trans.collect(out);
    norm_attn.collect(out);
    branch_orig.collect(out);
    branch_trans.collect(out);
    branch_attn.collect(out);
    scorer.collect(out);
    out_proj.collect(out);
  }

 private:
  // Expand a [1 x n] weight row to [n x d] so it can gate instance rows.
  static Tensor tile_rowsweight(const Tensor& w, std::int64_t d) {
    std::int64_t n = w.cols();
    Tensor ones = Tensor::full({1, d}, 1.0);
    return matmul(transpose(w), ones);  // [n x 1] * [1 x d]
  }
};

// A stack of independently parameterized expert layers.
struct Expert {
  std::vector<ExpertLayer> layers;

  static Expert init(std::int64_t d, std::int64_t depth, std::int64_t n_state,
                     std::int64_t conv_k, std::int64_t attn_hidden, Rng& rng) {
    Expert e;
    for (std::int64_t i = 0; i < depth; ++i) {
      Rng layer_rng = rng.fork(static_cast<std::uint64_t>(i + 1));
      e.layers.push_back(ExpertLayer::init(d, n_state, conv_k, attn_hidden, layer_rng));
    }
    return e;
  }

  Tensor operator()(const Tensor& x) const {
    Tensor h = x;
    for (const ExpertLayer& l : layers) h = l(h);
    return h;
  }

  void collect(std::vector<Tensor>& out) {
    for (ExpertLayer& l : layers) l.collect(out);
  }
};

}  // namespace memamba
