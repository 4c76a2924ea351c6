#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memamba/fusion.hpp"
#include "memamba/rng.hpp"
#include "memamba/tensor.hpp"
#include "memamba/train.hpp"

namespace memamba {

// Analytic multiply-add cost models for the fusion path (linear in the
// instance count) versus a reference quadratic self-attention layer. The
// formulas mirror, term by term, the counts reported by the instrumented
// kernels, so a tiny instrumented forward pass must match them exactly.
struct BenchConfig {
  std::int64_t d = 256;
  std::int64_t n_state = 16;
  std::int64_t fusion_depth = 2;
  std::int64_t conv_k = 4;
  std::int64_t genomic_groups = 6;
};

// One Mamba branch on an L-token sequence:
//   in_proj L d^2 + conv K L d + delta L d^2 + B/C 2 L d N + scan 6 L d N
//   + gate L d^2 + gating product L d
inline unsigned long long mamba_branch_macs(std::int64_t L, const BenchConfig& c) {
  return static_cast<unsigned long long>(
      3 * L * c.d * c.d + c.conv_k * L * c.d + 8 * L * c.d * c.n_state + L * c.d);
}

// BiMamba layer: two directional branches plus the output projection.
inline unsigned long long bimamba_layer_macs(std::int64_t L, const BenchConfig& c) {
  return 2 * mamba_branch_macs(L, c) +
         static_cast<unsigned long long>(L * c.d * c.d);
}

// Fusion path for L pathology instances and the fixed genomic groups:
// bidirectional cosine cost, transport application, stacked BiMamba encoder.
inline unsigned long long fusion_flops(std::int64_t L, const BenchConfig& c) {
  std::int64_t m = c.genomic_groups;
  std::int64_t tokens = L + m;
  unsigned long long ot = static_cast<unsigned long long>(2 * L * m * c.d) +
                          static_cast<unsigned long long>((L + m) * c.d);
  return ot + static_cast<unsigned long long>(c.fusion_depth) *
                  bimamba_layer_macs(tokens, c);
}

// Reference quadratic self-attention layer: Q/K/V/out projections (4 L d^2)
// plus the score and context products (2 L^2 d).
inline unsigned long long attention_flops(std::int64_t L, const BenchConfig& c) {
  return static_cast<unsigned long long>(4 * L * c.d * c.d) +
         static_cast<unsigned long long>(2 * L * L * c.d);
}

// Modeled peak activation floats (x8 for bytes): per fusion layer each token
// holds the norm, two directional branch activations (input, conv, scan
// output, gate, plus d_state history per channel), and the merged output.
inline unsigned long long fusion_mem_bytes(std::int64_t L, const BenchConfig& c) {
  std::int64_t tokens = L + c.genomic_groups;
  unsigned long long per_layer = static_cast<unsigned long long>(
      tokens * (10 * c.d + 2 * c.d * c.n_state + 4 * c.n_state));
  return 8ULL * (static_cast<unsigned long long>(c.fusion_depth) * per_layer +
                 static_cast<unsigned long long>(tokens * c.d));
}

// Attention keeps Q, K, V, context, output rows plus the L x L score matrix.
inline unsigned long long attention_mem_bytes(std::int64_t L, const BenchConfig& c) {
  return 8ULL * (static_cast<unsigned long long>(5 * L * c.d) +
                 static_cast<unsigned long long>(L) * static_cast<unsigned long long>(L));
}

// Plain single-head self-attention forward used only to validate the
// analytic count against the instrumented kernels.
inline Tensor attention_reference_forward(const Tensor& x, const Tensor& wq,
                                          const Tensor& wk, const Tensor& wv,
                                          const Tensor& wo) {
  Tensor q = matmul(x, wq);
  Tensor k = matmul(x, wk);
  Tensor v = matmul(x, wv);
  Tensor scores = softmax_lastdim(matmul(q, transpose(k)));
  Tensor ctx = matmul(scores, v);
  return matmul(ctx, wo);
}

// Runs the real fusion-path kernels at a small L under a MAC counter.
inline unsigned long long instrumented_fusion_macs(std::int64_t L,
                                                   const BenchConfig& c,
                                                   std::uint64_t seed) {
  Rng rng(seed);
  Rng model_rng = rng.fork(1);
  SynergisticExpert expert = SynergisticExpert::init(c.d, c.fusion_depth,
                                                     c.n_state, c.conv_k, model_rng);
  Tensor xp = Tensor::randn({L, c.d}, rng);
  Tensor xg = Tensor::randn({c.genomic_groups, c.d}, rng);
  MacCounter counter;
  {
    MacScope scope(counter);
    SynergisticExpert::Fused f = expert.fuse(xp, xg);
    expert.encode(f.seq);
  }
  return counter.macs;
}

inline unsigned long long instrumented_attention_macs(std::int64_t L,
                                                      const BenchConfig& c,
                                                      std::uint64_t seed) {
  Rng rng(seed);
  Tensor x = Tensor::randn({L, c.d}, rng);
  Tensor wq = Tensor::randn({c.d, c.d}, rng, 0.05);
  Tensor wk = Tensor::randn({c.d, c.d}, rng, 0.05);
  Tensor wv = Tensor::randn({c.d, c.d}, rng, 0.05);
  Tensor wo = Tensor::randn({c.d, c.d}, rng, 0.05);
  MacCounter counter;
  {
    MacScope scope(counter);
    attention_reference_forward(x, wq, wk, wv, wo);
  }
  return counter.macs;
}

inline std::string bench_csv(const std::vector<std::int64_t>& counts,
                             const BenchConfig& c) {
  std::string out = "kernel,L,flops,mem_bytes\n";
  for (std::int64_t L : counts)
    out += "memamba_fusion," + std::to_string(L) + "," +
           std::to_string(fusion_flops(L, c)) + "," +
           std::to_string(fusion_mem_bytes(L, c)) + "\n";
  for (std::int64_t L : counts)
    out += "attention_ref," + std::to_string(L) + "," +
           std::to_string(attention_flops(L, c)) + "," +
           std::to_string(attention_mem_bytes(L, c)) + "\n";
  return out;
}

}  // namespace memamba
