#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "memamba/expert.hpp"
#include "memamba/fusion.hpp"
#include "memamba/nn.hpp"
#include "memamba/ssm.hpp"
#include "memamba/survival.hpp"
#include "memamba/tensor.hpp"

namespace memamba {

enum class Arch { kFull, kPathologyOnly, kGenomicsOnly, kNoFusion };

inline Arch arch_from_string(const std::string& s) {
  if (s == "full") return Arch::kFull;
  if (s == "pathology") return Arch::kPathologyOnly;
  if (s == "genomics") return Arch::kGenomicsOnly;
  if (s == "no-fusion") return Arch::kNoFusion;
  throw std::invalid_argument("unknown architecture: " + s);
}

inline std::string arch_to_string(Arch a) {
  switch (a) {
    case Arch::kFull: return "full";
    case Arch::kPathologyOnly: return "pathology";
    case Arch::kGenomicsOnly: return "genomics";
    case Arch::kNoFusion: return "no-fusion";
  }
  return "full";
}

struct ModelConfig {
  std::int64_t d = 256;
  std::int64_t n_state = 16;
  std::int64_t expert_depth = 2;
  std::int64_t fusion_depth = 2;
  std::int64_t conv_k = 4;
  std::int64_t attn_hidden = 128;
  std::int64_t n_bins = 4;
  double lambda = 1.0;
  double sigma = 0.0;  // <= 0: median heuristic per batch
  Arch arch = Arch::kFull;
};

struct ModelOutput {
  Tensor hazards;      // [1 x n_bins]
  Tensor global_loss;  // scalar (zero when fusion is off)
};

// The three-expert system: Pathology Expert and Genomics Expert over their
// instance sequences, the Synergistic Expert fusing both, and a shared
// attention-MLP hazard head over the concatenated sequences.
struct MEMambaModel {
  ModelConfig cfg;
  Expert pathology;
  Expert genomics;
  SynergisticExpert synergistic;
  HazardHead head;

  static MEMambaModel init(const ModelConfig& cfg, std::uint64_t seed) {
    MEMambaModel m;
    m.cfg = cfg;
    Rng root(seed);
    Rng rp = root.fork(11), rg = root.fork(22), rs = root.fork(33), rh = root.fork(44);
    m.pathology = Expert::init(cfg.d, cfg.expert_depth, cfg.n_state, cfg.conv_k,
                               cfg.attn_hidden, rp);
    m.genomics = Expert::init(cfg.d, cfg.expert_depth, cfg.n_state, cfg.conv_k,
                              cfg.attn_hidden, rg);
    m.synergistic = SynergisticExpert::init(cfg.d, cfg.fusion_depth, cfg.n_state,
                                            cfg.conv_k, rs);
    m.head = HazardHead::init(cfg.d, cfg.attn_hidden, cfg.n_bins, rh);
    return m;
  }

  bool uses_pathology() const { return cfg.arch != Arch::kGenomicsOnly; }
  bool uses_genomics() const { return cfg.arch != Arch::kPathologyOnly; }
  bool uses_fusion() const { return cfg.arch == Arch::kFull; }

  ModelOutput forward(const Tensor& bag, const Tensor& genomic_groups) const {
    std::vector<Tensor> sequences;
    Tensor xp, xg;
    if (uses_pathology()) {
      xp = pathology(bag);
      sequences.push_back(xp);
    }
    if (uses_genomics()) {
      xg = genomics(genomic_groups);
      sequences.push_back(xg);
    }
    ModelOutput out;
    if (uses_fusion()) {
      FusionConfig fc{cfg.sigma, cfg.lambda, cfg.fusion_depth};
      SynergisticResult res = synergistic(xp, xg, fc);
      sequences.push_back(res.fused);
      out.global_loss = res.loss;
    } else {
      out.global_loss = Tensor::scalar(0.0);
    }
    out.hazards = head(sequences);
    return out;
  }

  Tensor loss(const ModelOutput& out, const SurvivalLabel& label) const {
    return total_loss(surv_loss(out.hazards, label), out.global_loss, cfg.lambda);
  }

  double risk(const Tensor& bag, const Tensor& genomic_groups) const {
    ModelOutput out = forward(bag, genomic_groups);
    std::vector<double> h(out.hazards.data(),
                          out.hazards.data() + out.hazards.numel());
    return risk_from_hazards(h);
  }

  std::vector<Tensor> parameters() {
    std::vector<Tensor> out;
    pathology.collect(out);
    genomics.collect(out);
    synergistic.collect(out);
    head.collect(out);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Checkpoints: magic "MECP", u32 tensor count, then per tensor u32 rank,
// u32 extents, raw little-endian float64 values.

inline void save_checkpoint(const std::filesystem::path& path,
                            std::vector<Tensor>& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  auto put_u32 = [&f](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    f.write(reinterpret_cast<char*>(b), 4);
  };
  f.write("MECP", 4);
  put_u32(static_cast<std::uint32_t>(params.size()));
  for (Tensor& p : params) {
    put_u32(static_cast<std::uint32_t>(p.shape().size()));
    for (std::int64_t e : p.shape()) put_u32(static_cast<std::uint32_t>(e));
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      double v = p.at(i);
      std::uint64_t u;
      std::memcpy(&u, &v, 8);
      unsigned char b[8];
      for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>((u >> (8 * k)) & 0xff);
      f.write(reinterpret_cast<char*>(b), 8);
    }
  }
}

inline void load_checkpoint(const std::filesystem::path& path,
                            std::vector<Tensor>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("load_checkpoint: cannot open " + path.string());
  auto get_u32 = [&f]() {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  };
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "MECP", 4) != 0)
    throw FormatError("load_checkpoint: bad magic in " + path.string());
  std::uint32_t count = get_u32();
  if (count != params.size())
    throw FormatError("load_checkpoint: parameter count mismatch in " + path.string());
  for (Tensor& p : params) {
    std::uint32_t rank = get_u32();
    if (rank != p.shape().size())
      throw FormatError("load_checkpoint: tensor rank mismatch in " + path.string());
    for (std::size_t r = 0; r < rank; ++r) {
      if (static_cast<std::int64_t>(get_u32()) != p.shape()[r])
        throw FormatError("load_checkpoint: tensor extent mismatch in " + path.string());
    }
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      unsigned char b[8];
      f.read(reinterpret_cast<char*>(b), 8);
      if (!f) throw FormatError("load_checkpoint: truncated payload in " + path.string());
      std::uint64_t u = 0;
      for (int k = 0; k < 8; ++k) u |= static_cast<std::uint64_t>(b[k]) << (8 * k);
      double v;
      std::memcpy(&v, &u, 8);
      p.at(i) = v;
    }
  }
}

}  // namespace memamba
