#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "memamba/data.hpp"
#include "memamba/eval.hpp"
#include "memamba/model.hpp"
#include "memamba/tensor.hpp"

namespace memamba {

struct RunConfig {
  std::uint64_t seed = 42;
  double lr = 1e-3;
  int epochs = 30;
  double lambda = 1.0;
  int n_bins = 4;
  int folds = 5;
  std::int64_t d_state = 16;
  std::int64_t expert_depth = 2;
  std::int64_t fusion_depth = 2;
  std::string arch = "full";

  bool operator==(const RunConfig&) const = default;

  void validate() const {
    if (lr <= 0.0 || lambda < 0.0 || epochs < 0 || n_bins < 1 || folds < 1 ||
        d_state < 1 || expert_depth < 1 || fusion_depth < 1)
      throw std::invalid_argument("config: numeric fields must be positive");
    arch_from_string(arch);
  }
};

inline nlohmann::json serialize_run_config(const RunConfig& c) {
  return nlohmann::json{{"seed", c.seed},
                        {"lr", c.lr},
                        {"epochs", c.epochs},
                        {"lambda", c.lambda},
                        {"n_bins", c.n_bins},
                        {"folds", c.folds},
                        {"d_state", c.d_state},
                        {"expert_depth", c.expert_depth},
                        {"fusion_depth", c.fusion_depth},
                        {"arch", c.arch}};
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  static const char* known[] = {"seed",   "lr",      "epochs",       "lambda",
                                "n_bins", "folds",   "d_state",      "expert_depth",
                                "fusion_depth", "arch"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) ok = true;
    if (!ok) throw std::invalid_argument("config: unknown key '" + it.key() + "'");
  }
  RunConfig c;
  c.seed = j.value("seed", c.seed);
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.lambda = j.value("lambda", c.lambda);
  c.n_bins = j.value("n_bins", c.n_bins);
  c.folds = j.value("folds", c.folds);
  c.d_state = j.value("d_state", c.d_state);
  c.expert_depth = j.value("expert_depth", c.expert_depth);
  c.fusion_depth = j.value("fusion_depth", c.fusion_depth);
  c.arch = j.value("arch", c.arch);
  c.validate();
  return c;
}

inline ModelConfig model_config_for(const Cohort& cohort, const RunConfig& run) {
  ModelConfig mc;
  mc.d = cohort.patients.front().pathology_bag.cols();
  mc.n_state = run.d_state;
  mc.expert_depth = run.expert_depth;
  mc.fusion_depth = run.fusion_depth;
  mc.n_bins = run.n_bins;
  mc.lambda = run.lambda;
  mc.attn_hidden = std::min<std::int64_t>(128, mc.d * 2);
  mc.arch = arch_from_string(run.arch);
  return mc;
}

struct EpochStats {
  int fold = 0;
  int epoch = 0;
  double avg_loss = 0.0;
  double avg_surv = 0.0;
  double avg_global = 0.0;
};

// One SGD pass over the training split of a fold, batch size one.
inline EpochStats train_epoch(MEMambaModel& model, std::vector<Tensor>& params,
                              const Cohort& cohort, const std::vector<int>& folds,
                              int test_fold, int epoch, double lr,
                              std::uint64_t seed) {
  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < cohort.patients.size(); ++i)
    if (folds[i] != test_fold) train_idx.push_back(i);

  Rng shuffle_rng(seed ^ (0x5bd1e995ULL * static_cast<std::uint64_t>(
                              (test_fold + 1) * 1000 + epoch)));
  for (std::size_t i = train_idx.size() - 1; i > 0; --i) {
    std::size_t j = static_cast<std::size_t>(shuffle_rng.below(i + 1));
    std::swap(train_idx[i], train_idx[j]);
  }

  EpochStats stats;
  stats.fold = test_fold;
  stats.epoch = epoch;
  for (std::size_t idx : train_idx) {
    const PatientRecord& rec = cohort.patients[idx];
    Tape tape;
    Tape::Scope scope(tape);
    ModelOutput out = model.forward(rec.pathology_bag, rec.genomic_groups);
    Tensor loss = model.loss(out, rec.label);
    stats.avg_loss += loss.item();
    stats.avg_global += out.global_loss.item();
    tape.backward(loss);
    sgd_step(params, lr);
    zero_grads(params);
    tape.clear();
  }
  double n = static_cast<double>(train_idx.size());
  stats.avg_loss /= n;
  stats.avg_global /= n;
  stats.avg_surv = stats.avg_loss - model.cfg.lambda * stats.avg_global;
  return stats;
}

struct FoldEval {
  int fold = 0;
  double c_index = 0.0;
};

inline FoldEval evaluate_fold(const MEMambaModel& model, const Cohort& cohort,
                              const std::vector<int>& folds, int test_fold) {
  std::vector<double> risks, times;
  std::vector<int> censors;
  for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
    if (folds[i] != test_fold) continue;
    const PatientRecord& rec = cohort.patients[i];
    risks.push_back(model.risk(rec.pathology_bag, rec.genomic_groups));
    times.push_back(rec.label.time);
    censors.push_back(rec.label.censor);
  }
  return {test_fold, c_index(risks, times, censors)};
}

struct TrainResult {
  std::vector<FoldEval> fold_scores;
  double mean = 0.0;
  double stddev = 0.0;
};

inline TrainResult summarize(const std::vector<FoldEval>& scores) {
  TrainResult r;
  r.fold_scores = scores;
  for (const FoldEval& f : scores) r.mean += f.c_index;
  r.mean /= static_cast<double>(scores.size());
  for (const FoldEval& f : scores) {
    double d = f.c_index - r.mean;
    r.stddev += d * d;
  }
  r.stddev = std::sqrt(r.stddev / static_cast<double>(scores.size()));
  return r;
}

// Full k-fold run: trains one model per fold, writes checkpoints and
// per-epoch JSONL metrics under out_dir, returns per-fold test scores.
inline TrainResult run_training(const Cohort& cohort, const RunConfig& run,
                                const std::filesystem::path& out_dir,
                                std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream cf(out_dir / "config.json");
    cf << serialize_run_config(run).dump(2) << "\n";
  }
  std::ofstream metrics(out_dir / "metrics.jsonl");
  std::vector<int> folds = split_folds(cohort.patients.size(), run.folds, run.seed);
  std::vector<FoldEval> scores;
  for (int f = 0; f < run.folds; ++f) {
    ModelConfig mc = model_config_for(cohort, run);
    MEMambaModel model = MEMambaModel::init(mc, run.seed + static_cast<std::uint64_t>(f));
    std::vector<Tensor> params = model.parameters();
    for (int e = 0; e < run.epochs; ++e) {
      EpochStats s = train_epoch(model, params, cohort, folds, f, e, run.lr, run.seed);
      nlohmann::json line{{"fold", s.fold},
                          {"epoch", s.epoch},
                          {"avg_loss", s.avg_loss},
                          {"avg_surv", s.avg_surv},
                          {"avg_global", s.avg_global}};
      metrics << line.dump() << "\n";
      if (log) *log << "fold " << f << " epoch " << e << " loss " << s.avg_loss << "\n";
    }
    char name[32];
    std::snprintf(name, sizeof(name), "ckpt_fold%d.bin", f);
    save_checkpoint(out_dir / name, params);
    scores.push_back(evaluate_fold(model, cohort, folds, f));
    if (log) *log << "fold " << f << " test c-index " << scores.back().c_index << "\n";
  }
  return summarize(scores);
}

// Reload a trained run and score each fold's held-out patients.
inline TrainResult evaluate_run(const Cohort& cohort, const RunConfig& run,
                                const std::filesystem::path& run_dir) {
  std::vector<int> folds = split_folds(cohort.patients.size(), run.folds, run.seed);
  std::vector<FoldEval> scores;
  for (int f = 0; f < run.folds; ++f) {
    ModelConfig mc = model_config_for(cohort, run);
    MEMambaModel model = MEMambaModel::init(mc, run.seed + static_cast<std::uint64_t>(f));
    std::vector<Tensor> params = model.parameters();
    char name[32];
    std::snprintf(name, sizeof(name), "ckpt_fold%d.bin", f);
    load_checkpoint(run_dir / name, params);
    scores.push_back(evaluate_fold(model, cohort, folds, f));
  }
  return summarize(scores);
}

// Pooled held-out risk predictions (each patient scored by the model whose
// training split excluded it).
struct PooledPredictions {
  std::vector<double> risks;
  std::vector<double> times;
  std::vector<int> censors;
};

inline PooledPredictions pooled_heldout_predictions(const Cohort& cohort,
                                                    const RunConfig& run,
                                                    const std::filesystem::path& run_dir) {
  std::vector<int> folds = split_folds(cohort.patients.size(), run.folds, run.seed);
  PooledPredictions pooled;
  pooled.risks.resize(cohort.patients.size());
  pooled.times.resize(cohort.patients.size());
  pooled.censors.resize(cohort.patients.size());
  for (int f = 0; f < run.folds; ++f) {
    ModelConfig mc = model_config_for(cohort, run);
    MEMambaModel model = MEMambaModel::init(mc, run.seed + static_cast<std::uint64_t>(f));
    std::vector<Tensor> params = model.parameters();
    char name[32];
    std::snprintf(name, sizeof(name), "ckpt_fold%d.bin", f);
    load_checkpoint(run_dir / name, params);
    for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
      if (folds[i] != f) continue;
      const PatientRecord& rec = cohort.patients[i];
      pooled.risks[i] = model.risk(rec.pathology_bag, rec.genomic_groups);
      pooled.times[i] = rec.label.time;
      pooled.censors[i] = rec.label.censor;
    }
  }
  return pooled;
}

inline std::string format_csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline std::string eval_csv(const TrainResult& r) {
  std::string out = "fold,c_index\n";
  for (const FoldEval& f : r.fold_scores)
    out += std::to_string(f.fold) + "," + format_csv_double(f.c_index) + "\n";
  out += "mean," + format_csv_double(r.mean) + "\n";
  out += "std," + format_csv_double(r.stddev) + "\n";
  return out;
}

}  // namespace memamba
