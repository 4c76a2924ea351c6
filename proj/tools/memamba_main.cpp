#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "memamba/bench.hpp"
#include "memamba/data.hpp"
#include "memamba/eval.hpp"
#include "memamba/model.hpp"
#include "memamba/train.hpp"

namespace fs = std::filesystem;
using namespace memamba;

namespace {

std::uint64_t default_seed() {
  if (const char* env = std::getenv("MEMAMBA_SEED")) {
    try {
      return std::stoull(env);
    } catch (...) {
      throw std::invalid_argument("MEMAMBA_SEED is not a valid integer");
    }
  }
  return 42;
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << content;
}

std::string km_csv(const KMCurve& curve) {
  std::string out = "time,at_risk,events,survival\n";
  for (std::size_t i = 0; i < curve.times.size(); ++i)
    out += format_csv_double(curve.times[i]) + "," +
           format_csv_double(curve.at_risk[i]) + "," +
           format_csv_double(curve.events[i]) + "," +
           format_csv_double(curve.survival[i]) + "\n";
  return out;
}

RunConfig load_config_arg(const std::string& config_path) {
  std::ifstream f(config_path);
  if (!f) throw std::runtime_error("cannot open config " + config_path);
  return parse_run_config(nlohmann::json::parse(f));
}

RunConfig load_run_dir_config(const fs::path& run_dir) {
  std::ifstream f(run_dir / "config.json");
  if (!f)
    throw std::runtime_error("missing config.json in run directory " + run_dir.string());
  return parse_run_config(nlohmann::json::parse(f));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ME-Mamba multimodal survival analysis harness"};
  app.require_subcommand(1);

  // gen ----------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "Generate a synthetic cohort");
  std::string gen_out;
  std::int64_t gen_patients = 200;
  std::uint64_t gen_seed = 0;
  bool gen_seed_set = false;
  GeneratorParams gp;
  gen->add_option("--out", gen_out, "Output cohort directory")->required();
  gen->add_option("--patients", gen_patients, "Number of patients");
  gen->add_option("--seed", gen_seed, "Generator seed")
      ->each([&](const std::string&) { gen_seed_set = true; });
  gen->add_option("--dim", gp.d, "Feature width d");
  gen->add_option("--bag-min", gp.bag_min, "Minimum bag size");
  gen->add_option("--bag-max", gp.bag_max, "Maximum bag size");
  gen->add_option("--beta", gp.beta, "Hazard coefficient on the latent risk");
  gen->add_option("--censor-frac", gp.censor_frac, "Target censoring fraction");
  gen->add_option("--signal-frac", gp.signal_fraction, "Signal instance fraction");
  gen->add_option("--signal-offset", gp.signal_offset, "Signal marker offset");
  gen->add_option("--noise-sigma", gp.noise_sigma, "Feature noise sigma");
  gen->add_option("--time-shape", gp.time_shape,
                  "Weibull shape for event times (1 = exponential)");
  gen->add_option("--n-bins", gp.n_bins, "Number of hazard intervals");

  // train ---------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train one model per fold");
  std::string train_cohort, train_out, train_config;
  RunConfig rc;
  train->add_option("--config", train_config, "JSON config file (flags override)");
  train->add_option("--cohort", train_cohort, "Cohort directory")->required();
  train->add_option("--out", train_out, "Run output directory")->required();
  auto* opt_seed = train->add_option("--seed", rc.seed, "Training seed");
  auto* opt_lr = train->add_option("--lr", rc.lr, "SGD learning rate");
  auto* opt_epochs = train->add_option("--epochs", rc.epochs, "Training epochs");
  auto* opt_lambda = train->add_option("--lambda", rc.lambda, "Global loss weight");
  auto* opt_bins = train->add_option("--n-bins", rc.n_bins, "Hazard intervals");
  auto* opt_folds = train->add_option("--folds", rc.folds, "Cross-validation folds");
  auto* opt_dstate = train->add_option("--d-state", rc.d_state, "SSM state size");
  auto* opt_edepth = train->add_option("--expert-depth", rc.expert_depth, "Expert layers");
  auto* opt_fdepth = train->add_option("--fusion-depth", rc.fusion_depth, "Fusion layers");
  auto* opt_arch = train->add_option(
      "--arch", rc.arch, "Architecture: full|pathology|genomics|no-fusion");
  bool train_quiet = false;
  train->add_flag("--quiet", train_quiet, "Suppress progress logging");

  // eval ----------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate per-fold test C-index");
  std::string eval_cohort, eval_run, eval_out;
  eval_cmd->add_option("--cohort", eval_cohort, "Cohort directory")->required();
  eval_cmd->add_option("--run", eval_run, "Trained run directory")->required();
  eval_cmd->add_option("--out", eval_out, "CSV output path (default stdout)");

  // km ------------------------------------------------------------------
  auto* km = app.add_subcommand("km", "Kaplan-Meier tables and log-rank test");
  std::string km_cohort, km_run, km_out;
  km->add_option("--cohort", km_cohort, "Cohort directory")->required();
  km->add_option("--run", km_run, "Trained run directory")->required();
  km->add_option("--out", km_out, "Output directory")->required();

  // bench ---------------------------------------------------------------
  auto* bench = app.add_subcommand("bench", "Analytic FLOP/memory scaling report");
  std::vector<std::int64_t> bench_counts{1000, 10000, 20000};
  BenchConfig bc;
  std::string bench_out;
  bench->add_option("--counts", bench_counts, "Instance counts");
  bench->add_option("--dim", bc.d, "Feature width d");
  bench->add_option("--d-state", bc.n_state, "SSM state size");
  bench->add_option("--fusion-depth", bc.fusion_depth, "Fusion layers");
  bench->add_option("--out", bench_out, "CSV output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      if (!gen_seed_set) gen_seed = default_seed();
      Cohort cohort = generate_cohort(gen_patients, gen_seed, gp);
      save_cohort(cohort, gen_out);
      std::cout << "wrote cohort of " << cohort.patients.size() << " patients to "
                << gen_out << "\n";
    } else if (train->parsed()) {
      if (!train_config.empty()) {
        RunConfig from_file = load_config_arg(train_config);
        // Flags given on the command line override file values.
        if (!*opt_seed) rc.seed = from_file.seed;
        if (!*opt_lr) rc.lr = from_file.lr;
        if (!*opt_epochs) rc.epochs = from_file.epochs;
        if (!*opt_lambda) rc.lambda = from_file.lambda;
        if (!*opt_bins) rc.n_bins = from_file.n_bins;
        if (!*opt_folds) rc.folds = from_file.folds;
        if (!*opt_dstate) rc.d_state = from_file.d_state;
        if (!*opt_edepth) rc.expert_depth = from_file.expert_depth;
        if (!*opt_fdepth) rc.fusion_depth = from_file.fusion_depth;
        if (!*opt_arch) rc.arch = from_file.arch;
      } else if (!*opt_seed) {
        rc.seed = default_seed();
      }
      rc.validate();
      Cohort cohort = load_cohort(train_cohort);
      TrainResult result =
          run_training(cohort, rc, train_out, train_quiet ? nullptr : &std::cerr);
      std::cout << eval_csv(result);
    } else if (eval_cmd->parsed()) {
      Cohort cohort = load_cohort(eval_cohort);
      RunConfig run = load_run_dir_config(eval_run);
      TrainResult result = evaluate_run(cohort, run, eval_run);
      std::string csv = eval_csv(result);
      if (eval_out.empty())
        std::cout << csv;
      else
        write_file(eval_out, csv);
    } else if (km->parsed()) {
      Cohort cohort = load_cohort(km_cohort);
      RunConfig run = load_run_dir_config(km_run);
      PooledPredictions pooled = pooled_heldout_predictions(cohort, run, km_run);
      std::vector<int> groups = stratify_median(pooled.risks);
      std::vector<double> t_low, t_high;
      std::vector<int> c_low, c_high;
      for (std::size_t i = 0; i < groups.size(); ++i) {
        if (groups[i] == 0) {
          t_low.push_back(pooled.times[i]);
          c_low.push_back(pooled.censors[i]);
        } else {
          t_high.push_back(pooled.times[i]);
          c_high.push_back(pooled.censors[i]);
        }
      }
      LogRankResult lr = logrank_test(t_high, c_high, t_low, c_low);
      write_file(fs::path(km_out) / "km_low.csv", km_csv(km_curve(t_low, c_low)));
      write_file(fs::path(km_out) / "km_high.csv", km_csv(km_curve(t_high, c_high)));
      char buf[128];
      std::snprintf(buf, sizeof(buf), "chi2,p\n%.10f,%.10e\n", lr.chi2, lr.p);
      write_file(fs::path(km_out) / "logrank.csv", buf);
      std::cout << "log-rank chi2 " << lr.chi2 << " p " << lr.p << "\n";
    } else if (bench->parsed()) {
      std::string csv = bench_csv(bench_counts, bc);
      if (bench_out.empty())
        std::cout << csv;
      else
        write_file(bench_out, csv);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
