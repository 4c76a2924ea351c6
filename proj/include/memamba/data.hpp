#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "memamba/rng.hpp"
#include "memamba/survival.hpp"
#include "memamba/tensor.hpp"

namespace memamba {

// ---------------------------------------------------------------------------
// MEBG bag format: magic "MEBG", version u16, rows u32, cols u32 (all
// little-endian), then rows*cols float32 row-major. Header is 14 bytes.

inline constexpr std::uint16_t kMebgVersion = 1;

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint32_t f32_bits(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  return u;
}

inline float bits_f32(std::uint32_t u) {
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace detail

inline std::string encode_bag(const Tensor& m) {
  std::string out;
  out.reserve(14 + static_cast<std::size_t>(m.numel()) * 4);
  out += "MEBG";
  detail::put_u16(out, kMebgVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (std::int64_t i = 0; i < m.numel(); ++i)
    detail::put_u32(out, detail::f32_bits(static_cast<float>(m.at(i))));
  return out;
}

inline Tensor decode_bag(const std::string& bytes, const std::string& origin) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 14)
    throw FormatError(origin + ": truncated header, expected 14 bytes, got " +
                      std::to_string(bytes.size()));
  if (std::memcmp(p, "MEBG", 4) != 0)
    throw FormatError(origin + ": bad magic at byte offset 0");
  std::uint16_t version = detail::get_u16(p + 4);
  if (version != kMebgVersion)
    throw FormatError(origin + ": unsupported version " + std::to_string(version) +
                      " at byte offset 4");
  std::uint32_t rows = detail::get_u32(p + 6);
  std::uint32_t cols = detail::get_u32(p + 10);
  std::size_t expect = 14 + static_cast<std::size_t>(rows) * cols * 4;
  if (bytes.size() != expect)
    throw FormatError(origin + ": payload length mismatch at byte offset " +
                      std::to_string(std::min(bytes.size(), expect)) + ", expected " +
                      std::to_string(expect) + " bytes, got " +
                      std::to_string(bytes.size()));
  Tensor m = Tensor::zeros({static_cast<std::int64_t>(rows), static_cast<std::int64_t>(cols)});
  for (std::int64_t i = 0; i < m.numel(); ++i)
    m.at(i) = static_cast<double>(detail::bits_f32(detail::get_u32(p + 14 + 4 * i)));
  return m;
}

inline void save_bag(const std::filesystem::path& path, const Tensor& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_bag: cannot open " + path.string());
  std::string bytes = encode_bag(m);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Tensor load_bag(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("load_bag: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return decode_bag(bytes, path.filename().string());
}

// ---------------------------------------------------------------------------
// Synthetic multimodal cohort with a planted latent risk.

struct GeneratorParams {
  std::int64_t d = 256;
  std::int64_t bag_min = 64;
  std::int64_t bag_max = 512;
  std::int64_t genomic_groups = 6;
  std::int64_t genomic_signal_groups = 2;
  double signal_fraction = 0.1;
  double signal_offset = 1.5;   // marker shift that makes signal instances findable
  double noise_sigma = 1.0;     // per-coordinate feature noise
  double beta = 1.0;            // hazard coefficient on the latent risk
  double censor_frac = 0.3;     // target right-censoring fraction
  double time_shape = 1.0;      // Weibull shape; 1 = exponential event times
  int n_bins = 4;
};

struct PatientRecord {
  std::string id;
  Tensor pathology_bag;   // [n x d]
  Tensor genomic_groups;  // [6 x d]
  SurvivalLabel label;
  double latent_risk = 0.0;  // generator-side ground truth, kept for oracles
};

struct Cohort {
  std::vector<PatientRecord> patients;
  std::vector<double> edges;
  std::uint64_t seed = 0;
  GeneratorParams params;
};

namespace detail {

inline std::vector<double> unit_vector(std::int64_t d, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(d));
  double norm = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

// Solve E_z[ r / (r + exp(eff * z)) ] = frac for the latent censor rate by
// bisection over a Gauss-Hermite style z grid.
inline double censor_rate_for_fraction(double frac, double eff) {
  auto mean_frac = [eff](double r) {
    const int grid = 4001;
    double acc = 0.0, wsum = 0.0;
    for (int i = 0; i < grid; ++i) {
      double z = -5.0 + 10.0 * static_cast<double>(i) / (grid - 1);
      double w = std::exp(-0.5 * z * z);
      acc += w * r / (r + std::exp(eff * z));
      wsum += w;
    }
    return acc / wsum;
  };
  double lo = 1e-9, hi = 1e9;
  for (int it = 0; it < 200; ++it) {
    double mid = std::sqrt(lo * hi);
    if (mean_frac(mid) < frac) lo = mid;
    else hi = mid;
  }
  return std::sqrt(lo * hi);
}

}  // namespace detail

// Draw one patient: latent z ~ N(0,1) is embedded into a random subset of
// pathology instances and into the first signal genomic groups; event and
// censoring times come from proportional hazards on the latent scale
// (time_shape > 1 sharpens the time ordering; 1 keeps plain exponentials).
inline Cohort generate_cohort(std::int64_t n_patients, std::uint64_t seed,
                              const GeneratorParams& params) {
  if (n_patients < 8)
    throw std::invalid_argument("generate_cohort: need at least 8 patients");
  if (params.beta <= 0.0 || params.censor_frac <= 0.0 || params.censor_frac >= 1.0 ||
      params.time_shape <= 0.0 || params.noise_sigma <= 0.0)
    throw std::invalid_argument("generate_cohort: invalid generator parameters");

  Cohort cohort;
  cohort.seed = seed;
  cohort.params = params;

  Rng root(seed);
  Rng dir_rng = root.fork(1);
  std::vector<double> marker = detail::unit_vector(params.d, dir_rng);
  std::vector<double> z_dir = detail::unit_vector(params.d, dir_rng);
  std::vector<double> g_marker = detail::unit_vector(params.d, dir_rng);
  std::vector<double> g_zdir = detail::unit_vector(params.d, dir_rng);

  double eff = params.beta * params.time_shape;
  double censor_rate = detail::censor_rate_for_fraction(params.censor_frac, eff);

  for (std::int64_t p = 0; p < n_patients; ++p) {
    Rng rng = root.fork(static_cast<std::uint64_t>(1000 + p));
    PatientRecord rec;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "P%04lld", static_cast<long long>(p));
    rec.id = idbuf;

    double z = rng.normal();
    rec.latent_risk = z;

    std::int64_t bag_n =
        params.bag_min +
        static_cast<std::int64_t>(rng.below(
            static_cast<std::uint64_t>(params.bag_max - params.bag_min + 1)));
    std::int64_t n_signal = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::llround(params.signal_fraction *
                                                  static_cast<double>(bag_n))));

    std::vector<std::int64_t> slots(static_cast<std::size_t>(bag_n));
    std::iota(slots.begin(), slots.end(), 0);
    for (std::int64_t i = bag_n - 1; i > 0; --i) {
      std::int64_t j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(slots[static_cast<std::size_t>(i)], slots[static_cast<std::size_t>(j)]);
    }

    rec.pathology_bag = Tensor::zeros({bag_n, params.d});
    std::vector<bool> is_signal(static_cast<std::size_t>(bag_n), false);
    for (std::int64_t s = 0; s < n_signal; ++s)
      is_signal[static_cast<std::size_t>(slots[static_cast<std::size_t>(s)])] = true;
    for (std::int64_t i = 0; i < bag_n; ++i) {
      for (std::int64_t k = 0; k < params.d; ++k) {
        double v = params.noise_sigma * rng.normal();
        if (is_signal[static_cast<std::size_t>(i)])
          v += params.signal_offset * marker[static_cast<std::size_t>(k)] +
               z * z_dir[static_cast<std::size_t>(k)];
        rec.pathology_bag.at(i, k) = v;
      }
    }

    rec.genomic_groups = Tensor::zeros({params.genomic_groups, params.d});
    for (std::int64_t g = 0; g < params.genomic_groups; ++g) {
      bool sig = g < params.genomic_signal_groups;
      for (std::int64_t k = 0; k < params.d; ++k) {
        double v = params.noise_sigma * rng.normal();
        if (sig)
          v += params.signal_offset * g_marker[static_cast<std::size_t>(k)] +
               z * g_zdir[static_cast<std::size_t>(k)];
        rec.genomic_groups.at(g, k) = v;
      }
    }

    // Latent exponential clocks; observed time is the minimum, then the
    // 1/shape power maps the scale to Weibull without changing the ordering.
    double v_event = rng.exponential(std::exp(eff * z));
    double v_censor = rng.exponential(censor_rate);
    double v_obs = std::min(v_event, v_censor);
    rec.label.censor = v_censor < v_event ? 1 : 0;
    rec.label.time = 100.0 * std::pow(v_obs, 1.0 / params.time_shape);
    cohort.patients.push_back(std::move(rec));
  }

  std::vector<double> times;
  std::vector<int> censors;
  for (const PatientRecord& r : cohort.patients) {
    times.push_back(r.label.time);
    censors.push_back(r.label.censor);
  }
  cohort.edges = discretize_times(times, censors, params.n_bins);
  for (PatientRecord& r : cohort.patients)
    r.label.k = assign_interval(r.label.time, cohort.edges);
  return cohort;
}

// ---------------------------------------------------------------------------
// On-disk layout: manifest.json + bags/<id>.mebg + genomics/<id>.mebg.

inline void save_cohort(const Cohort& cohort, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "bags");
  fs::create_directories(dir / "genomics");
  nlohmann::json manifest;
  manifest["seed"] = cohort.seed;
  manifest["edges"] = cohort.edges;
  manifest["params"] = {
      {"d", cohort.params.d},
      {"bag_min", cohort.params.bag_min},
      {"bag_max", cohort.params.bag_max},
      {"signal_fraction", cohort.params.signal_fraction},
      {"signal_offset", cohort.params.signal_offset},
      {"noise_sigma", cohort.params.noise_sigma},
      {"beta", cohort.params.beta},
      {"censor_frac", cohort.params.censor_frac},
      {"time_shape", cohort.params.time_shape},
      {"n_bins", cohort.params.n_bins},
  };
  manifest["patients"] = nlohmann::json::array();
  for (const PatientRecord& r : cohort.patients) {
    std::string bag_rel = "bags/" + r.id + ".mebg";
    std::string gen_rel = "genomics/" + r.id + ".mebg";
    save_bag(dir / bag_rel, r.pathology_bag);
    save_bag(dir / gen_rel, r.genomic_groups);
    manifest["patients"].push_back({{"id", r.id},
                                    {"bag_path", bag_rel},
                                    {"genomics_path", gen_rel},
                                    {"time", r.label.time},
                                    {"censor", r.label.censor},
                                    {"latent_risk", r.latent_risk}});
  }
  std::ofstream f(dir / "manifest.json");
  if (!f) throw std::runtime_error("save_cohort: cannot write manifest");
  f << manifest.dump(2) << "\n";
}

inline Cohort load_cohort(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw FormatError("load_cohort: missing manifest.json in " + dir.string());
  nlohmann::json manifest = nlohmann::json::parse(f);
  Cohort cohort;
  cohort.seed = manifest.at("seed").get<std::uint64_t>();
  cohort.edges = manifest.at("edges").get<std::vector<double>>();
  if (manifest.contains("params")) {
    const auto& p = manifest["params"];
    cohort.params.d = p.value("d", cohort.params.d);
    cohort.params.n_bins = p.value("n_bins", cohort.params.n_bins);
    cohort.params.beta = p.value("beta", cohort.params.beta);
    cohort.params.time_shape = p.value("time_shape", cohort.params.time_shape);
  }
  for (const auto& pj : manifest.at("patients")) {
    PatientRecord r;
    r.id = pj.at("id").get<std::string>();
    r.pathology_bag = load_bag(dir / pj.at("bag_path").get<std::string>());
    r.genomic_groups = load_bag(dir / pj.at("genomics_path").get<std::string>());
    r.label.time = pj.at("time").get<double>();
    r.label.censor = pj.at("censor").get<int>();
    r.label.k = assign_interval(r.label.time, cohort.edges);
    r.latent_risk = pj.value("latent_risk", 0.0);
    cohort.patients.push_back(std::move(r));
  }
  return cohort;
}

// ---------------------------------------------------------------------------
// Seeded shuffle into k near-equal folds (sizes differ by at most one).
inline std::vector<int> split_folds(std::size_t n_patients, int k, std::uint64_t seed) {
  if (k < 1 || static_cast<std::size_t>(k) > n_patients)
    throw std::invalid_argument("split_folds: k must be in [1, n_patients]");
  std::vector<std::size_t> order(n_patients);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n_patients - 1; i > 0; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
    std::swap(order[i], order[j]);
  }
  std::vector<int> fold(n_patients, 0);
  std::size_t base = n_patients / static_cast<std::size_t>(k);
  std::size_t extra = n_patients % static_cast<std::size_t>(k);
  std::size_t pos = 0;
  for (int f = 0; f < k; ++f) {
    std::size_t size = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) fold[order[pos++]] = f;
  }
  return fold;
}

}  // namespace memamba
