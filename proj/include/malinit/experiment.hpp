#ifndef MALINIT_EXPERIMENT_HPP
#define MALINIT_EXPERIMENT_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "malinit/attack.hpp"
#include "malinit/config.hpp"
#include "malinit/data.hpp"
#include "malinit/detect.hpp"
#include "malinit/nn.hpp"
#include "malinit/parallel.hpp"

namespace malinit {

/// Seeds base, base + 1, ..., base + count - 1. MALINIT_SEED, when set, replaces `base`.
inline std::vector<std::uint64_t> default_seeds(std::size_t count = 50, std::uint64_t base = 0) {
  if (const char* env = std::getenv("MALINIT_SEED")) {
    try {
      std::size_t used = 0;
      base = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string("MALINIT_SEED is not an unsigned integer: ") + env);
    }
  }
  std::vector<std::uint64_t> seeds(count);
  std::iota(seeds.begin(), seeds.end(), base);
  return seeds;
}

struct ExperimentConfig {
  std::string name = "experiment";
  NetworkSpec spec;
  TrainConfig train;
  std::optional<AttackConfig> attack;
  bool reshuffle_after_attack = false;  // remediation: permute every tensor uniformly after the attack
  std::string alternative_attack;       // set by override_training
  std::vector<std::uint64_t> seeds = default_seeds();
  std::string output_dir;               // empty: nothing is written
  std::size_t jobs = 1;
};

struct ExperimentRecord {
  std::uint64_t seed = 0;
  double best_accuracy = 0.0;
  std::size_t best_epoch = 0;
  double final_loss = 0.0;
  double wall_seconds = 0.0;
  bool diverged = false;
  std::string error;
  std::vector<double> test_accuracy;  // per epoch
};

/// Init and training seeds derived from an experiment seed.
inline std::uint64_t init_seed(std::uint64_t seed) { return Rng(seed).split(0).next_u64(); }
inline std::uint64_t training_seed(std::uint64_t seed) { return Rng(seed).split(1).next_u64(); }

/// Network for one seed with the configured attack (and remediation) applied, before any training.
inline Network prepare_network(const ExperimentConfig& cfg, std::uint64_t seed) {
  Network net(cfg.spec, init_seed(seed));
  if (cfg.attack) {
    net.set_weights(attack_network(net.weight_tensors(), *cfg.attack));
    if (cfg.reshuffle_after_attack) net = reshuffle_weights(net, Rng(seed).split(2).next_u64());
  }
  return net;
}

inline ExperimentRecord run_seed(const ExperimentConfig& cfg, const Dataset& ds, std::uint64_t seed) {
  ExperimentRecord rec;
  rec.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  Network net = prepare_network(cfg, seed);
  TrainConfig tc = cfg.train;
  tc.seed = training_seed(seed);
  try {
    const auto trace = train(net, ds, tc);
    rec.best_accuracy = trace.best_accuracy;
    rec.best_epoch = trace.best_epoch;
    rec.final_loss = trace.train_loss.back();
    rec.test_accuracy = trace.test_accuracy;
  } catch (const DivergenceError& e) {
    rec.diverged = true;
    rec.error = e.what();
    rec.best_epoch = e.epoch();
    rec.final_loss = std::numeric_limits<double>::quiet_NaN();
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

inline nlohmann::json record_to_json(const ExperimentRecord& r) {
  return {{"seed", r.seed},
          {"best_acc", r.best_accuracy},
          {"best_epoch", r.best_epoch},
          {"final_loss", std::isfinite(r.final_loss) ? nlohmann::json(r.final_loss) : nlohmann::json(nullptr)},
          {"wall_s", r.wall_seconds},
          {"diverged", r.diverged},
          {"error", r.error},
          {"test_accuracy", r.test_accuracy}};
}

inline ExperimentRecord record_from_json(const nlohmann::json& j) {
  ExperimentRecord r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.best_accuracy = j.at("best_acc").get<double>();
  r.best_epoch = j.at("best_epoch").get<std::size_t>();
  r.final_loss = j.at("final_loss").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("final_loss").get<double>();
  r.wall_seconds = j.value("wall_s", 0.0);
  r.diverged = j.value("diverged", false);
  r.error = j.value("error", std::string());
  r.test_accuracy = j.value("test_accuracy", std::vector<double>{});
  return r;
}

inline nlohmann::json experiment_to_json(const ExperimentConfig& cfg, const std::string& dataset_name) {
  return {{"name", cfg.name},
          {"dataset", dataset_name},
          {"network", spec_to_json(cfg.spec)},
          {"train", train_to_json(cfg.train)},
          {"attack", cfg.attack ? attack_to_json(*cfg.attack) : nlohmann::json(nullptr)},
          {"reshuffle_after_attack", cfg.reshuffle_after_attack},
          {"alternative_attack", cfg.alternative_attack},
          {"seeds", cfg.seeds}};
}

// ---------------------------------------------------------------------------
// Summaries.

struct DensityCurve {
  double bandwidth = 0.0;
  std::vector<double> x, density;
};

inline double silverman_bandwidth(const std::vector<double>& v) {
  const auto n = static_cast<double>(v.size());
  const double sd = std::sqrt(tensor_variance(v) * n / (n - 1.0));
  auto s = v;
  std::sort(s.begin(), s.end());
  auto quantile = [&](double q) {
    const double pos = q * (n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  double h = 0.9 * spread * std::pow(n, -0.2);
  if (!(h > 0.0)) h = 1e-3 * std::max(1.0, std::fabs(s.front()));
  return h;
}

/// Gaussian KDE sampled on [min - 4h, max + 4h]; Silverman's bandwidth unless given.
inline DensityCurve kde(const std::vector<double>& values, std::optional<double> bandwidth = std::nullopt) {
  if (values.size() < 2) throw std::invalid_argument("kde: needs at least 2 values");
  for (auto v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("kde: non-finite value");
  DensityCurve c;
  c.bandwidth = bandwidth ? *bandwidth : silverman_bandwidth(values);
  if (!(c.bandwidth > 0.0)) throw std::invalid_argument("kde: bandwidth must be positive");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn - 4.0 * c.bandwidth, hi = *mx + 4.0 * c.bandwidth;
  const auto points = static_cast<std::size_t>(std::clamp((hi - lo) / c.bandwidth * 25.0, 512.0, 200000.0));
  const double norm = 1.0 / (static_cast<double>(values.size()) * c.bandwidth * std::sqrt(2.0 * M_PI));
  for (std::size_t i = 0; i < points; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    double d = 0.0;
    for (auto v : values) {
      const double z = (x - v) / c.bandwidth;
      d += std::exp(-0.5 * z * z);
    }
    c.x.push_back(x);
    c.density.push_back(d * norm);
  }
  return c;
}

/// Trapezoid integral of a sampled curve.
inline double integrate(const DensityCurve& c) {
  double s = 0.0;
  for (std::size_t i = 1; i < c.x.size(); ++i) s += 0.5 * (c.density[i] + c.density[i - 1]) * (c.x[i] - c.x[i - 1]);
  return s;
}

struct Histogram {
  double lo = 0.0, hi = 1.0;
  std::vector<std::size_t> counts;

  double bin_lo(std::size_t b) const { return lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(counts.size()); }
  double bin_hi(std::size_t b) const { return bin_lo(b + 1); }
};

/// Equal-width bins over [lo, hi); values outside fall into the edge bins.
inline Histogram histogram(const std::vector<double>& values, std::size_t bins, double lo, double hi) {
  if (bins < 1) throw std::invalid_argument("histogram: bins must be at least 1");
  if (!(hi > lo)) throw std::invalid_argument("histogram: empty range");
  Histogram h{lo, hi, std::vector<std::size_t>(bins, 0)};
  for (auto v : values) {
    const double pos = std::floor((v - lo) / (hi - lo) * static_cast<double>(bins));
    const auto b = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
    ++h.counts[b];
  }
  return h;
}

/// Range spanning the data: [min, max + 1) for integers, bins of width max(1, range / 20) by default.
inline Histogram histogram(const std::vector<double>& values, std::size_t bins) {
  if (values.empty()) return histogram(values, bins, 0.0, 1.0);
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  return histogram(values, bins, std::floor(*mn), std::floor(*mx) + 1.0);
}

/// Best-epoch histogram over [0, epochs] with bin width epochs / 20 (the last bin includes `epochs`).
inline Histogram epoch_histogram(const std::vector<ExperimentRecord>& recs, std::size_t epochs) {
  std::vector<double> e;
  for (const auto& r : recs) e.push_back(static_cast<double>(r.best_epoch));
  const std::size_t bins = std::min<std::size_t>(20, std::max<std::size_t>(1, epochs));
  return histogram(e, bins, 0.0, static_cast<double>(epochs));
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Output files.

inline std::string format_fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline void write_records_csv(const std::vector<ExperimentRecord>& recs, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "seed,best_acc,best_epoch,final_loss,wall_s\n";
  for (const auto& r : recs) {
    out << r.seed << "," << format_fixed(r.best_accuracy, 6) << "," << r.best_epoch << ",";
    if (std::isfinite(r.final_loss)) {
      std::ostringstream os;
      os << std::setprecision(17) << r.final_loss;
      out << os.str();
    } else {
      out << "nan";
    }
    out << "," << format_fixed(r.wall_seconds, 3) << "\n";
  }
}

inline std::vector<ExperimentRecord> read_records_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != "seed,best_acc,best_epoch,final_loss,wall_s") throw std::runtime_error(path + ": unexpected header");
  std::vector<ExperimentRecord> recs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 5) throw std::runtime_error(path + ": expected 5 columns");
    ExperimentRecord r;
    r.seed = std::stoull(cells[0]);
    r.best_accuracy = std::stod(cells[1]);
    r.best_epoch = std::stoul(cells[2]);
    r.final_loss = cells[3] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(cells[3]);
    r.wall_seconds = std::stod(cells[4]);
    r.diverged = !std::isfinite(r.final_loss);
    recs.push_back(r);
  }
  return recs;
}

inline void write_summaries(const std::vector<ExperimentRecord>& recs, std::size_t epochs, const std::string& dir) {
  {
    std::ofstream out(dir + "/kde_accuracy.csv", std::ios::trunc);
    out << "x,density\n";
    std::vector<double> acc;
    for (const auto& r : recs) acc.push_back(r.best_accuracy);
    if (acc.size() >= 2) {
      const auto c = kde(acc);
      for (std::size_t i = 0; i < c.x.size(); ++i) out << c.x[i] << "," << c.density[i] << "\n";
    }
  }
  std::ofstream out(dir + "/hist_epoch.csv", std::ios::trunc);
  out << "bin_lo,bin_hi,count\n";
  const auto h = epoch_histogram(recs, epochs);
  for (std::size_t b = 0; b < h.counts.size(); ++b) out << h.bin_lo(b) << "," << h.bin_hi(b) << "," << h.counts[b] << "\n";
}

/**
 * Trains one network per seed. Records come back ordered as cfg.seeds. When
 * an output directory is set, every finished seed leaves seeds/seed_<n>.json
 * and a rerun skips those seeds.
 */
inline std::vector<ExperimentRecord> run_experiment(const ExperimentConfig& cfg, const Dataset& ds) {
  if (cfg.seeds.empty()) throw std::invalid_argument("experiment: empty seed list");
  cfg.train.validate();
  if (cfg.attack) cfg.attack->validate();
  std::string seed_dir;
  if (!cfg.output_dir.empty()) {
    seed_dir = cfg.output_dir + "/seeds";
    std::filesystem::create_directories(seed_dir);
  }
  std::vector<ExperimentRecord> recs(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.jobs, [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    const std::string path = seed_dir.empty() ? "" : seed_dir + "/seed_" + std::to_string(seed) + ".json";
    if (!path.empty() && std::filesystem::exists(path)) {
      recs[i] = record_from_json(read_json_file(path));
      return;
    }
    recs[i] = run_seed(cfg, ds, seed);
    if (!path.empty()) {
      const std::string tmp = path + ".tmp";
      {
        std::ofstream out(tmp, std::ios::trunc);
        out << record_to_json(recs[i]).dump() << "\n";
      }
      std::filesystem::rename(tmp, path);
    }
  });
  if (!cfg.output_dir.empty()) {
    write_records_csv(recs, cfg.output_dir + "/records.csv");
    write_summaries(recs, cfg.train.epochs, cfg.output_dir);
    std::ofstream out(cfg.output_dir + "/manifest.json", std::ios::trunc);
    out << experiment_to_json(cfg, ds.name).dump(2) << "\n";
  }
  return recs;
}

struct PairedResult {
  std::vector<ExperimentRecord> baseline, attacked;
};

/// Same seeds with and without the attack; outputs go to <dir>/baseline and <dir>/attack.
inline PairedResult run_paired(const ExperimentConfig& cfg, const Dataset& ds) {
  if (!cfg.attack && cfg.alternative_attack.empty()) throw std::invalid_argument("paired experiment needs an attack");
  ExperimentConfig base = cfg;
  base.attack.reset();
  base.reshuffle_after_attack = false;
  base.alternative_attack.clear();
  base.name = cfg.name + "-baseline";
  ExperimentConfig atk = cfg;
  if (!cfg.output_dir.empty()) {
    base.output_dir = cfg.output_dir + "/baseline";
    atk.output_dir = cfg.output_dir + "/attack";
  }
  return {run_experiment(base, ds), run_experiment(atk, ds)};
}

struct TrainingOverride {
  std::optional<double> learning_rate;
  std::optional<double> dropout_rate;
};

/// Hyper-parameter attack: swaps in a malicious learning rate or dropout rate.
inline ExperimentConfig override_training(ExperimentConfig cfg, const TrainingOverride& o) {
  if (o.learning_rate) {
    if (!(*o.learning_rate > 0.0) || !std::isfinite(*o.learning_rate))
      throw std::invalid_argument("override: learning rate must be positive");
    cfg.train.optimizer.lr = *o.learning_rate;
    cfg.alternative_attack = "learning_rate=" + format_fixed(*o.learning_rate, 10);
  }
  if (o.dropout_rate) {
    if (!(*o.dropout_rate > 0.0 && *o.dropout_rate < 1.0))
      throw std::invalid_argument("override: dropout rate must lie in (0, 1)");
    cfg.spec.dropout_rate = *o.dropout_rate;
    if (!cfg.alternative_attack.empty()) cfg.alternative_attack += ",";
    cfg.alternative_attack += "dropout_rate=" + format_fixed(*o.dropout_rate, 6);
  }
  return cfg;
}

}  // namespace malinit

#endif  // MALINIT_EXPERIMENT_HPP
