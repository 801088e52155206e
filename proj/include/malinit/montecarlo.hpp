#ifndef MALINIT_MONTECARLO_HPP
#define MALINIT_MONTECARLO_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "malinit/nn.hpp"
#include "malinit/parallel.hpp"
#include "malinit/tensor.hpp"

namespace malinit {

struct InputDistribution {
  enum class Kind { Uniform01, Normal } kind = Kind::Uniform01;
  double mean = 0.5;
  double std = 0.5;
  bool truncated = false;  // Normal only: negative draws are clipped to zero

  static InputDistribution uniform01() { return {}; }
  static InputDistribution normal(double mean, double std, bool truncated = false) {
    return {Kind::Normal, mean, std, truncated};
  }

  /// Inputs with mean 1/2 and sigma^2 / mu^2 == sharpness. 1/3 is the uniform [0, 1] case.
  static InputDistribution with_sharpness(double sharpness) {
    if (!(sharpness >= 0.0)) throw std::invalid_argument("sharpness must be nonnegative");
    if (std::fabs(sharpness - 1.0 / 3.0) < 1e-12) return uniform01();
    return normal(0.5, 0.5 * std::sqrt(sharpness));
  }

  void validate() const {
    if (kind == Kind::Normal && !(std >= 0.0)) throw std::invalid_argument("input distribution: std must be nonnegative");
  }

  double sample(Rng& rng) const {
    if (kind == Kind::Uniform01) return rng.uniform();
    const double v = mean + std * rng.normal();
    return truncated && v < 0.0 ? 0.0 : v;
  }
};

struct McConfig {
  std::size_t trials = 10000;
  InputDistribution input;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  void validate() const {
    if (trials < 1) throw std::invalid_argument("montecarlo: trials must be at least 1");
    input.validate();
  }
};

namespace detail {

inline constexpr std::size_t kTrialBlock = 1024;

inline std::size_t block_count(std::size_t trials) { return (trials + kTrialBlock - 1) / kTrialBlock; }

/// Runs trials in fixed blocks; block b draws from Rng(seed).split(b), so the
/// result does not depend on how blocks are assigned to workers.
template <typename Acc, typename Fn>
std::vector<Acc> run_trial_blocks(const McConfig& cfg, Fn&& fn) {
  const std::size_t blocks = block_count(cfg.trials);
  std::vector<Acc> acc(blocks);
  const Rng base(cfg.seed);
  parallel_for(blocks, cfg.jobs, [&](std::size_t b) {
    Rng rng = base.split(b);
    const std::size_t lo = b * kTrialBlock, hi = std::min(cfg.trials, lo + kTrialBlock);
    fn(rng, hi - lo, acc[b]);
  });
  return acc;
}

}  // namespace detail

/// Per-neuron frequency of (W x + a)_i <= 0 for a dense layer W of shape [out, in].
inline std::vector<double> estimate_p_zero(const WeightTensor& w, std::span<const double> bias, const McConfig& cfg) {
  cfg.validate();
  if (w.rank() != 2) throw std::invalid_argument("estimate_p_zero: expects a dense [out, in] tensor; use a forward pass for conv");
  const std::size_t rows = w.rows(), cols = w.cols();
  if (!bias.empty() && bias.size() != rows) throw std::invalid_argument("estimate_p_zero: bias size mismatch");
  auto blocks = detail::run_trial_blocks<std::vector<std::uint64_t>>(cfg, [&](Rng& rng, std::size_t n, auto& counts) {
    counts.assign(rows, 0);
    std::vector<double> x(cols);
    const double* wd = w.values().data();
    for (std::size_t t = 0; t < n; ++t) {
      for (auto& v : x) v = cfg.input.sample(rng);
      for (std::size_t i = 0; i < rows; ++i) {
        double h = bias.empty() ? 0.0 : bias[i];
        for (std::size_t j = 0; j < cols; ++j) h += wd[i * cols + j] * x[j];
        if (h <= 0.0) ++counts[i];
      }
    }
  });
  std::vector<double> freq(rows, 0.0);
  for (const auto& c : blocks)
    for (std::size_t i = 0; i < rows; ++i) freq[i] += static_cast<double>(c[i]);
  for (auto& f : freq) f /= static_cast<double>(cfg.trials);
  return freq;
}

/**
 * For every hidden (ReLU) layer, the number of units whose output is > 0 in
 * at least one trial. Inputs are drawn i.i.d. per feature from cfg.input.
 */
inline std::vector<std::size_t> active_neuron_count(const Network& net, const McConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> hidden;
  for (std::size_t s = 0; s < net.stages().size(); ++s)
    if (net.stages()[s].relu) hidden.push_back(s);
  auto blocks = detail::run_trial_blocks<std::vector<std::vector<std::uint8_t>>>(cfg, [&](Rng& rng, std::size_t n, auto& seen) {
    seen.resize(hidden.size());
    for (std::size_t h = 0; h < hidden.size(); ++h) seen[h].assign(shape_size(net.stages()[hidden[h]].out_shape), 0);
    std::vector<double> x(net.input_size());
    for (std::size_t t = 0; t < n; ++t) {
      for (auto& v : x) v = cfg.input.sample(rng);
      const auto outs = stage_outputs(net, x);
      for (std::size_t h = 0; h < hidden.size(); ++h) {
        const auto& o = outs[hidden[h]];
        for (std::size_t i = 0; i < o.size(); ++i)
          if (o[i] > 0.0) seen[h][i] = 1;
      }
    }
  });
  std::vector<std::size_t> counts(hidden.size(), 0);
  for (std::size_t h = 0; h < hidden.size(); ++h) {
    std::vector<std::uint8_t> any(shape_size(net.stages()[hidden[h]].out_shape), 0);
    for (const auto& b : blocks)
      for (std::size_t i = 0; i < any.size(); ++i) any[i] |= b[h][i];
    counts[h] = static_cast<std::size_t>(std::count(any.begin(), any.end(), 1));
  }
  return counts;
}

/// Empirical deactivation frequencies of one grid point, small and large block.
struct BlockFrequencies {
  double bias_ratio = 0.0;
  double p_zero_s = 0.0;
  double p_zero_l = 0.0;
};

/**
 * Empirical P[h <= 0] for a neuron of the small and of the large block of a
 * split Gaussian layer, h = sum_j A_j x_j + a with a = bias_ratio sigma_A mu_x.
 *
 * Each trial draws a fresh weight row: n entries sampled from the small (or
 * large) part of a sorted pool of 2^pool_bits N(0, sigma_A^2) draws, split at
 * rank round(r * pool). Inputs follow InputDistribution::with_sharpness, taken
 * from a pool of standard normals when not uniform. All bias ratios share the
 * same trials, since the bias only shifts h.
 */
inline std::vector<BlockFrequencies> split_block_zero_frequencies(double r, std::size_t n, double sharpness,
                                                                  std::span<const double> bias_ratios,
                                                                  const McConfig& cfg, unsigned pool_bits = 20) {
  cfg.validate();
  if (!(r > 0.0 && r < 1.0)) throw std::invalid_argument("montecarlo: r must lie in (0, 1)");
  if (n < 1) throw std::invalid_argument("montecarlo: n must be positive");
  if (pool_bits < 8 || pool_bits > 24) throw std::invalid_argument("montecarlo: pool_bits out of range");
  const auto input = InputDistribution::with_sharpness(sharpness);
  const double sigma_a = std::sqrt(2.0 / static_cast<double>(n));
  const double mu_x = 0.5;
  const std::size_t pool = std::size_t{1} << pool_bits;

  Rng pool_rng = Rng(cfg.seed).split(0xFFFFFFFFull);
  std::vector<double> weights(pool), zs(pool);
  for (auto& v : weights) v = sigma_a * pool_rng.normal();
  for (auto& v : zs) v = pool_rng.normal();
  std::sort(weights.begin(), weights.end());
  const auto n_small = static_cast<std::size_t>(std::llround(r * static_cast<double>(pool)));
  if (n_small == 0 || n_small == pool) throw std::invalid_argument("montecarlo: r too extreme for the pool size");
  const double* small = weights.data();
  const double* large = weights.data() + n_small;
  const std::size_t n_large = pool - n_small;
  const bool uniform = input.kind == InputDistribution::Kind::Uniform01;
  const unsigned z_shift = 32 - pool_bits;
  auto pick = [](std::uint64_t u32, std::size_t size) { return static_cast<std::size_t>((u32 * size) >> 32); };
  auto to_x = [&](std::uint64_t u32) {
    if (uniform) return (static_cast<double>(u32) + 0.5) * 0x1p-32;
    return input.mean + input.std * zs[u32 >> z_shift];
  };

  struct Counts {
    std::vector<std::uint64_t> s, l;
  };
  auto blocks = detail::run_trial_blocks<Counts>(cfg, [&](Rng& rng, std::size_t trials, Counts& c) {
    c.s.assign(bias_ratios.size(), 0);
    c.l.assign(bias_ratios.size(), 0);
    for (std::size_t t = 0; t < trials; ++t) {
      double hs = 0.0, hl = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const std::uint64_t ua = rng.next_u64(), ux = rng.next_u64();
        hs += small[pick(ua & 0xFFFFFFFFu, n_small)] * to_x(ux & 0xFFFFFFFFu);
        hl += large[pick(ua >> 32, n_large)] * to_x(ux >> 32);
      }
      for (std::size_t k = 0; k < bias_ratios.size(); ++k) {
        const double a = bias_ratios[k] * sigma_a * mu_x;
        if (hs + a <= 0.0) ++c.s[k];
        if (hl + a <= 0.0) ++c.l[k];
      }
    }
  });
  std::vector<BlockFrequencies> out(bias_ratios.size());
  for (std::size_t k = 0; k < bias_ratios.size(); ++k) {
    std::uint64_t s = 0, l = 0;
    for (const auto& b : blocks) {
      s += b.s[k];
      l += b.l[k];
    }
    out[k] = {bias_ratios[k], static_cast<double>(s) / static_cast<double>(cfg.trials),
              static_cast<double>(l) / static_cast<double>(cfg.trials)};
  }
  return out;
}

}  // namespace malinit

#endif  // MALINIT_MONTECARLO_HPP
