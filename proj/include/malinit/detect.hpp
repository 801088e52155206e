#ifndef MALINIT_DETECT_HPP
#define MALINIT_DETECT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "malinit/nn.hpp"
#include "malinit/tensor.hpp"

namespace malinit {

/// Rank-2 view used by the defenses: dense tensors as is, conv [fh, fw, c, f]
/// as one row per filter holding that filter's entries in (y, x, c) order.
inline WeightTensor flatten_filter_major(const WeightTensor& w) {
  if (w.rank() == 2) return w;
  if (w.rank() != 4) throw std::invalid_argument("expected a dense or conv tensor, got shape " + shape_string(w.shape()));
  const std::size_t f = w.shape()[3], per = w.size() / f;
  std::vector<double> out(w.size());
  for (std::size_t k = 0; k < per; ++k)
    for (std::size_t j = 0; j < f; ++j) out[j * per + k] = w[k * f + j];
  return WeightTensor({f, per}, std::move(out), w.layer_index());
}

/// 8-bit gray levels, [-max|w|, +max|w|] mapped linearly onto [0, 255]; all-zero gives 128.
inline std::vector<std::uint8_t> heatmap_pixels(const WeightTensor& w) {
  const auto flat = flatten_filter_major(w);
  double m = 0.0;
  for (auto v : flat.data()) m = std::max(m, std::fabs(v));
  std::vector<std::uint8_t> px(flat.size(), 128);
  if (m == 0.0) return px;
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<std::uint8_t>(std::lround((flat[i] + m) / (2.0 * m) * 255.0));
  return px;
}

/// Writes a binary PGM (P5) with one pixel per weight, one image row per neuron/filter.
inline void weight_heatmap(const WeightTensor& w, const std::string& path) {
  const auto flat = flatten_filter_major(w);
  const auto px = heatmap_pixels(w);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P5\n" << flat.cols() << " " << flat.rows() << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace detail {

inline double log_choose(double n, double k) { return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1); }

inline double log_sum_exp(const std::vector<double>& v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (auto x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace detail

/// Two-sided tail of X ~ Hypergeometric(population, successes, draws) at k:
/// min(1, 2 min(P[X <= k], P[X >= k])).
inline double hypergeometric_two_sided(std::size_t population, std::size_t successes, std::size_t draws, std::size_t k) {
  const auto N = static_cast<double>(population), K = static_cast<double>(successes), n = static_cast<double>(draws);
  const std::size_t lo = draws > population - successes ? draws - (population - successes) : 0;
  const std::size_t hi = std::min(draws, successes);
  if (k < lo || k > hi) throw std::invalid_argument("hypergeometric: count outside support");
  const double log_total = detail::log_choose(N, n);
  std::vector<double> left, right;
  for (std::size_t i = lo; i <= hi; ++i) {
    const double lp = detail::log_choose(K, static_cast<double>(i)) + detail::log_choose(N - K, n - static_cast<double>(i)) - log_total;
    if (i <= k) left.push_back(lp);
    if (i >= k) right.push_back(lp);
  }
  const double tail = std::exp(std::min(detail::log_sum_exp(left), detail::log_sum_exp(right)));
  return std::min(1.0, 2.0 * tail);
}

enum class Orientation { Rows, Columns };

struct BlockTestResult {
  double p_value = 1.0;
  Orientation orientation = Orientation::Rows;
  std::size_t extreme_line = 0;   // row (or column) with the smallest tail
  std::size_t extreme_count = 0;  // its number of below-median entries
  double expected_count = 0.0;
};

/**
 * Median-split block test. Entries strictly below the median are "small";
 * under exchangeable placement the small count of each row (column) is
 * hypergeometric. Returns the Bonferroni-corrected smallest two-sided tail.
 */
inline BlockTestResult block_structure_test(const WeightTensor& w, Orientation orient = Orientation::Rows) {
  const auto flat = flatten_filter_major(w);
  const std::size_t m = flat.rows(), n = flat.cols();
  if (m < 4 || n < 4) throw std::invalid_argument("block_structure_test: needs at least 4 x 4 entries, got " + shape_string(flat.shape()));
  auto sorted = flat.values();
  std::sort(sorted.begin(), sorted.end());
  const std::size_t N = sorted.size();
  const double median = N % 2 ? sorted[N / 2] : 0.5 * (sorted[N / 2 - 1] + sorted[N / 2]);
  const auto K = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), median) - sorted.begin());

  const std::size_t lines = orient == Orientation::Rows ? m : n;
  const std::size_t per_line = orient == Orientation::Rows ? n : m;
  BlockTestResult res;
  res.orientation = orient;
  res.expected_count = static_cast<double>(per_line) * static_cast<double>(K) / static_cast<double>(N);
  double best = 1.0;
  for (std::size_t l = 0; l < lines; ++l) {
    std::size_t count = 0;
    for (std::size_t k = 0; k < per_line; ++k) {
      const double v = orient == Orientation::Rows ? flat.at(l, k) : flat.at(k, l);
      if (v < median) ++count;
    }
    const double p = hypergeometric_two_sided(N, K, per_line, count);
    if (p < best || l == 0) {
      best = p;
      res.extreme_line = l;
      res.extreme_count = count;
    }
  }
  res.p_value = std::min(1.0, best * static_cast<double>(lines));
  return res;
}

struct LayerVerdict {
  std::size_t layer = 0;
  Shape shape;
  BlockTestResult test;
  bool suspicious = false;
};

struct DetectionReport {
  double alpha = 0.01;
  std::vector<LayerVerdict> layers;

  bool any_suspicious() const {
    return std::any_of(layers.begin(), layers.end(), [](const LayerVerdict& v) { return v.suspicious; });
  }
};

/// Rows for odd-numbered layers (1st, 3rd, ...), columns for even-numbered ones.
inline Orientation default_orientation(std::size_t layer_index) {
  return layer_index % 2 == 1 ? Orientation::Columns : Orientation::Rows;
}

inline DetectionReport detect_block_structure(const std::vector<WeightTensor>& weights, double alpha = 0.01) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("detect: alpha must lie in (0, 1)");
  DetectionReport rep;
  rep.alpha = alpha;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const auto flat = flatten_filter_major(weights[i]);
    LayerVerdict v;
    v.layer = i;
    v.shape = weights[i].shape();
    if (flat.rows() < 4 || flat.cols() < 4) {
      v.test.p_value = 1.0;
    } else {
      v.test = block_structure_test(weights[i], default_orientation(i));
    }
    v.suspicious = v.test.p_value < alpha;
    rep.layers.push_back(v);
  }
  return rep;
}

inline nlohmann::json report_to_json(const DetectionReport& rep) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& v : rep.layers) {
    const bool rows = v.test.orientation == Orientation::Rows;
    layers.push_back({{"layer", v.layer},
                      {"shape", v.shape},
                      {"verdict", v.suspicious ? "suspicious" : "clean"},
                      {"p_value", v.test.p_value},
                      {"statistic",
                       std::string("per-") + (rows ? "row" : "column") +
                           " count of entries below the median, hypergeometric two-sided tail, Bonferroni over " +
                           (rows ? "rows" : "columns")},
                      {"extreme_index", v.test.extreme_line},
                      {"extreme_count", v.test.extreme_count},
                      {"expected_count", v.test.expected_count}});
  }
  return {{"alpha", rep.alpha}, {"suspicious", rep.any_suspicious()}, {"layers", layers}};
}

struct ChannelReport {
  std::size_t layer = 0;            // parameter index of the conv layer
  std::vector<bool> zero_channels;  // per output channel
};

/// Flags every conv output channel whose post-ReLU output is zero for all probe inputs.
inline std::vector<ChannelReport> filter_activation_report(const Network& net, std::span<const double> probes) {
  std::vector<std::size_t> convs;
  for (std::size_t s = 0; s < net.stages().size(); ++s)
    if (net.stages()[s].layer.kind == LayerSpec::Kind::Conv) convs.push_back(s);
  if (convs.empty()) throw std::invalid_argument("filter_activation_report: network has no conv layer");
  const std::size_t n = batch_count(net, probes), d = net.input_size();
  std::vector<ChannelReport> out;
  for (auto s : convs) out.push_back({net.stages()[s].param, std::vector<bool>(net.stages()[s].out_shape[2], true)});
  for (std::size_t i = 0; i < n; ++i) {
    const auto outs = stage_outputs(net, probes.subspan(i * d, d));
    for (std::size_t c = 0; c < convs.size(); ++c) {
      const auto& o = outs[convs[c]];
      const std::size_t F = out[c].zero_channels.size();
      for (std::size_t k = 0; k < o.size(); ++k)
        if (o[k] > 0.0) out[c].zero_channels[k % F] = false;
    }
  }
  return out;
}

/// Uniformly permutes the entries of every weight tensor; tensor i uses Rng(seed).split(i). Biases are untouched.
inline Network reshuffle_weights(const Network& net, std::uint64_t seed) {
  Network out = net;
  const Rng base(seed);
  for (std::size_t i = 0; i < out.params().size(); ++i) {
    Rng rng = base.split(i);
    rng.shuffle(out.params()[i].w);
  }
  return out;
}

inline std::vector<WeightTensor> reshuffle_tensors(const std::vector<WeightTensor>& ws, std::uint64_t seed) {
  std::vector<WeightTensor> out;
  const Rng base(seed);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    Rng rng = base.split(i);
    auto v = ws[i].values();
    rng.shuffle(v);
    out.push_back(ws[i].with_data(std::move(v)));
  }
  return out;
}

}  // namespace malinit

#endif  // MALINIT_DETECT_HPP
