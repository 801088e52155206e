#ifndef MALINIT_ATTACK_HPP
#define MALINIT_ATTACK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "malinit/init.hpp"
#include "malinit/tensor.hpp"

namespace malinit {

enum class AttackKind { SoftKnockout, Shift, ConvSoftKnockout, ConvShift, ScaleWeights, VarianceSwap };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::SoftKnockout: return "soft-knockout";
    case AttackKind::Shift: return "shift";
    case AttackKind::ConvSoftKnockout: return "conv-soft-knockout";
    case AttackKind::ConvShift: return "conv-shift";
    case AttackKind::ScaleWeights: return "scale";
    case AttackKind::VarianceSwap: return "variance-swap";
  }
  return "unknown";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  for (auto k : {AttackKind::SoftKnockout, AttackKind::Shift, AttackKind::ConvSoftKnockout, AttackKind::ConvShift,
                 AttackKind::ScaleWeights, AttackKind::VarianceSwap})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown attack kind '" + s + "'");
}

/// Within-block ordering of the permuted entries.
struct Placement {
  enum class Kind { Stable, Shuffled } kind = Kind::Stable;
  std::uint64_t seed = 0;

  static Placement stable() { return {}; }
  static Placement shuffled(std::uint64_t seed) { return {Kind::Shuffled, seed}; }
};

struct AttackConfig {
  AttackKind kind = AttackKind::SoftKnockout;
  double r = 0.5;
  std::size_t s = 0;
  std::size_t attacked_filters = 1;
  double scale_factor = 1.0;
  Placement placement;
  bool start_parity = false;

  void validate() const {
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("attack: r must lie in [0, 1]");
    if (attacked_filters == 0) throw std::invalid_argument("attack: attacked_filters must be positive");
    if (kind == AttackKind::ScaleWeights && !(scale_factor > 0.0 && std::isfinite(scale_factor)))
      throw std::invalid_argument("attack: scale factor must be positive");
  }

  bool is_permutation() const { return kind != AttackKind::ScaleWeights && kind != AttackKind::VarianceSwap; }
};

namespace detail {

/// Indices of `v` sorted ascending; equal values keep their flat index order.
inline std::vector<std::size_t> ascending_order(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  return idx;
}

inline std::size_t count_negative(std::span<const double> v) {
  return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](double x) { return x < 0.0; }));
}

inline std::size_t small_count(double r, std::size_t n) {
  const auto c = static_cast<long long>(std::llround(r * static_cast<double>(n)));
  return static_cast<std::size_t>(std::clamp<long long>(c, 0, static_cast<long long>(n)));
}

/**
 * Splits the entries of `v` into the `n_small` smallest (S) and the rest (L),
 * orders each block per `placement` and writes them along `fill` (a list of
 * flat destination positions): S first, or L first when `large_first`.
 */
inline std::vector<double> two_block_layout(std::span<const double> v, std::size_t n_small, bool large_first,
                                            std::span<const std::size_t> fill, const Placement& placement,
                                            Rng& rng) {
  const auto order = ascending_order(v);
  std::vector<double> small(n_small), large(v.size() - n_small);
  for (std::size_t i = 0; i < n_small; ++i) small[i] = v[order[i]];
  for (std::size_t i = n_small; i < v.size(); ++i) large[i - n_small] = v[order[i]];
  if (placement.kind == Placement::Kind::Shuffled) {
    rng.shuffle(small);
    rng.shuffle(large);
  }
  std::vector<double> out(v.size());
  std::size_t k = 0;
  const auto& first = large_first ? large : small;
  const auto& second = large_first ? small : large;
  for (double x : first) out[fill[k++]] = x;
  for (double x : second) out[fill[k++]] = x;
  return out;
}

inline std::vector<std::size_t> row_major_fill(std::size_t rows, std::size_t cols) {
  std::vector<std::size_t> f(rows * cols);
  std::iota(f.begin(), f.end(), std::size_t{0});
  return f;
}

inline std::vector<std::size_t> column_major_fill(std::size_t rows, std::size_t cols) {
  std::vector<std::size_t> f;
  f.reserve(rows * cols);
  for (std::size_t j = 0; j < cols; ++j)
    for (std::size_t i = 0; i < rows; ++i) f.push_back(i * cols + j);
  return f;
}

struct ConvDims {
  std::size_t h, w, c, f;
  std::size_t index(std::size_t y, std::size_t x, std::size_t ch, std::size_t filt) const {
    return ((y * w + x) * c + ch) * f + filt;
  }
  std::size_t per_filter() const { return h * w * c; }
};

inline ConvDims conv_dims(const WeightTensor& w) {
  if (w.rank() != 4) throw std::invalid_argument("conv attack: expected rank-4 tensor, got " + shape_string(w.shape()));
  return {w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]};
}

/// Positions of one filter ordered channel-major: (c, y, x).
inline std::vector<std::size_t> filter_fill(const ConvDims& d, std::size_t filt) {
  std::vector<std::size_t> p;
  p.reserve(d.per_filter());
  for (std::size_t ch = 0; ch < d.c; ++ch)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) p.push_back(d.index(y, x, ch, filt));
  return p;
}

}  // namespace detail

/**
 * Carries the alternating `cross` flag through a sequence of weight tensors
 * taken in initialization order. Every processed tensor flips the flag once.
 */
class AttackStream {
 public:
  explicit AttackStream(AttackConfig config) : config_(config), cross_(config.start_parity) { config_.validate(); }

  const AttackConfig& config() const { return config_; }
  bool cross() const { return cross_; }
  std::size_t processed() const { return processed_; }

  /// Generator for Shuffled placement of the tensor about to be processed.
  Rng placement_rng() const { return Rng(config_.placement.seed).split(processed_); }

  void advance() {
    cross_ = !cross_;
    ++processed_;
  }

 private:
  AttackConfig config_;
  bool cross_;
  std::size_t processed_ = 0;
};

/**
 * Soft knockout for a fully connected [rows, cols] matrix.
 *
 * Non-cross: the round(r * N) smallest entries fill the matrix row-major
 * first, then the larger ones, so leading rows (neurons) carry only small
 * weights. Cross: the large entries fill column-major first, small entries
 * occupy the trailing columns.
 */
inline WeightTensor soft_knockout_fc(AttackStream& stream, const WeightTensor& w) {
  if (w.rank() != 2) throw std::invalid_argument("soft_knockout_fc: expected rank-2 tensor, got " + shape_string(w.shape()));
  const auto& cfg = stream.config();
  Rng rng = stream.placement_rng();
  const std::size_t n_small = detail::small_count(cfg.r, w.size());
  std::vector<double> out;
  if (stream.cross())
    out = detail::two_block_layout(w.data(), n_small, true, detail::column_major_fill(w.rows(), w.cols()),
                                   cfg.placement, rng);
  else
    out = detail::two_block_layout(w.data(), n_small, false, detail::row_major_fill(w.rows(), w.cols()),
                                   cfg.placement, rng);
  stream.advance();
  return w.with_data(std::move(out));
}

/**
 * Shift attack for a fully connected [rows, cols] matrix.
 *
 * Entries are split at the sign boundary (S: negative, L: non-negative).
 * Non-cross layers are laid out as in the soft knockout. Cross layers get the
 * (L S) column-major layout; then each of the first min(s, rows) rows is
 * rotated periodically by the width of the L block, which turns its large
 * weights towards the units the previous layer left alive. Exactly those s
 * neurons stay active; s = 0 is the full knockout.
 */
inline WeightTensor shift_fc(AttackStream& stream, const WeightTensor& w) {
  if (w.rank() != 2) throw std::invalid_argument("shift_fc: expected rank-2 tensor, got " + shape_string(w.shape()));
  const auto& cfg = stream.config();
  Rng rng = stream.placement_rng();
  const std::size_t rows = w.rows(), cols = w.cols();
  const std::size_t n_small = detail::count_negative(w.data());
  std::vector<double> out;
  if (!stream.cross()) {
    out = detail::two_block_layout(w.data(), n_small, false, detail::row_major_fill(rows, cols), cfg.placement, rng);
  } else {
    out = detail::two_block_layout(w.data(), n_small, true, detail::column_major_fill(rows, cols), cfg.placement, rng);
    const std::size_t n_large = w.size() - n_small;
    const std::size_t large_cols = (n_large + rows - 1) / rows;
    const std::size_t active = std::min(cfg.s, rows);
    std::vector<double> row(cols);
    for (std::size_t i = 0; i < active; ++i) {
      for (std::size_t j = 0; j < cols; ++j) row[j] = out[i * cols + (j + large_cols) % cols];
      std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(i * cols));
    }
  }
  stream.advance();
  return w.with_data(std::move(out));
}

/**
 * Convolutional variant on [h, w, channels, filters] tensors.
 *
 * Non-cross: the smallest entries (ratio r for the soft variant, the
 * negatives for the shift variant) fill whole filters first, filter by
 * filter, so the leading filters produce dead channels.
 *
 * Cross, shift variant: every filter receives an equal share of the large
 * entries on its leading channels (the ones fed by dead channels) and small
 * entries on the trailing channels. The first `attacked_filters` filters then
 * have their channel axis rotated by s.
 *
 * Cross, soft variant: only the first `attacked_filters` filters are
 * rearranged. Their pooled entries are split with ratio r and each filter
 * gets large entries on its leading channels. Other filters are untouched.
 */
inline WeightTensor conv_attack(AttackStream& stream, const WeightTensor& w) {
  const auto d = detail::conv_dims(w);
  const auto& cfg = stream.config();
  if (cfg.attacked_filters > d.f)
    throw std::invalid_argument("conv_attack: attacked_filters (" + std::to_string(cfg.attacked_filters) +
                                ") exceeds filter count " + std::to_string(d.f));
  const bool shift = cfg.kind == AttackKind::ConvShift;
  Rng rng = stream.placement_rng();
  std::vector<double> out;

  if (!stream.cross()) {
    std::vector<std::size_t> fill;
    fill.reserve(w.size());
    for (std::size_t f = 0; f < d.f; ++f) {
      auto p = detail::filter_fill(d, f);
      fill.insert(fill.end(), p.begin(), p.end());
    }
    const std::size_t n_small = shift ? detail::count_negative(w.data()) : detail::small_count(cfg.r, w.size());
    out = detail::two_block_layout(w.data(), n_small, false, fill, cfg.placement, rng);
  } else if (shift) {
    const std::size_t n_small = detail::count_negative(w.data());
    const std::size_t n_large = w.size() - n_small;
    std::vector<std::size_t> large_pos, small_pos;
    for (std::size_t f = 0; f < d.f; ++f) {
      const std::size_t quota = n_large / d.f + (f < n_large % d.f ? 1 : 0);
      auto p = detail::filter_fill(d, f);
      for (std::size_t k = 0; k < p.size(); ++k) (k < quota ? large_pos : small_pos).push_back(p[k]);
    }
    std::vector<std::size_t> fill = large_pos;
    fill.insert(fill.end(), small_pos.begin(), small_pos.end());
    out = detail::two_block_layout(w.data(), n_small, true, fill, cfg.placement, rng);
    const std::size_t rot = cfg.s % d.c;
    if (rot != 0) {
      const std::vector<double> before = out;
      for (std::size_t f = 0; f < cfg.attacked_filters; ++f)
        for (std::size_t ch = 0; ch < d.c; ++ch)
          for (std::size_t y = 0; y < d.h; ++y)
            for (std::size_t x = 0; x < d.w; ++x)
              out[d.index(y, x, (ch + rot) % d.c, f)] = before[d.index(y, x, ch, f)];
    }
  } else {
    out = w.values();
    std::vector<std::size_t> pool;
    std::vector<std::vector<std::size_t>> per_filter(cfg.attacked_filters);
    for (std::size_t f = 0; f < cfg.attacked_filters; ++f) {
      per_filter[f] = detail::filter_fill(d, f);
      pool.insert(pool.end(), per_filter[f].begin(), per_filter[f].end());
    }
    std::vector<double> pooled(pool.size());
    for (std::size_t k = 0; k < pool.size(); ++k) pooled[k] = w[pool[k]];
    const std::size_t n_small = detail::small_count(cfg.r, pooled.size());
    const std::size_t n_large = pooled.size() - n_small;
    std::vector<std::size_t> large_pos, small_pos;
    for (std::size_t f = 0; f < cfg.attacked_filters; ++f) {
      const std::size_t quota = n_large / cfg.attacked_filters + (f < n_large % cfg.attacked_filters ? 1 : 0);
      for (std::size_t k = 0; k < per_filter[f].size(); ++k)
        (k < quota ? large_pos : small_pos).push_back(per_filter[f][k]);
    }
    // Positions are expressed relative to `pooled`, then mapped back.
    std::vector<std::size_t> local_of(w.size(), 0);
    for (std::size_t k = 0; k < pool.size(); ++k) local_of[pool[k]] = k;
    std::vector<std::size_t> fill;
    fill.reserve(pool.size());
    for (auto p : large_pos) fill.push_back(local_of[p]);
    for (auto p : small_pos) fill.push_back(local_of[p]);
    const auto arranged = detail::two_block_layout(pooled, n_small, true, fill, cfg.placement, rng);
    for (std::size_t k = 0; k < pool.size(); ++k) out[pool[k]] = arranged[k];
  }
  stream.advance();
  return w.with_data(std::move(out));
}

inline WeightTensor scale_weights(const WeightTensor& w, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw std::invalid_argument("scale_weights: factor must be positive");
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = w[i] * factor;
  return w.with_data(std::move(out));
}

/// Rescales a fan_in-scaled tensor as if it had been drawn with variance 2 / fan_out.
inline WeightTensor variance_swap(const WeightTensor& w) {
  const Fans f = compute_fans(w.shape());
  return scale_weights(w, std::sqrt(static_cast<double>(f.fan_in) / static_cast<double>(f.fan_out)));
}

/// Applies the configured transform to one tensor and advances the stream.
inline WeightTensor attack_tensor(AttackStream& stream, const WeightTensor& w) {
  const auto& cfg = stream.config();
  switch (cfg.kind) {
    case AttackKind::SoftKnockout:
      if (w.rank() != 2) break;
      return soft_knockout_fc(stream, w);
    case AttackKind::Shift:
      if (w.rank() != 2) break;
      return shift_fc(stream, w);
    case AttackKind::ConvSoftKnockout:
      if (w.rank() == 2) return soft_knockout_fc(stream, w);
      if (w.rank() != 4) break;
      return conv_attack(stream, w);
    case AttackKind::ConvShift:
      if (w.rank() == 2) return shift_fc(stream, w);
      if (w.rank() != 4) break;
      return conv_attack(stream, w);
    case AttackKind::ScaleWeights: {
      auto out = scale_weights(w, cfg.scale_factor);
      stream.advance();
      return out;
    }
    case AttackKind::VarianceSwap: {
      auto out = variance_swap(w);
      stream.advance();
      return out;
    }
  }
  throw std::invalid_argument("attack: kind " + to_string(cfg.kind) + " cannot transform tensor of shape " +
                              shape_string(w.shape()));
}

/// Runs one stream over the weight tensors in initialization order. Biases are never touched.
inline std::vector<WeightTensor> attack_network(const std::vector<WeightTensor>& weights, const AttackConfig& cfg) {
  if (weights.empty()) throw std::invalid_argument("attack_network: empty weight list");
  AttackStream stream(cfg);
  std::vector<WeightTensor> out;
  out.reserve(weights.size());
  for (const auto& w : weights) out.push_back(attack_tensor(stream, w));
  return out;
}

}  // namespace malinit

#endif  // MALINIT_ATTACK_HPP
