#ifndef MALINIT_ANALYSIS_HPP
#define MALINIT_ANALYSIS_HPP

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "malinit/special.hpp"

namespace malinit {

namespace detail {

inline void require_open_unit(double r, const char* what) {
  if (!(r > 0.0 && r < 1.0)) throw std::invalid_argument(std::string(what) + ": r must lie in (0, 1)");
}

}  // namespace detail

/// log g(r) = log(sqrt(pi)) + erfinv(2r - 1)^2; finite wherever r is representable in (0, 1).
inline double log_g_of_r(double r) {
  detail::require_open_unit(r, "g_of_r");
  const double e = special::erfinv_two_p_minus_one(r);
  return std::log(special::kSqrtPi) + e * e;
}

/// g(r) = sqrt(pi) * exp(erfinv(2r - 1)^2), the shorthand of the truncated-normal moments.
inline double g_of_r(double r) { return std::exp(log_g_of_r(r)); }

/// Cut-off c below which the fraction r of N(0, sigma_a^2) lies.
inline double cutoff(double r, double sigma_a) {
  detail::require_open_unit(r, "cutoff");
  if (!(sigma_a > 0.0)) throw std::invalid_argument("cutoff: sigma_a must be positive");
  return std::sqrt(2.0) * sigma_a * special::erfinv_two_p_minus_one(r);
}

/// Statistics of the small (S) and large (L) blocks of a split Gaussian matrix.
struct SplitStats {
  double r = 0.5;
  double sigma_a = 1.0;
  double c = 0.0;
  double g = special::kSqrtPi;
  double mu_s = 0.0;
  double mu_l = 0.0;
  double var_s = 0.0;
  double var_l = 0.0;
};

inline SplitStats split_stats(double r, double sigma_a) {
  detail::require_open_unit(r, "split_stats");
  if (!(sigma_a > 0.0)) throw std::invalid_argument("split_stats: sigma_a must be positive");
  SplitStats st;
  st.r = r;
  st.sigma_a = sigma_a;
  const double e = special::erfinv_two_p_minus_one(r);
  const double log_g = std::log(special::kSqrtPi) + e * e;
  st.g = std::exp(log_g);
  st.c = std::sqrt(2.0) * sigma_a * e;
  // 1 / (r g) and 1 / ((1 - r) g) in log space; g alone overflows near r -> 0, 1.
  st.mu_s = -sigma_a / std::sqrt(2.0) * std::exp(-std::log(r) - log_g);
  st.mu_l = sigma_a / std::sqrt(2.0) * std::exp(-std::log1p(-r) - log_g);
  const double s2 = sigma_a * sigma_a;
  st.var_s = std::max(0.0, s2 + st.c * st.mu_s - st.mu_s * st.mu_s);
  st.var_l = std::max(0.0, s2 + st.c * st.mu_l - st.mu_l * st.mu_l);
  return st;
}

/// Dimensionless setup of the first attacked layer.
struct LayerStatsInput {
  std::size_t n = 1;
  double bias_ratio = 0.0;  // a_i / (sigma_A mu_x)
  double sharpness = 0.0;   // sigma_x^2 / mu_x^2
  double r = 0.5;

  void validate() const {
    if (n < 1) throw std::invalid_argument("first_layer_stats: n must be at least 1");
    if (!(sharpness >= 0.0)) throw std::invalid_argument("first_layer_stats: sharpness must be nonnegative");
    detail::require_open_unit(r, "first_layer_stats");
  }
};

struct FirstLayerStats {
  double mu_h_s = 0.0, mu_h_l = 0.0;
  double sigma_h_s = 0.0, sigma_h_l = 0.0;
  double p_zero_s = 0.0, p_zero_l = 0.0;
};

struct FirstLayerOptions {
  /// When false, the bias is dropped from the mean, as in the last step of
  /// the printed approximation n mu_x mu_A.
  bool keep_bias = true;
};

/// P[h <= 0] for h ~ N(mu, sigma^2), i.e. 1/2 - 1/2 erf(mu / (sigma sqrt 2)).
inline double p_nonpositive(double mu, double sigma) {
  if (sigma == 0.0) return mu <= 0.0 ? 1.0 : 0.0;
  return 0.5 * std::erfc(mu / (sigma * std::sqrt(2.0)));
}

/**
 * Mean, spread and deactivation probability of h = A x + a for a neuron in
 * the small or the large block of a split first layer.
 *
 *   mu_h      = n mu_x mu_A + a
 *   sigma_h^2 = n (mu_A^2 sigma_x^2 + sigma_A,blk^2 sigma_x^2 + sigma_A,blk^2 mu_x^2)
 */
inline FirstLayerStats first_layer_stats(const LayerStatsInput& in, double sigma_a, double mu_x,
                                         FirstLayerOptions opts = {}) {
  in.validate();
  if (!(mu_x > 0.0)) throw std::invalid_argument("first_layer_stats: mu_x must be positive");
  const auto st = split_stats(in.r, sigma_a);
  const double n = static_cast<double>(in.n);
  const double var_x = in.sharpness * mu_x * mu_x;
  const double bias = opts.keep_bias ? in.bias_ratio * sigma_a * mu_x : 0.0;
  FirstLayerStats out;
  out.mu_h_s = n * mu_x * st.mu_s + bias;
  out.mu_h_l = n * mu_x * st.mu_l + bias;
  out.sigma_h_s = std::sqrt(n * (st.mu_s * st.mu_s * var_x + st.var_s * var_x + st.var_s * mu_x * mu_x));
  out.sigma_h_l = std::sqrt(n * (st.mu_l * st.mu_l * var_x + st.var_l * var_x + st.var_l * mu_x * mu_x));
  out.p_zero_s = p_nonpositive(out.mu_h_s, out.sigma_h_s);
  out.p_zero_l = p_nonpositive(out.mu_h_l, out.sigma_h_l);
  return out;
}

/**
 * mu_h / (sigma_h sqrt 2) for the small and large blocks in terms of the
 * three dimensionless parameters alone. Small block:
 *
 *   (bias_ratio r g / sqrt(2n) - sqrt(n/4))
 *   / sqrt((r^2 g^2 - r e g)(sharpness + 1) - 1/2),   e = erfinv(2r - 1)
 *
 * The large block swaps r for (1 - r), flips the sign of sqrt(n/4) and of
 * the e term.
 */
inline double dimensionless_ratio_small(const LayerStatsInput& in) {
  in.validate();
  const double g = g_of_r(in.r);
  const double e = special::erfinv_two_p_minus_one(in.r);
  const double n = static_cast<double>(in.n);
  const double rg = in.r * g;
  const double num = in.bias_ratio * rg / std::sqrt(2.0 * n) - std::sqrt(n / 4.0);
  const double den = std::sqrt((rg * rg - in.r * e * g) * (in.sharpness + 1.0) - 0.5);
  return num / den;
}

inline double dimensionless_ratio_large(const LayerStatsInput& in) {
  in.validate();
  const double g = g_of_r(in.r);
  const double e = special::erfinv_two_p_minus_one(in.r);
  const double n = static_cast<double>(in.n);
  const double qg = (1.0 - in.r) * g;
  const double num = in.bias_ratio * qg / std::sqrt(2.0 * n) + std::sqrt(n / 4.0);
  const double den = std::sqrt((qg * qg + (1.0 - in.r) * e * g) * (in.sharpness + 1.0) - 0.5);
  return num / den;
}

/// Deactivation probabilities from the dimensionless ratios (independent of sigma_A and mu_x).
inline std::pair<double, double> p_zero_dimensionless(const LayerStatsInput& in) {
  return {0.5 * std::erfc(dimensionless_ratio_small(in)), 0.5 * std::erfc(dimensionless_ratio_large(in))};
}

/**
 * log10 of (k)! (N - k)! / N! with N = m n and k = round(r N): the chance
 * that a uniformly random placement puts the k smallest entries into a
 * designated block. Evaluated with lgamma.
 */
inline double permutation_chance_log10(std::size_t m, std::size_t n, double r) {
  if (m < 1 || n < 1) throw std::invalid_argument("permutation_chance_log10: m and n must be positive");
  if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("permutation_chance_log10: r must lie in [0, 1]");
  const double total = static_cast<double>(m) * static_cast<double>(n);
  const double k = std::round(r * total);
  const double ln = std::lgamma(k + 1.0) + std::lgamma(total - k + 1.0) - std::lgamma(total + 1.0);
  return ln / std::log(10.0);
}

}  // namespace malinit

#endif  // MALINIT_ANALYSIS_HPP
