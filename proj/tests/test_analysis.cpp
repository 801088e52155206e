#include <gtest/gtest.h>

#include <cmath>

#include "malinit/analysis.hpp"
#include "malinit/attack.hpp"
#include "malinit/init.hpp"
#include "malinit/montecarlo.hpp"

using namespace malinit;

namespace {

const double kSqrtPi = std::sqrt(M_PI);
const double kPhi1 = 0.5 * std::erfc(-1.0 / std::sqrt(2.0));  // P[Z <= 1]

// log10(k! (N-k)! / N!) by summing logarithms term by term.
double brute_chance_log10(std::size_t N, std::size_t k) {
  long double s = 0.0L;
  // k!(N-k)!/N! = prod_{i=1}^{k} i / (N-k+i)
  for (std::size_t i = 1; i <= k; ++i) s += std::log10(static_cast<long double>(i)) - std::log10(static_cast<long double>(N - k + i));
  return static_cast<double>(s);
}

}  // namespace

TEST(GOfR, KnownValues) {
  EXPECT_NEAR(g_of_r(0.5), kSqrtPi, 1e-15);
  EXPECT_NEAR(g_of_r(kPhi1) / (kSqrtPi * std::exp(0.5)), 1.0, 1e-12);
}

TEST(GOfR, Symmetric) {
  EXPECT_EQ(g_of_r(0.25), g_of_r(0.75));
  EXPECT_NEAR(g_of_r(0.2) / g_of_r(0.8), 1.0, 1e-14);
  for (double r = 0.01; r < 0.5; r += 0.01) EXPECT_NEAR(g_of_r(r) / g_of_r(1.0 - r), 1.0, 1e-12);
}

TEST(GOfR, RejectsOutOfRange) {
  EXPECT_THROW(g_of_r(0.0), std::invalid_argument);
  EXPECT_THROW(g_of_r(1.0), std::invalid_argument);
  EXPECT_THROW(g_of_r(-0.1), std::invalid_argument);
}

TEST(Cutoff, Values) {
  EXPECT_EQ(cutoff(0.5, 1.0), 0.0);
  EXPECT_NEAR(cutoff(kPhi1, 1.0), 1.0, 1e-12);
  for (double r : {0.1, 0.3, 0.7}) EXPECT_NEAR(cutoff(r, 2.0), 2.0 * cutoff(r, 1.0), 1e-14);
  EXPECT_THROW(cutoff(1.2, 1.0), std::invalid_argument);
  EXPECT_THROW(cutoff(0.5, 0.0), std::invalid_argument);
}

TEST(SplitStats, HalfSplitAgainstSampledNormals) {
  Rng rng(314);
  double neg_sum = 0, neg_sq = 0, pos_sum = 0, pos_sq = 0;
  std::size_t neg = 0, pos = 0;
  for (int i = 0; i < 10000000; ++i) {
    const double z = rng.normal();
    if (z < 0) {
      neg_sum += z;
      neg_sq += z * z;
      ++neg;
    } else {
      pos_sum += z;
      pos_sq += z * z;
      ++pos;
    }
  }
  const double mu_neg = neg_sum / neg, mu_pos = pos_sum / pos;
  const double var_neg = neg_sq / neg - mu_neg * mu_neg, var_pos = pos_sq / pos - mu_pos * mu_pos;
  const auto st = split_stats(0.5, 1.0);
  EXPECT_NEAR(st.mu_s, mu_neg, 1e-3);
  EXPECT_NEAR(st.mu_l, mu_pos, 1e-3);
  EXPECT_NEAR(st.var_s, var_neg, 1e-3);
  EXPECT_NEAR(st.var_l, var_pos, 1e-3);
  EXPECT_NEAR(st.mu_s, -0.7978846, 1e-7);
  EXPECT_NEAR(st.var_s, 1.0 - 2.0 / M_PI, 1e-12);
}

TEST(SplitStats, MassBalanceAndSigns) {
  for (double r = 0.01; r < 1.0; r += 0.01) {
    const auto st = split_stats(r, 0.7);
    EXPECT_LT(st.mu_s, 0.0);
    EXPECT_GT(st.mu_l, 0.0);
    EXPECT_NEAR(r * st.mu_s + (1 - r) * st.mu_l, 0.0, 1e-12);
    EXPECT_GE(st.var_s, 0.0);
    EXPECT_GE(st.var_l, 0.0);
  }
}

TEST(SplitStats, FiniteAcrossWholeRange) {
  std::vector<double> rs = {1e-6, 1.0 - 1e-6};
  for (int i = 1; i < 1000; ++i) rs.push_back(i / 1000.0);
  for (double r : rs) {
    const auto st = split_stats(r, 1.0);
    EXPECT_TRUE(std::isfinite(st.g) && std::isfinite(st.c) && std::isfinite(st.mu_s) && std::isfinite(st.mu_l) &&
                std::isfinite(st.var_s) && std::isfinite(st.var_l))
        << r;
  }
}

TEST(SplitStats, MatchesAttackedHeTensor) {
  Rng rng(8);
  const auto w = init_layer({}, {400, 400}, rng).weights;
  const double sigma = std::sqrt(2.0 / 400.0);
  for (double r : {0.3, 0.5, 0.8}) {
    AttackConfig cfg;
    cfg.r = r;
    AttackStream st(cfg);
    const auto out = soft_knockout_fc(st, w);
    const std::size_t k = detail::small_count(r, w.size());
    double s = 0, l = 0;
    for (std::size_t i = 0; i < out.size(); ++i) (i < k ? s : l) += out[i];
    const auto ref = split_stats(r, sigma);
    EXPECT_NEAR(s / static_cast<double>(k) / ref.mu_s, 1.0, 0.01) << r;
    EXPECT_NEAR(l / static_cast<double>(out.size() - k) / ref.mu_l, 1.0, 0.01) << r;
  }
}

TEST(FirstLayer, HalfSplitUniformInputs) {
  const LayerStatsInput in{100, 0.0, 1.0 / 3.0, 0.5};
  const auto st = first_layer_stats(in, std::sqrt(2.0 / 100.0), 0.5);
  EXPECT_GE(st.p_zero_s, 1.0 - 1e-9);
  EXPECT_LE(st.p_zero_l, 1e-9);
  EXPECT_NEAR(dimensionless_ratio_small(in), -6.76, 0.01);
}

TEST(FirstLayer, AgreesWithSampledNeurons) {
  const LayerStatsInput in{100, 1.0, 1.0 / 3.0, 0.3};
  const auto st = first_layer_stats(in, std::sqrt(2.0 / 100.0), 0.5);
  McConfig mc;
  mc.trials = 100000;
  mc.seed = 4;
  const std::vector<double> bias = {1.0};
  const auto f = split_block_zero_frequencies(0.3, 100, 1.0 / 3.0, bias, mc).front();
  EXPECT_NEAR(f.p_zero_s, st.p_zero_s, 0.02);
  EXPECT_NEAR(f.p_zero_l, st.p_zero_l, 0.02);
}

TEST(FirstLayer, DimensionlessFormsAgreeWithComposedMoments) {
  for (double r : {0.1, 0.3, 0.5, 0.77, 0.9})
    for (std::size_t n : {1u, 50u, 784u})
      for (double b : {-2.0, 0.0, 1.0, 5.0})
        for (double s : {0.0, 0.1, 1.0 / 3.0, 1.0}) {
          const LayerStatsInput in{n, b, s, r};
          for (double sigma : {0.05, 1.0})
            for (double mu_x : {0.2, 0.5, 3.0}) {
              const auto st = first_layer_stats(in, sigma, mu_x);
              const double rs = st.mu_h_s / (st.sigma_h_s * std::sqrt(2.0));
              const double rl = st.mu_h_l / (st.sigma_h_l * std::sqrt(2.0));
              EXPECT_NEAR(dimensionless_ratio_small(in), rs, 1e-10 * std::max(1.0, std::fabs(rs)));
              EXPECT_NEAR(dimensionless_ratio_large(in), rl, 1e-10 * std::max(1.0, std::fabs(rl)));
            }
          const auto [ps, pl] = p_zero_dimensionless(in);
          const auto st = first_layer_stats(in, 1.0, 1.0);
          EXPECT_NEAR(ps, st.p_zero_s, 1e-12);
          EXPECT_NEAR(pl, st.p_zero_l, 1e-12);
        }
}

TEST(FirstLayer, SmallBlockZeroProbabilityFallsWithBias) {
  for (double r : {0.2, 0.5, 0.8})
    for (std::size_t n : {50u, 100u, 784u}) {
      double prev = 2.0;
      // The small block sits near -n * E|a| / sigma, so sweep the bias well past 2n.
      for (double b = 0.0; b <= 4.0 * static_cast<double>(n); b += static_cast<double>(n) / 100.0) {
        const double p = first_layer_stats({n, b, 1.0 / 3.0, r}, 1.0, 0.5).p_zero_s;
        EXPECT_LE(p, prev);
        prev = p;
      }
      EXPECT_LT(prev, 1e-3);
    }
}

TEST(FirstLayer, KeepBiasFlag) {
  const LayerStatsInput in{100, 5.0, 1.0 / 3.0, 0.5};
  const auto with = first_layer_stats(in, 0.1, 0.5);
  const auto without = first_layer_stats(in, 0.1, 0.5, {false});
  EXPECT_NEAR(with.mu_h_s - without.mu_h_s, 5.0 * 0.1 * 0.5, 1e-12);
  EXPECT_EQ(with.sigma_h_s, without.sigma_h_s);
}

TEST(FirstLayer, RejectsInvalidInput) {
  EXPECT_THROW(first_layer_stats({0, 0.0, 0.3, 0.5}, 1.0, 0.5), std::invalid_argument);
  EXPECT_THROW(first_layer_stats({10, 0.0, -0.1, 0.5}, 1.0, 0.5), std::invalid_argument);
  EXPECT_THROW(first_layer_stats({10, 0.0, 0.3, 0.5}, 1.0, 0.0), std::invalid_argument);
  EXPECT_THROW(first_layer_stats({10, 0.0, 0.3, 1.0}, 1.0, 0.5), std::invalid_argument);
}

TEST(PermutationChance, SmallAndDegenerateCases) {
  EXPECT_NEAR(permutation_chance_log10(2, 2, 0.5), std::log10(1.0 / 6.0), 1e-14);
  EXPECT_NEAR(permutation_chance_log10(30, 20, 0.0), 0.0, 1e-12);
  EXPECT_NEAR(permutation_chance_log10(30, 20, 1.0), 0.0, 1e-12);
  EXPECT_THROW(permutation_chance_log10(0, 3, 0.5), std::invalid_argument);
  EXPECT_THROW(permutation_chance_log10(3, 3, 1.5), std::invalid_argument);
}

TEST(PermutationChance, LargeMatrix) {
  const double v = permutation_chance_log10(784, 392, 0.5);
  EXPECT_NEAR(v, -9.251e4, 5.0);
  EXPECT_NEAR(v / brute_chance_log10(784 * 392, 784 * 392 / 2), 1.0, 1e-9);
}
