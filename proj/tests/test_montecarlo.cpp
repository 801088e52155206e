#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "malinit/analysis.hpp"
#include "malinit/attack.hpp"
#include "malinit/init.hpp"
#include "malinit/montecarlo.hpp"

using namespace malinit;

namespace {

McConfig mc(std::size_t trials, std::uint64_t seed = 1, std::size_t jobs = 1) {
  McConfig c;
  c.trials = trials;
  c.seed = seed;
  c.jobs = jobs;
  return c;
}

double mean_of(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(lo), v.begin() + static_cast<std::ptrdiff_t>(hi), 0.0) /
         static_cast<double>(hi - lo);
}

}  // namespace

TEST(EstimatePZero, ZeroMatrixAlwaysZero) {
  const WeightTensor w({5, 7}, std::vector<double>(35, 0.0));
  for (double p : estimate_p_zero(w, {}, mc(2000))) EXPECT_EQ(p, 1.0);
}

TEST(EstimatePZero, PositiveMatrixNeverZero) {
  const WeightTensor w({4, 6}, std::vector<double>(24, 0.25));
  for (double p : estimate_p_zero(w, {}, mc(2000))) EXPECT_EQ(p, 0.0);
}

TEST(EstimatePZero, BiasShiftsDecision) {
  const WeightTensor w({2, 3}, {-1, -1, -1, -1, -1, -1});
  const std::vector<double> bias = {10.0, 0.0};
  const auto p = estimate_p_zero(w, bias, mc(3000));
  EXPECT_EQ(p[0], 0.0);
  EXPECT_EQ(p[1], 1.0);
  const std::vector<double> bad = {1.0};
  EXPECT_THROW(estimate_p_zero(w, bad, mc(10)), std::invalid_argument);
}

TEST(EstimatePZero, SignSymmetricRowIsHalfUnderCenteredInputs) {
  const WeightTensor w({1, 2}, {1.0, -1.0});
  auto c = mc(200000, 3);
  c.input = InputDistribution::normal(0.0, 1.0);
  EXPECT_NEAR(estimate_p_zero(w, {}, c)[0], 0.5, 0.005);
}

TEST(EstimatePZero, AttackedHeLayerMatchesAnalyticBlocks) {
  const std::size_t n = 100;
  Rng rng(21);
  const auto he = init_layer({}, {n, n}, rng).weights;
  AttackConfig cfg;
  cfg.r = 0.3;
  // Rows must hold i.i.d. block samples; Stable placement would sort them.
  cfg.placement = Placement::shuffled(3);
  AttackStream st(cfg);
  const auto w = soft_knockout_fc(st, he);
  const double bias_ratio = 1.5;
  const double sigma = std::sqrt(2.0 / static_cast<double>(n));
  const std::vector<double> bias(n, bias_ratio * sigma * 0.5);
  const auto p = estimate_p_zero(w, bias, mc(20000, 5));
  const auto ref = first_layer_stats({n, bias_ratio, 1.0 / 3.0, 0.3}, sigma, 0.5);
  // Non-cross layout fills whole rows with the small block first: 30 rows of 100.
  EXPECT_NEAR(mean_of(p, 0, 30), ref.p_zero_s, 0.03);
  EXPECT_NEAR(mean_of(p, 30, n), ref.p_zero_l, 0.03);
}

TEST(EstimatePZero, IndependentOfWorkerCount) {
  Rng rng(4);
  const auto w = init_layer({}, {20, 30}, rng).weights;
  EXPECT_EQ(estimate_p_zero(w, {}, mc(5000, 9, 1)), estimate_p_zero(w, {}, mc(5000, 9, 3)));
}

TEST(EstimatePZero, RejectsConvAndBadTrials) {
  Rng rng(4);
  const auto conv = init_layer({}, {3, 3, 2, 4}, rng).weights;
  EXPECT_THROW(estimate_p_zero(conv, {}, mc(10)), std::invalid_argument);
  const WeightTensor w({1, 1}, {1.0});
  EXPECT_THROW(estimate_p_zero(w, {}, mc(0)), std::invalid_argument);
}

TEST(InputDistribution, SharpnessMoments) {
  Rng rng(2);
  for (double s : {0.1, 1.0 / 3.0, 1.0}) {
    const auto d = InputDistribution::with_sharpness(s);
    double sum = 0, sq = 0;
    const int N = 400000;
    for (int i = 0; i < N; ++i) {
      const double x = d.sample(rng);
      sum += x;
      sq += x * x;
    }
    const double m = sum / N, v = sq / N - m * m;
    EXPECT_NEAR(m, 0.5, 0.005);
    EXPECT_NEAR(v / (m * m), s, 0.01 * std::max(1.0, s));
  }
  EXPECT_EQ(InputDistribution::with_sharpness(1.0 / 3.0).kind, InputDistribution::Kind::Uniform01);
  EXPECT_THROW(InputDistribution::with_sharpness(-1.0), std::invalid_argument);
}

TEST(ActiveNeuronCount, PositiveWeightsKeepAllUnits) {
  Network net(NetworkSpec::dense_stack(30, {40, 20, 5}), 3);
  for (auto& p : net.params())
    for (auto& v : p.w) v = std::fabs(v);
  EXPECT_EQ(active_neuron_count(net, mc(2000)), (std::vector<std::size_t>{40, 20}));
}

TEST(ActiveNeuronCount, FullKnockoutLeavesNothing) {
  Network net(NetworkSpec::dense_stack(100, {100, 40, 10}), 7);
  AttackConfig cfg;
  cfg.kind = AttackKind::Shift;
  cfg.s = 0;
  net.set_weights(attack_network(net.weight_tensors(), cfg));
  EXPECT_EQ(active_neuron_count(net, mc(10000))[1], 0u);
}

TEST(ActiveNeuronCount, ShiftLeavesExactlySUnits) {
  Network net(NetworkSpec::dense_stack(120, {100, 40, 10}), 11);
  AttackConfig cfg;
  cfg.kind = AttackKind::Shift;
  cfg.s = 4;
  net.set_weights(attack_network(net.weight_tensors(), cfg));
  EXPECT_EQ(active_neuron_count(net, mc(10000))[1], 4u);
}

TEST(ActiveNeuronCount, WorkerCountIndependent) {
  const Network net(NetworkSpec::dense_stack(10, {8, 6, 3}), 1);
  EXPECT_EQ(active_neuron_count(net, mc(3000, 2, 1)), active_neuron_count(net, mc(3000, 2, 4)));
}

TEST(SplitBlockFrequencies, AgreesWithAnalyticAcrossBias) {
  const std::vector<double> bias = {0.0, 2.0, 5.0, 8.0, 12.0};
  const auto freq = split_block_zero_frequencies(0.5, 50, 1.0 / 3.0, bias, mc(20000, 6));
  ASSERT_EQ(freq.size(), bias.size());
  for (const auto& f : freq) {
    const auto ref = first_layer_stats({50, f.bias_ratio, 1.0 / 3.0, 0.5}, std::sqrt(2.0 / 50.0), 0.5);
    EXPECT_NEAR(f.p_zero_s, ref.p_zero_s, 0.02) << f.bias_ratio;
    EXPECT_NEAR(f.p_zero_l, ref.p_zero_l, 0.02) << f.bias_ratio;
  }
}

TEST(SplitBlockFrequencies, Deterministic) {
  const std::vector<double> bias = {1.0};
  const auto a = split_block_zero_frequencies(0.4, 20, 0.2, bias, mc(3000, 8, 1), 12);
  const auto b = split_block_zero_frequencies(0.4, 20, 0.2, bias, mc(3000, 8, 2), 12);
  EXPECT_EQ(a[0].p_zero_s, b[0].p_zero_s);
  EXPECT_EQ(a[0].p_zero_l, b[0].p_zero_l);
  EXPECT_THROW(split_block_zero_frequencies(0.0, 20, 0.2, bias, mc(10)), std::invalid_argument);
  EXPECT_THROW(split_block_zero_frequencies(0.5, 0, 0.2, bias, mc(10)), std::invalid_argument);
}
