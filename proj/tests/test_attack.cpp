#include <gtest/gtest.h>

#include <algorithm>

#include "malinit/attack.hpp"
#include "malinit/init.hpp"
#include "malinit/montecarlo.hpp"
#include "malinit/nn.hpp"

using namespace malinit;

namespace {

AttackConfig make(AttackKind kind, double r = 0.5, std::size_t s = 0) {
  AttackConfig c;
  c.kind = kind;
  c.r = r;
  c.s = s;
  return c;
}

WeightTensor he(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  return init_layer({}, shape, rng).weights;
}

const WeightTensor kSmall({2, 2}, {0.3, -0.1, -0.2, 0.4});

}  // namespace

TEST(SoftKnockout, NonCrossExample) {
  AttackStream st(make(AttackKind::SoftKnockout));
  EXPECT_EQ(soft_knockout_fc(st, kSmall).values(), (std::vector<double>{-0.2, -0.1, 0.3, 0.4}));
  EXPECT_TRUE(st.cross());
}

TEST(SoftKnockout, CrossExample) {
  auto cfg = make(AttackKind::SoftKnockout);
  cfg.start_parity = true;
  AttackStream st(cfg);
  EXPECT_EQ(soft_knockout_fc(st, kSmall).values(), (std::vector<double>{0.3, -0.2, 0.4, -0.1}));
  EXPECT_FALSE(st.cross());
}

TEST(SoftKnockout, ZeroRatioIsAscendingSort) {
  const auto w = he({5, 7}, 1);
  AttackStream st(make(AttackKind::SoftKnockout, 0.0));
  EXPECT_EQ(soft_knockout_fc(st, w).values(), sorted_values(w));
}

TEST(SoftKnockout, LeadingRowsHoldSmallBlock) {
  const auto w = he({10, 9}, 2);
  AttackStream st(make(AttackKind::SoftKnockout, 0.35));
  const auto out = soft_knockout_fc(st, w);
  const auto sorted = sorted_values(w);
  const std::size_t n_small = 32;  // round(0.35 * 90) = 31.5 -> 32
  const double cut = sorted[n_small - 1];
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (k < n_small)
      EXPECT_LE(out[k], cut);
    else
      EXPECT_GT(out[k], cut);
  }
}

TEST(SoftKnockout, ShuffledKeepsBlocksButPermutesWithin) {
  const auto w = he({16, 16}, 3);
  auto cfg = make(AttackKind::SoftKnockout);
  cfg.placement = Placement::shuffled(99);
  AttackStream a(cfg), b(cfg);
  const auto out = soft_knockout_fc(a, w);
  EXPECT_EQ(out, soft_knockout_fc(b, w));
  AttackStream stable(make(AttackKind::SoftKnockout));
  const auto ref = soft_knockout_fc(stable, w);
  EXPECT_NE(out.values(), ref.values());
  std::vector<double> top(out.values().begin(), out.values().begin() + 128);
  std::vector<double> ref_top(ref.values().begin(), ref.values().begin() + 128);
  std::sort(top.begin(), top.end());
  EXPECT_EQ(top, ref_top);
}

TEST(SoftKnockout, TiesKeepFlatIndexOrder) {
  const WeightTensor w({1, 4}, {1.0, 1.0, 0.0, 1.0});
  AttackStream st(make(AttackKind::SoftKnockout, 0.5));
  EXPECT_EQ(soft_knockout_fc(st, w).values(), (std::vector<double>{0.0, 1.0, 1.0, 1.0}));
}

TEST(SoftKnockout, RejectsConvTensor) {
  AttackStream st(make(AttackKind::SoftKnockout));
  EXPECT_THROW(soft_knockout_fc(st, he({3, 3, 2, 2}, 1)), std::invalid_argument);
}

TEST(Shift, ZeroShiftIsFullKnockoutLayout) {
  const auto w = he({6, 8}, 4);
  auto cfg = make(AttackKind::Shift, 0.5, 0);
  cfg.start_parity = true;
  AttackStream st(cfg);
  const auto out = shift_fc(st, w);
  // Column-major: non-negative entries first, then the negatives.
  const std::size_t neg = detail::count_negative(w.data());
  const auto fill = detail::column_major_fill(6, 8);
  for (std::size_t k = 0; k < fill.size(); ++k) {
    if (k < w.size() - neg)
      EXPECT_GE(out[fill[k]], 0.0);
    else
      EXPECT_LT(out[fill[k]], 0.0);
  }
}

TEST(Shift, NonCrossSplitsAtSign) {
  const auto w = he({6, 8}, 5);
  AttackStream st(make(AttackKind::Shift, 0.5, 3));
  const auto out = shift_fc(st, w);
  const std::size_t neg = detail::count_negative(w.data());
  for (std::size_t k = 0; k < out.size(); ++k) EXPECT_EQ(out[k] < 0.0, k < neg);
}

TEST(Shift, AllNegativeIsAscendingSort) {
  std::vector<double> v(12);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -1.0 - static_cast<double>((i * 5) % 12);
  const WeightTensor w({3, 4}, v);
  const auto sorted = sorted_values(w);
  AttackStream plain(make(AttackKind::Shift, 0.5, 2));
  EXPECT_EQ(shift_fc(plain, w).values(), sorted);
  // Cross layers fill column by column.
  auto cfg = make(AttackKind::Shift, 0.5, 2);
  cfg.start_parity = true;
  AttackStream cross(cfg);
  const auto out = shift_fc(cross, w);
  const auto fill = detail::column_major_fill(3, 4);
  for (std::size_t k = 0; k < fill.size(); ++k) EXPECT_EQ(out[fill[k]], sorted[k]);
}

TEST(Shift, OnlyFirstSRowsChange) {
  const auto w = he({10, 12}, 6);
  auto base_cfg = make(AttackKind::Shift, 0.5, 0);
  base_cfg.start_parity = true;
  auto cfg = base_cfg;
  cfg.s = 4;
  AttackStream a(base_cfg), b(cfg);
  const auto ref = shift_fc(a, w), out = shift_fc(b, w);
  EXPECT_EQ(sorted_values(out), sorted_values(w));
  for (std::size_t i = 4; i < 10; ++i)
    for (std::size_t j = 0; j < 12; ++j) EXPECT_EQ(out.at(i, j), ref.at(i, j));
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> r1(ref.values().begin() + i * 12, ref.values().begin() + (i + 1) * 12);
    std::vector<double> r2(out.values().begin() + i * 12, out.values().begin() + (i + 1) * 12);
    EXPECT_NE(r1, r2);
    EXPECT_TRUE(std::is_permutation(r1.begin(), r1.end(), r2.begin()));
  }
}

TEST(Shift, ExactlySActiveNeuronsInTwoLayerNet) {
  for (std::size_t s : {1u, 4u, 8u, 16u}) {
    Network net(NetworkSpec::dense_stack(120, {100, 40, 10}), 11 + s);
    net.set_weights(attack_network(net.weight_tensors(), make(AttackKind::Shift, 0.5, s)));
    McConfig mc;
    mc.trials = 2000;
    mc.seed = s;
    const auto counts = active_neuron_count(net, mc);
    EXPECT_EQ(counts[1], s) << "s=" << s;
  }
}

TEST(ConvAttack, NonCrossLeadingFiltersHoldSmallest) {
  const auto w = he({3, 3, 1, 4}, 7);
  AttackStream st(make(AttackKind::ConvSoftKnockout, 0.5));
  const auto out = conv_attack(st, w);
  const auto sorted = sorted_values(w);
  std::vector<double> low, high;
  for (std::size_t k = 0; k < out.size(); ++k) (k % 4 < 2 ? low : high).push_back(out[k]);
  std::sort(low.begin(), low.end());
  std::sort(high.begin(), high.end());
  EXPECT_EQ(low, std::vector<double>(sorted.begin(), sorted.begin() + 18));
  EXPECT_EQ(high, std::vector<double>(sorted.begin() + 18, sorted.end()));
}

TEST(ConvAttack, FullPeriodShiftEqualsNoShift) {
  const auto w = he({3, 3, 6, 5}, 8);
  auto cfg = make(AttackKind::ConvShift, 0.5, 0);
  cfg.start_parity = true;
  cfg.attacked_filters = 5;
  auto full = cfg;
  full.s = 6;
  AttackStream a(cfg), b(full);
  EXPECT_EQ(conv_attack(a, w), conv_attack(b, w));
}

TEST(ConvAttack, CrossSoftLeavesOtherFiltersAlone) {
  const auto w = he({3, 3, 4, 6}, 9);
  auto cfg = make(AttackKind::ConvSoftKnockout, 0.5);
  cfg.start_parity = true;
  cfg.attacked_filters = 2;
  AttackStream st(cfg);
  const auto out = conv_attack(st, w);
  EXPECT_EQ(sorted_values(out), sorted_values(w));
  for (std::size_t k = 0; k < w.size(); ++k)
    if (k % 6 >= 2) EXPECT_EQ(out[k], w[k]);
}

TEST(ConvAttack, RejectsTooManyFiltersAndWrongRank) {
  auto cfg = make(AttackKind::ConvShift);
  cfg.attacked_filters = 5;
  AttackStream st(cfg);
  EXPECT_THROW(conv_attack(st, he({3, 3, 2, 4}, 1)), std::invalid_argument);
  AttackStream st2(make(AttackKind::ConvShift));
  EXPECT_THROW(conv_attack(st2, he({4, 4}, 1)), std::invalid_argument);
}

TEST(ConvAttack, TwoLayerKnockoutSilencesSecondLayer) {
  NetworkSpec spec;
  spec.input_shape = {8, 8, 3};
  spec.layers = {LayerSpec::conv(3, 3, 16), LayerSpec::conv(3, 3, 16), LayerSpec::flatten(), LayerSpec::dense(4)};
  Network net(spec, 21);
  auto cfg = make(AttackKind::ConvShift, 0.5, 0);
  cfg.attacked_filters = 16;
  net.set_weights(attack_network(net.weight_tensors(), cfg));
  Rng rng(5);
  std::size_t nonzero = 0, total = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> x(net.input_size());
    for (auto& v : x) v = rng.uniform();
    const auto outs = stage_outputs(net, x);
    for (double v : outs[1]) nonzero += v > 0.0;
    total += outs[1].size();
  }
  EXPECT_LE(static_cast<double>(nonzero) / static_cast<double>(total), 0.01);
}

TEST(ScaleWeights, Factors) {
  const auto w = he({50, 80}, 10);
  EXPECT_EQ(scale_weights(w, 1.0), w);
  EXPECT_NEAR(tensor_variance(scale_weights(w, 2.0).data()), 4.0 * tensor_variance(w.data()), 1e-12);
  EXPECT_NEAR(std::sqrt(tensor_variance(scale_weights(w, 0.5).data())), 0.5 * std::sqrt(2.0 / 80.0), 0.03 * std::sqrt(2.0 / 80.0));
  EXPECT_THROW(scale_weights(w, 0.0), std::invalid_argument);
  EXPECT_THROW(scale_weights(w, -1.0), std::invalid_argument);
}

TEST(AttackNetwork, ParityAlternates) {
  std::vector<WeightTensor> ws = {he({6, 5}, 1), he({4, 6}, 2), he({3, 4}, 3)};
  for (bool parity : {false, true}) {
    auto cfg = make(AttackKind::SoftKnockout);
    cfg.start_parity = parity;
    AttackStream st(cfg);
    for (std::size_t k = 0; k < ws.size(); ++k) {
      EXPECT_EQ(st.cross(), parity != (k % 2 == 1));
      attack_tensor(st, ws[k]);
    }
  }
}

TEST(AttackNetwork, TwoLayersRowThenColumnSplit) {
  std::vector<WeightTensor> ws = {he({4, 6}, 1), he({3, 4}, 2)};
  const auto out = attack_network(ws, make(AttackKind::SoftKnockout));
  AttackStream a(make(AttackKind::SoftKnockout));
  EXPECT_EQ(out[0], soft_knockout_fc(a, ws[0]));
  auto cross = make(AttackKind::SoftKnockout);
  cross.start_parity = true;
  AttackStream b(cross);
  EXPECT_EQ(out[1], soft_knockout_fc(b, ws[1]));
}

TEST(AttackNetwork, SingleLayerIsNonCross) {
  const auto w = he({4, 6}, 1);
  AttackStream a(make(AttackKind::SoftKnockout));
  EXPECT_EQ(attack_network({w}, make(AttackKind::SoftKnockout)).front(), soft_knockout_fc(a, w));
}

TEST(AttackNetwork, IdentityScaleAndErrors) {
  std::vector<WeightTensor> ws = {he({4, 6}, 1), he({3, 4}, 2)};
  auto cfg = make(AttackKind::ScaleWeights);
  cfg.scale_factor = 1.0;
  EXPECT_EQ(attack_network(ws, cfg), ws);
  EXPECT_THROW(attack_network({}, cfg), std::invalid_argument);
  EXPECT_THROW(attack_network({he({3, 3, 2, 2}, 1)}, make(AttackKind::Shift)), std::invalid_argument);
}

TEST(AttackNetwork, VarianceSwapRescales) {
  const auto w = he({10, 1000}, 5);
  const auto out = attack_network({w}, make(AttackKind::VarianceSwap)).front();
  for (std::size_t i = 0; i < w.size(); ++i) ASSERT_NEAR(out[i], 10.0 * w[i], 1e-12);
}

TEST(AttackConfig, Validation) {
  auto cfg = make(AttackKind::SoftKnockout, 1.5);
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = make(AttackKind::SoftKnockout);
  cfg.attacked_filters = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_EQ(parse_attack_kind(to_string(AttackKind::ConvShift)), AttackKind::ConvShift);
  EXPECT_THROW(parse_attack_kind("nope"), std::invalid_argument);
}
