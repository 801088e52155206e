#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "malinit/tensor.hpp"

using namespace malinit;

namespace {

std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "malinit_test_tensor";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(1), b(2);
  int equal = 0;
  for (int i = 0; i < 100; ++i) equal += a.next_u64() == b.next_u64();
  EXPECT_EQ(equal, 0);
}

TEST(Rng, SplitIgnoresParentPosition) {
  Rng a(7);
  const auto child_before = a.split(3).next_u64();
  for (int i = 0; i < 10; ++i) a.next_u64();
  EXPECT_EQ(a.split(3).next_u64(), child_before);
  EXPECT_NE(a.split(4).next_u64(), child_before);
}

TEST(Rng, UniformRanges) {
  Rng r(5);
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double p = r.uniform_pos();
    ASSERT_GT(p, 0.0);
    ASSERT_LE(p, 1.0);
  }
}

TEST(Rng, UniformIndexCoversRangeEvenly) {
  Rng r(11);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[r.uniform_index(7)];
  for (int c : counts) EXPECT_NEAR(c, n / 7, 400);
  EXPECT_THROW(r.uniform_index(0), std::invalid_argument);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(3);
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i;
  auto w = v;
  r.shuffle(w);
  EXPECT_NE(v, w);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(v, w);
}

TEST(NormalSample, MeanOfMillionDraws) {
  Rng r(2024);
  const auto v = normal_sample(r, 0.0, 1.0, 1000000);
  EXPECT_NEAR(tensor_mean(v), 0.0, 0.005);
  EXPECT_NEAR(tensor_variance(v), 1.0, 0.01);
}

TEST(NormalSample, VarianceOfScaledDraws) {
  Rng r(77);
  const auto v = normal_sample(r, 0.0, 0.1, 1000000);
  EXPECT_NEAR(tensor_variance(v), 0.01, 0.0002);
}

TEST(NormalSample, FixedSeedRepeats) {
  Rng a(9), b(9);
  EXPECT_EQ(normal_sample(a, 5.0, 1.0, 1), normal_sample(b, 5.0, 1.0, 1));
}

TEST(NormalSample, RejectsBadArguments) {
  Rng r(1);
  EXPECT_THROW(normal_sample(r, 0.0, 0.0, 10), std::invalid_argument);
  EXPECT_THROW(normal_sample(r, 0.0, -1.0, 10), std::invalid_argument);
  EXPECT_THROW(normal_sample(r, 0.0, 1.0, 0), std::invalid_argument);
}

TEST(WeightTensor, ValidatesShapeAndEntries) {
  EXPECT_THROW(WeightTensor({}, {}), std::invalid_argument);
  EXPECT_THROW(WeightTensor({2, 0}, {}), std::invalid_argument);
  EXPECT_THROW(WeightTensor({2, 2}, {1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(WeightTensor({1, 2}, {1, std::nan("")}), std::invalid_argument);
  EXPECT_THROW(WeightTensor({1, 1}, {INFINITY}), std::invalid_argument);
  const WeightTensor w({2, 3}, {1, 2, 3, 4, 5, 6}, 4);
  EXPECT_EQ(w.rows(), 2u);
  EXPECT_EQ(w.cols(), 3u);
  EXPECT_EQ(w.at(1, 2), 6.0);
  EXPECT_EQ(w.layer_index(), 4u);
  EXPECT_THROW(WeightTensor({2, 2, 1}, {1, 2, 3, 4}).rows(), std::invalid_argument);
}

TEST(PermuteComponents, IdentityAndSwap) {
  const WeightTensor w({2}, {0.5, -1.5});
  const std::vector<std::size_t> id = {0, 1}, swap = {1, 0};
  EXPECT_EQ(permute_components(w, id), w);
  EXPECT_EQ(permute_components(w, swap).values(), (std::vector<double>{-1.5, 0.5}));
}

TEST(PermuteComponents, RejectsNonBijection) {
  const WeightTensor w({3}, {1, 2, 3});
  const std::vector<std::size_t> dup = {0, 0, 1}, short_perm = {0, 1}, out_of_range = {0, 1, 3};
  EXPECT_THROW(permute_components(w, dup), std::invalid_argument);
  EXPECT_THROW(permute_components(w, short_perm), std::invalid_argument);
  EXPECT_THROW(permute_components(w, out_of_range), std::invalid_argument);
}

TEST(PermuteComponents, RandomPermutationKeepsMultiset) {
  Rng r(12);
  const WeightTensor w({20, 30}, normal_sample(r, 0.0, 1.0, 600));
  const auto perm = random_permutation(600, r);
  const auto p = permute_components(w, perm);
  EXPECT_EQ(p.shape(), w.shape());
  EXPECT_EQ(sorted_values(p), sorted_values(w));
  EXPECT_NE(p.values(), w.values());
}

TEST(Container, RoundTripBitExact) {
  Rng r(99);
  const WeightTensor w({3, 4, 2, 5}, normal_sample(r, 0.0, 1.0, 120), 3);
  const auto path = temp_path("conv.bin");
  save_tensor(w, path, {{"note", "x"}});
  const auto back = load_tensor(path);
  EXPECT_EQ(back, w);
  EXPECT_EQ(back.layer_index(), 3u);
  std::ifstream side(path + ".json");
  const auto meta = nlohmann::json::parse(side);
  EXPECT_EQ(meta["kind"], "conv");
  EXPECT_EQ(meta["note"], "x");
  EXPECT_EQ(meta["shape"], (std::vector<std::size_t>{3, 4, 2, 5}));
}

TEST(Container, ByteLayout) {
  const WeightTensor w({1, 2}, {1.0, -2.0});
  const auto bytes = encode_tensor(w);
  ASSERT_EQ(bytes.size(), 4u + 1 + 1 + 2 * 8 + 2 * 8);
  EXPECT_EQ(bytes.substr(0, 4), "MLNT");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 1);  // shape[0] little endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[14]), 2);
  // 1.0 = 0x3FF0000000000000, stored little endian.
  EXPECT_EQ(static_cast<unsigned char>(bytes[29]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(bytes[28]), 0xF0);
}

TEST(Container, RejectsCorruptInput) {
  const auto good = encode_tensor(WeightTensor({2}, {1.0, 2.0}));
  EXPECT_THROW(decode_tensor("XXXX" + good.substr(4)), FormatError);
  EXPECT_THROW(decode_tensor(good.substr(0, good.size() - 1)), FormatError);
  EXPECT_THROW(decode_tensor(good + "x"), FormatError);
  auto bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(decode_tensor(bad_version), FormatError);
  EXPECT_THROW(load_tensor(temp_path("does_not_exist.bin")), std::runtime_error);
}

TEST(Statistics, FrobeniusMeanVariance) {
  const std::vector<double> v = {3.0, 4.0};
  EXPECT_DOUBLE_EQ(frobenius_norm(v), 5.0);
  EXPECT_DOUBLE_EQ(tensor_mean(v), 3.5);
  EXPECT_DOUBLE_EQ(tensor_variance(v), 0.25);
}
