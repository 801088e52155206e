#ifndef MALINIT_TENSOR_HPP
#define MALINIT_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace malinit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/**
 * Deterministic pseudo random generator.
 *
 * The engine is xoshiro256** (Blackman & Vigna) whose 256-bit state is
 * filled from the 64-bit seed with splitmix64. All derived quantities
 * (uniform doubles, normals, indices) are computed here rather than via
 * <random> distributions so that streams are identical on every platform.
 *
 * Child generators: `split(k)` returns a generator seeded with
 * splitmix64(seed ^ (0x9E3779B97F4A7C15 * (k + 1))). Children depend only on
 * the parent seed and k, never on how far the parent stream has advanced.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64(sm);
  }

  std::uint64_t seed() const { return seed_; }

  Rng split(std::uint64_t k) const {
    std::uint64_t x = seed_ ^ (0x9E3779B97F4A7C15ULL * (k + 1));
    return Rng(splitmix64(x));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in (0, 1].
  double uniform_pos() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  /// Unbiased integer in [0, n) (Lemire's multiply-shift with rejection).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: empty range");
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next_u64()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Standard normal via Box-Muller; the second value of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& values) {
    shuffle(std::span<T>(values));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline std::vector<double> normal_sample(Rng& rng, double mean, double std, std::size_t count) {
  if (!(std > 0.0) || !std::isfinite(std)) throw std::invalid_argument("normal_sample: std must be positive");
  if (count == 0) throw std::invalid_argument("normal_sample: count must be at least 1");
  std::vector<double> out(count);
  for (auto& v : out) v = mean + std * rng.normal();
  return out;
}

/**
 * Dense real tensor stored row-major.
 *
 * Fully connected weights use shape [rows, cols] = [fan_out, fan_in] so that a
 * layer computes W x. Convolution weights use [filter_h, filter_w, channels,
 * filters]. The value is immutable once built; transforms return new tensors.
 */
class WeightTensor {
 public:
  WeightTensor() = default;

  WeightTensor(Shape shape, std::vector<double> data, std::size_t layer_index = 0)
      : shape_(std::move(shape)), data_(std::move(data)), layer_index_(layer_index) {
    if (shape_.empty()) throw std::invalid_argument("WeightTensor: empty shape");
    for (auto d : shape_)
      if (d == 0) throw std::invalid_argument("WeightTensor: zero extent in shape " + shape_string(shape_));
    if (shape_size(shape_) != data_.size())
      throw std::invalid_argument("WeightTensor: shape " + shape_string(shape_) + " does not match " +
                                  std::to_string(data_.size()) + " values");
    for (auto v : data_)
      if (!std::isfinite(v)) throw std::invalid_argument("WeightTensor: non-finite entry");
  }

  static WeightTensor zeros(Shape shape, std::size_t layer_index = 0) {
    const auto n = shape_size(shape);
    return WeightTensor(std::move(shape), std::vector<double>(n, 0.0), layer_index);
  }

  const Shape& shape() const { return shape_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t layer_index() const { return layer_index_; }

  WeightTensor with_layer_index(std::size_t index) const {
    WeightTensor t = *this;
    t.layer_index_ = index;
    return t;
  }

  WeightTensor with_data(std::vector<double> data) const { return WeightTensor(shape_, std::move(data), layer_index_); }

  std::size_t rows() const {
    require_rank(2);
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank(2);
    return shape_[1];
  }
  double at(std::size_t i, std::size_t j) const {
    require_rank(2);
    return data_[i * shape_[1] + j];
  }

  double operator[](std::size_t i) const { return data_[i]; }

  bool operator==(const WeightTensor& other) const { return shape_ == other.shape_ && data_ == other.data_; }

 private:
  void require_rank(std::size_t r) const {
    if (shape_.size() != r)
      throw std::invalid_argument("WeightTensor: expected rank " + std::to_string(r) + ", got shape " +
                                  shape_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
  std::size_t layer_index_ = 0;
};

inline std::vector<double> sorted_values(const WeightTensor& w) {
  std::vector<double> v = w.values();
  std::sort(v.begin(), v.end());
  return v;
}

inline double tensor_mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (auto x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Population variance.
inline double tensor_variance(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double m = tensor_mean(v);
  double s = 0.0;
  for (auto x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

inline double frobenius_norm(std::span<const double> v) {
  double s = 0.0;
  for (auto x : v) s += x * x;
  return std::sqrt(s);
}

inline bool is_permutation_of_range(std::span<const std::size_t> perm) {
  std::vector<char> seen(perm.size(), 0);
  for (auto p : perm) {
    if (p >= perm.size() || seen[p]) return false;
    seen[p] = 1;
  }
  return true;
}

/// out[i] = w[permutation[i]] over the flat row-major data.
inline WeightTensor permute_components(const WeightTensor& w, std::span<const std::size_t> permutation) {
  if (permutation.size() != w.size() || !is_permutation_of_range(permutation))
    throw std::invalid_argument("permute_components: permutation is not a bijection on [0, " +
                                std::to_string(w.size()) + ")");
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = w[permutation[i]];
  return w.with_data(std::move(out));
}

inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  rng.shuffle(p);
  return p;
}

// ---------------------------------------------------------------------------
// Binary container: "MLNT" | u8 version | u8 rank | rank x u64 LE extents |
// N x f64 LE values. Metadata lives in a JSON sidecar at <path>.json.

inline constexpr std::uint8_t kTensorFormatVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace detail

inline std::string encode_tensor(const WeightTensor& w) {
  std::string out = "MLNT";
  out.push_back(static_cast<char>(kTensorFormatVersion));
  if (w.rank() > 255) throw FormatError("tensor rank too large");
  out.push_back(static_cast<char>(w.rank()));
  for (auto d : w.shape()) detail::put_u64_le(out, d);
  for (auto v : w.data()) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    detail::put_u64_le(out, bits);
  }
  return out;
}

inline WeightTensor decode_tensor(std::string_view bytes, std::size_t layer_index = 0) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 6 || bytes.substr(0, 4) != "MLNT") throw FormatError("bad tensor magic");
  if (p[4] != kTensorFormatVersion) throw FormatError("unsupported tensor version " + std::to_string(p[4]));
  const std::size_t rank = p[5];
  std::size_t off = 6;
  if (bytes.size() < off + 8 * rank) throw FormatError("truncated tensor header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i, off += 8) shape[i] = detail::get_u64_le(p + off);
  const std::size_t n = shape_size(shape);
  if (bytes.size() != off + 8 * n)
    throw FormatError("tensor payload has " + std::to_string(bytes.size() - off) + " bytes, expected " +
                      std::to_string(8 * n));
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i, off += 8) {
    const std::uint64_t bits = detail::get_u64_le(p + off);
    std::memcpy(&data[i], &bits, sizeof(double));
  }
  return WeightTensor(std::move(shape), std::move(data), layer_index);
}

inline std::string tensor_kind(const WeightTensor& w) {
  switch (w.rank()) {
    case 1: return "vector";
    case 2: return "fc";
    case 4: return "conv";
    default: return "generic";
  }
}

/// Writes the container and a `<path>.json` sidecar; `extra` is merged into the sidecar.
inline void save_tensor(const WeightTensor& w, const std::string& path, const nlohmann::json& extra = {}) {
  detail::write_file_bytes(path, encode_tensor(w));
  nlohmann::json meta = {{"format", "MLNT"},
                         {"version", kTensorFormatVersion},
                         {"shape", w.shape()},
                         {"layer_index", w.layer_index()},
                         {"kind", tensor_kind(w)}};
  if (extra.is_object())
    for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
  std::ofstream out(path + ".json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path + ".json");
  out << meta.dump(2) << "\n";
}

/// Reads the container; the sidecar, when present, supplies layer_index.
inline WeightTensor load_tensor(const std::string& path) {
  std::size_t layer_index = 0;
  std::ifstream side(path + ".json");
  if (side) {
    const auto meta = nlohmann::json::parse(side, nullptr, false);
    if (!meta.is_discarded() && meta.contains("layer_index")) layer_index = meta["layer_index"].get<std::size_t>();
  }
  return decode_tensor(detail::read_file_bytes(path), layer_index);
}

}  // namespace malinit

#endif  // MALINIT_TENSOR_HPP
