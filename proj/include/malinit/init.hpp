#ifndef MALINIT_INIT_HPP
#define MALINIT_INIT_HPP

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "malinit/tensor.hpp"

namespace malinit {

enum class InitKind { He, Glorot };

struct BiasPolicy {
  enum class Kind { Zero, Constant } kind = Kind::Zero;
  double value = 0.0;

  static BiasPolicy zero() { return {}; }
  static BiasPolicy constant(double v) { return {Kind::Constant, v}; }

  double fill_value() const { return kind == Kind::Constant ? value : 0.0; }
};

/**
 * Gaussian initializer description.
 *
 * He uses variance 2 / fan_in and Glorot uses 2 / (fan_in + fan_out). Some
 * write-ups quote the He scale as sqrt(2 / fan_in) without saying whether it
 * is the standard deviation or the variance; here it is the standard
 * deviation. Fully connected layers conventionally get a 0.1 bias, conv
 * layers a zero bias.
 */
struct InitializerSpec {
  InitKind kind = InitKind::He;
  BiasPolicy bias = BiasPolicy::zero();
};

inline std::string to_string(InitKind k) { return k == InitKind::He ? "he" : "glorot"; }

inline InitKind parse_init_kind(const std::string& s) {
  if (s == "he" || s == "He") return InitKind::He;
  if (s == "glorot" || s == "Glorot" || s == "xavier") return InitKind::Glorot;
  throw std::invalid_argument("unknown initializer '" + s + "'");
}

struct Fans {
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  std::size_t bias_width = 0;
};

/// fc [out, in]: fan_in = in. conv [h, w, c, f]: fan_in = h*w*c, fan_out = h*w*f.
inline Fans compute_fans(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("init: empty shape");
  for (auto d : shape)
    if (d == 0) throw std::invalid_argument("init: zero extent in shape " + shape_string(shape));
  switch (shape.size()) {
    case 2: return {shape[1], shape[0], shape[0]};
    case 4: return {shape[0] * shape[1] * shape[2], shape[0] * shape[1] * shape[3], shape[3]};
    default: throw std::invalid_argument("init: unsupported weight rank " + std::to_string(shape.size()));
  }
}

inline double init_stddev(InitKind kind, const Fans& f) {
  const double var = kind == InitKind::He ? 2.0 / static_cast<double>(f.fan_in)
                                          : 2.0 / static_cast<double>(f.fan_in + f.fan_out);
  return std::sqrt(var);
}

struct InitializedLayer {
  WeightTensor weights;
  std::vector<double> bias;
};

inline InitializedLayer init_with_stddev(const Shape& shape, double stddev, const BiasPolicy& bias, Rng& rng,
                                         std::size_t layer_index) {
  const Fans f = compute_fans(shape);
  auto data = normal_sample(rng, 0.0, stddev, shape_size(shape));
  return {WeightTensor(shape, std::move(data), layer_index), std::vector<double>(f.bias_width, bias.fill_value())};
}

inline InitializedLayer init_layer(const InitializerSpec& spec, const Shape& shape, Rng& rng,
                                   std::size_t layer_index = 0) {
  return init_with_stddev(shape, init_stddev(spec.kind, compute_fans(shape)), spec.bias, rng, layer_index);
}

/// Alternative attack: draws with variance 2 / fan_out in place of the fan_in based scale.
inline InitializedLayer variance_swap_init(const InitializerSpec& spec, const Shape& shape, Rng& rng,
                                           std::size_t layer_index = 0) {
  const Fans f = compute_fans(shape);
  return init_with_stddev(shape, std::sqrt(2.0 / static_cast<double>(f.fan_out)), spec.bias, rng, layer_index);
}

}  // namespace malinit

#endif  // MALINIT_INIT_HPP
