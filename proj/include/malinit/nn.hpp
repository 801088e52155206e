#ifndef MALINIT_NN_HPP
#define MALINIT_NN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "malinit/data.hpp"
#include "malinit/init.hpp"
#include "malinit/tensor.hpp"

namespace malinit {

struct LayerSpec {
  enum class Kind { Dense, Conv, MaxPool, Flatten };
  Kind kind = Kind::Dense;
  std::size_t width = 0;  // Dense output width
  std::size_t filter_h = 3, filter_w = 3, filters = 0;
  std::size_t window = 2;

  static LayerSpec dense(std::size_t width) { return {Kind::Dense, width, 0, 0, 0, 0}; }
  static LayerSpec conv(std::size_t fh, std::size_t fw, std::size_t filters) { return {Kind::Conv, 0, fh, fw, filters, 0}; }
  static LayerSpec max_pool(std::size_t window) { return {Kind::MaxPool, 0, 0, 0, 0, window}; }
  static LayerSpec flatten() { return {Kind::Flatten, 0, 0, 0, 0, 0}; }

  bool has_params() const { return kind == Kind::Dense || kind == Kind::Conv; }
};

/**
 * Architecture description. Every Dense/Conv layer is followed by ReLU
 * except the last one, whose logits go through softmax. Conv layers use
 * stride 1 with "same" zero padding; max-pool uses stride = window.
 * Dense layers take their bias from `initializer.bias`, conv layers from
 * `conv_bias`.
 */
struct NetworkSpec {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  InitializerSpec initializer;
  BiasPolicy conv_bias = BiasPolicy::zero();
  double dropout_rate = 0.0;

  /// Fully connected stack: input -> widths[0] -> ... -> widths.back() (classes).
  static NetworkSpec dense_stack(std::size_t input, const std::vector<std::size_t>& widths, InitializerSpec init = {}) {
    NetworkSpec s;
    s.input_shape = {input};
    for (auto w : widths) s.layers.push_back(LayerSpec::dense(w));
    s.initializer = init;
    return s;
  }
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, const std::string& what)
      : std::runtime_error("diverged in epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

/// Trainable weights and bias of one Dense/Conv layer plus optimizer moments.
struct ParamBlock {
  Shape shape;  // Dense: [out, in]; Conv: [fh, fw, c, f]
  std::vector<double> w, b;
  std::vector<double> mw, vw, mb, vb;
};

struct Gradients {
  std::vector<std::vector<double>> dw, db;
};

class Network {
 public:
  struct Stage {
    LayerSpec layer;
    Shape in_shape, out_shape;
    std::size_t param = 0;  // index into params() when layer.has_params()
    bool relu = false;
  };

  Network() = default;

  /// Resolves shapes and initializes parameters in layer order from `seed`.
  Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    plan();
    Rng rng(seed);
    for (auto& st : stages_) {
      if (!st.layer.has_params()) continue;
      auto& p = params_[st.param];
      const InitializerSpec init = st.layer.kind == LayerSpec::Kind::Dense
                                       ? spec_.initializer
                                       : InitializerSpec{spec_.initializer.kind, spec_.conv_bias};
      auto layer = init_layer(init, p.shape, rng, st.param);
      p.w = layer.weights.values();
      p.b = std::move(layer.bias);
    }
  }

  /// Shapes only; all parameters zero.
  static Network zeros(NetworkSpec spec) {
    Network net;
    net.spec_ = std::move(spec);
    net.plan();
    return net;
  }

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<Stage>& stages() const { return stages_; }
  std::vector<ParamBlock>& params() { return params_; }
  const std::vector<ParamBlock>& params() const { return params_; }
  std::size_t input_size() const { return shape_size(spec_.input_shape); }
  std::size_t classes() const { return shape_size(stages_.back().out_shape); }

  WeightTensor weight_tensor(std::size_t i) const { return WeightTensor(params_.at(i).shape, params_[i].w, i); }

  std::vector<WeightTensor> weight_tensors() const {
    std::vector<WeightTensor> out;
    for (std::size_t i = 0; i < params_.size(); ++i) out.push_back(weight_tensor(i));
    return out;
  }

  void set_weights(std::size_t i, const WeightTensor& w) {
    auto& p = params_.at(i);
    if (w.shape() != p.shape)
      throw std::invalid_argument("set_weights: shape " + shape_string(w.shape()) + " != " + shape_string(p.shape));
    p.w = w.values();
  }

  void set_weights(const std::vector<WeightTensor>& ws) {
    if (ws.size() != params_.size()) throw std::invalid_argument("set_weights: tensor count mismatch");
    for (std::size_t i = 0; i < ws.size(); ++i) set_weights(i, ws[i]);
  }

  void reset_optimizer_state() {
    for (auto& p : params_) {
      p.mw.assign(p.w.size(), 0.0);
      p.vw.assign(p.w.size(), 0.0);
      p.mb.assign(p.b.size(), 0.0);
      p.vb.assign(p.b.size(), 0.0);
    }
    adam_steps_ = 0;
  }

  std::size_t& adam_steps() { return adam_steps_; }

  bool all_finite() const {
    for (const auto& p : params_) {
      for (auto v : p.w)
        if (!std::isfinite(v)) return false;
      for (auto v : p.b)
        if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  void plan() {
    if (spec_.input_shape.empty()) throw std::invalid_argument("network: empty input shape");
    if (spec_.layers.empty()) throw std::invalid_argument("network: no layers");
    if (!(spec_.dropout_rate >= 0.0 && spec_.dropout_rate < 1.0))
      throw std::invalid_argument("network: dropout rate must lie in [0, 1)");
    Shape cur = spec_.input_shape;
    std::size_t last_param_stage = 0;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& L = spec_.layers[i];
      Stage st{L, cur, {}, 0, false};
      switch (L.kind) {
        case LayerSpec::Kind::Dense: {
          if (L.width == 0) throw std::invalid_argument("network: dense width must be positive");
          const std::size_t in = shape_size(cur);
          st.out_shape = {L.width};
          st.param = params_.size();
          params_.push_back(make_block({L.width, in}, L.width));
          last_param_stage = i;
          break;
        }
        case LayerSpec::Kind::Conv: {
          if (cur.size() != 3) throw std::invalid_argument("network: conv layer needs [H, W, C] input");
          if (L.filters == 0 || L.filter_h == 0 || L.filter_w == 0)
            throw std::invalid_argument("network: conv sizes must be positive");
          st.out_shape = {cur[0], cur[1], L.filters};
          st.param = params_.size();
          const Shape ws = {L.filter_h, L.filter_w, cur[2], L.filters};
          params_.push_back(make_block(ws, L.filters));
          last_param_stage = i;
          break;
        }
        case LayerSpec::Kind::MaxPool: {
          if (cur.size() != 3) throw std::invalid_argument("network: max-pool needs [H, W, C] input");
          if (L.window == 0 || cur[0] < L.window || cur[1] < L.window)
            throw std::invalid_argument("network: max-pool window does not fit");
          st.out_shape = {cur[0] / L.window, cur[1] / L.window, cur[2]};
          break;
        }
        case LayerSpec::Kind::Flatten: st.out_shape = {shape_size(cur)}; break;
      }
      cur = st.out_shape;
      stages_.push_back(st);
    }
    if (spec_.layers.back().kind != LayerSpec::Kind::Dense)
      throw std::invalid_argument("network: last layer must be Dense (class logits)");
    for (std::size_t i = 0; i < stages_.size(); ++i)
      stages_[i].relu = stages_[i].layer.has_params() && i != last_param_stage;
    reset_optimizer_state();
  }

  static ParamBlock make_block(Shape shape, std::size_t bias) {
    ParamBlock p;
    p.w.assign(shape_size(shape), 0.0);
    p.b.assign(bias, 0.0);
    p.shape = std::move(shape);
    return p;
  }

  NetworkSpec spec_;
  std::vector<Stage> stages_;
  std::vector<ParamBlock> params_;
  std::size_t adam_steps_ = 0;
};

/// Per-Dense-layer connection masks (1 = kept) used for one training minibatch.
struct DropMasks {
  double rate = 0.0;
  std::vector<std::vector<std::uint8_t>> keep;  // indexed by param block; empty for conv
};

inline DropMasks sample_drop_masks(const Network& net, Rng& rng) {
  DropMasks m;
  m.rate = net.spec().dropout_rate;
  m.keep.resize(net.params().size());
  if (m.rate <= 0.0) return m;
  for (const auto& st : net.stages()) {
    if (st.layer.kind != LayerSpec::Kind::Dense) continue;
    auto& k = m.keep[st.param];
    k.resize(net.params()[st.param].w.size());
    for (auto& v : k) v = rng.bernoulli(m.rate) ? 0 : 1;
  }
  return m;
}

namespace detail {

/// Activations of one sample through the network, kept for backprop.
struct Trace {
  std::vector<std::vector<double>> pre;   // per stage: output before ReLU (param stages)
  std::vector<std::vector<double>> post;  // per stage: stage output
  std::vector<std::vector<std::size_t>> argmax;
};

inline double effective_weight(const ParamBlock& p, const DropMasks* masks, std::size_t param, std::size_t k) {
  if (!masks || masks->rate <= 0.0 || masks->keep[param].empty()) return p.w[k];
  return masks->keep[param][k] ? p.w[k] / (1.0 - masks->rate) : 0.0;
}

inline void forward_stage(const Network& net, std::size_t s, std::span<const double> in, Trace& tr,
                          const DropMasks* masks) {
  const auto& st = net.stages()[s];
  auto& pre = tr.pre[s];
  auto& out = tr.post[s];
  switch (st.layer.kind) {
    case LayerSpec::Kind::Dense: {
      const auto& p = net.params()[st.param];
      const std::size_t rows = p.shape[0], cols = p.shape[1];
      pre.assign(rows, 0.0);
      const bool dropping = masks && masks->rate > 0.0 && !masks->keep[st.param].empty();
      for (std::size_t i = 0; i < rows; ++i) {
        double acc = p.b[i];
        const double* wr = p.w.data() + i * cols;
        if (dropping) {
          for (std::size_t j = 0; j < cols; ++j) acc += effective_weight(p, masks, st.param, i * cols + j) * in[j];
        } else {
          for (std::size_t j = 0; j < cols; ++j) acc += wr[j] * in[j];
        }
        pre[i] = acc;
      }
      break;
    }
    case LayerSpec::Kind::Conv: {
      const auto& p = net.params()[st.param];
      const std::size_t H = st.in_shape[0], W = st.in_shape[1], C = st.in_shape[2];
      const std::size_t fh = p.shape[0], fw = p.shape[1], F = p.shape[3];
      const long pt = static_cast<long>((fh - 1) / 2), pl = static_cast<long>((fw - 1) / 2);
      pre.assign(H * W * F, 0.0);
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          double* o = pre.data() + (y * W + x) * F;
          for (std::size_t f = 0; f < F; ++f) o[f] = p.b[f];
          for (std::size_t dy = 0; dy < fh; ++dy) {
            const long yy = static_cast<long>(y + dy) - pt;
            if (yy < 0 || yy >= static_cast<long>(H)) continue;
            for (std::size_t dx = 0; dx < fw; ++dx) {
              const long xx = static_cast<long>(x + dx) - pl;
              if (xx < 0 || xx >= static_cast<long>(W)) continue;
              const double* iv = in.data() + (static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)) * C;
              const double* wv = p.w.data() + (dy * fw + dx) * C * F;
              for (std::size_t c = 0; c < C; ++c) {
                const double a = iv[c];
                if (a == 0.0) continue;
                const double* wc = wv + c * F;
                for (std::size_t f = 0; f < F; ++f) o[f] += a * wc[f];
              }
            }
          }
        }
      break;
    }
    case LayerSpec::Kind::MaxPool: {
      const std::size_t H = st.in_shape[0], W = st.in_shape[1], C = st.in_shape[2];
      const std::size_t k = st.layer.window, Ho = st.out_shape[0], Wo = st.out_shape[1];
      out.assign(Ho * Wo * C, 0.0);
      auto& am = tr.argmax[s];
      am.assign(out.size(), 0);
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t x = 0; x < Wo; ++x)
          for (std::size_t c = 0; c < C; ++c) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t where = 0;
            for (std::size_t dy = 0; dy < k; ++dy)
              for (std::size_t dx = 0; dx < k; ++dx) {
                const std::size_t idx = ((y * k + dy) * W + (x * k + dx)) * C + c;
                if (in[idx] > best) {
                  best = in[idx];
                  where = idx;
                }
              }
            out[(y * Wo + x) * C + c] = best;
            am[(y * Wo + x) * C + c] = where;
          }
      (void)H;
      return;
    }
    case LayerSpec::Kind::Flatten: out.assign(in.begin(), in.end()); return;
  }
  out = pre;
  if (st.relu)
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
}

inline void forward_trace(const Network& net, std::span<const double> x, Trace& tr, const DropMasks* masks) {
  const auto n = net.stages().size();
  tr.pre.resize(n);
  tr.post.resize(n);
  tr.argmax.resize(n);
  std::span<const double> cur = x;
  for (std::size_t s = 0; s < n; ++s) {
    forward_stage(net, s, cur, tr, masks);
    cur = tr.post[s];
  }
}

inline void softmax_inplace(std::span<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (auto& v : z) sum += (v = std::exp(v - mx));
  for (auto& v : z) v /= sum;
}

/// Accumulates parameter gradients given dL/d(logits) of one sample.
inline void backward_trace(const Network& net, std::span<const double> x, const Trace& tr,
                           std::vector<double> delta, Gradients& g, const DropMasks* masks) {
  for (std::size_t s = net.stages().size(); s-- > 0;) {
    const auto& st = net.stages()[s];
    std::span<const double> in = s == 0 ? x : std::span<const double>(tr.post[s - 1]);
    switch (st.layer.kind) {
      case LayerSpec::Kind::Dense: {
        if (st.relu)
          for (std::size_t i = 0; i < delta.size(); ++i)
            if (!(tr.pre[s][i] > 0.0)) delta[i] = 0.0;
        const auto& p = net.params()[st.param];
        const std::size_t rows = p.shape[0], cols = p.shape[1];
        auto& dw = g.dw[st.param];
        auto& db = g.db[st.param];
        std::vector<double> din(s == 0 ? 0 : cols, 0.0);
        const bool dropping = masks && masks->rate > 0.0 && !masks->keep[st.param].empty();
        const double keep_scale = dropping ? 1.0 / (1.0 - masks->rate) : 1.0;
        for (std::size_t i = 0; i < rows; ++i) {
          const double d = delta[i];
          if (d == 0.0) continue;
          db[i] += d;
          double* dwr = dw.data() + i * cols;
          const double* wr = p.w.data() + i * cols;
          if (dropping) {
            const auto* keep = masks->keep[st.param].data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) {
              if (!keep[j]) continue;
              dwr[j] += d * in[j] * keep_scale;
              if (!din.empty()) din[j] += d * wr[j] * keep_scale;
            }
          } else {
            for (std::size_t j = 0; j < cols; ++j) dwr[j] += d * in[j];
            if (!din.empty())
              for (std::size_t j = 0; j < cols; ++j) din[j] += d * wr[j];
          }
        }
        delta = std::move(din);
        break;
      }
      case LayerSpec::Kind::Conv: {
        if (st.relu)
          for (std::size_t i = 0; i < delta.size(); ++i)
            if (!(tr.pre[s][i] > 0.0)) delta[i] = 0.0;
        const auto& p = net.params()[st.param];
        const std::size_t H = st.in_shape[0], W = st.in_shape[1], C = st.in_shape[2];
        const std::size_t fh = p.shape[0], fw = p.shape[1], F = p.shape[3];
        const long pt = static_cast<long>((fh - 1) / 2), pl = static_cast<long>((fw - 1) / 2);
        auto& dw = g.dw[st.param];
        auto& db = g.db[st.param];
        std::vector<double> din(s == 0 ? 0 : H * W * C, 0.0);
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x0 = 0; x0 < W; ++x0) {
            const double* dv = delta.data() + (y * W + x0) * F;
            bool any = false;
            for (std::size_t f = 0; f < F; ++f) {
              db[f] += dv[f];
              any = any || dv[f] != 0.0;
            }
            if (!any) continue;
            for (std::size_t dy = 0; dy < fh; ++dy) {
              const long yy = static_cast<long>(y + dy) - pt;
              if (yy < 0 || yy >= static_cast<long>(H)) continue;
              for (std::size_t dx = 0; dx < fw; ++dx) {
                const long xx = static_cast<long>(x0 + dx) - pl;
                if (xx < 0 || xx >= static_cast<long>(W)) continue;
                const std::size_t ibase = (static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)) * C;
                const std::size_t wbase = (dy * fw + dx) * C * F;
                for (std::size_t c = 0; c < C; ++c) {
                  const double a = in[ibase + c];
                  double* dwc = dw.data() + wbase + c * F;
                  const double* wc = p.w.data() + wbase + c * F;
                  double acc = 0.0;
                  for (std::size_t f = 0; f < F; ++f) {
                    dwc[f] += a * dv[f];
                    acc += wc[f] * dv[f];
                  }
                  if (!din.empty()) din[ibase + c] += acc;
                }
              }
            }
          }
        delta = std::move(din);
        break;
      }
      case LayerSpec::Kind::MaxPool: {
        std::vector<double> din(shape_size(st.in_shape), 0.0);
        const auto& am = tr.argmax[s];
        for (std::size_t i = 0; i < delta.size(); ++i) din[am[i]] += delta[i];
        delta = std::move(din);
        break;
      }
      case LayerSpec::Kind::Flatten: break;
    }
    if (delta.empty()) break;
  }
}

}  // namespace detail

inline Gradients zero_gradients(const Network& net) {
  Gradients g;
  for (const auto& p : net.params()) {
    g.dw.emplace_back(p.w.size(), 0.0);
    g.db.emplace_back(p.b.size(), 0.0);
  }
  return g;
}

inline std::size_t batch_count(const Network& net, std::span<const double> inputs) {
  const std::size_t d = net.input_size();
  if (inputs.empty() || inputs.size() % d != 0)
    throw std::invalid_argument("network: input size " + std::to_string(inputs.size()) +
                                " is not a multiple of sample size " + std::to_string(d));
  return inputs.size() / d;
}

/// Raw class logits, one row per sample.
inline std::vector<double> forward_logits(const Network& net, std::span<const double> inputs) {
  const std::size_t n = batch_count(net, inputs), d = net.input_size(), k = net.classes();
  std::vector<double> out(n * k);
  detail::Trace tr;
  for (std::size_t i = 0; i < n; ++i) {
    detail::forward_trace(net, inputs.subspan(i * d, d), tr, nullptr);
    std::copy(tr.post.back().begin(), tr.post.back().end(), out.begin() + static_cast<std::ptrdiff_t>(i * k));
  }
  return out;
}

/// Class probabilities (softmax of the logits), one row per sample.
inline std::vector<double> forward(const Network& net, std::span<const double> inputs) {
  auto out = forward_logits(net, inputs);
  const std::size_t k = net.classes();
  for (std::size_t i = 0; i < out.size(); i += k) detail::softmax_inplace(std::span<double>(out).subspan(i, k));
  return out;
}

/// Post-activation outputs of every stage for one sample.
inline std::vector<std::vector<double>> stage_outputs(const Network& net, std::span<const double> x) {
  if (x.size() != net.input_size()) throw std::invalid_argument("stage_outputs: input size mismatch");
  detail::Trace tr;
  detail::forward_trace(net, x, tr, nullptr);
  return tr.post;
}

struct LossAndGradients {
  double loss = 0.0;
  Gradients grads;
};

/**
 * Gradient of a custom objective. `output_grad(logits, dlogits)` receives one
 * sample's logits, writes dJ/dlogits and returns that sample's objective.
 * Objectives and gradients are summed over the batch (not averaged).
 */
template <typename OutputGrad>
LossAndGradients backward_custom(const Network& net, std::span<const double> inputs, OutputGrad&& output_grad,
                                 const DropMasks* masks = nullptr) {
  const std::size_t n = batch_count(net, inputs), d = net.input_size(), k = net.classes();
  LossAndGradients res{0.0, zero_gradients(net)};
  detail::Trace tr;
  std::vector<double> delta(k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = inputs.subspan(i * d, d);
    detail::forward_trace(net, x, tr, masks);
    res.loss += output_grad(std::span<const double>(tr.post.back()), std::span<double>(delta));
    detail::backward_trace(net, x, tr, delta, res.grads, masks);
  }
  return res;
}

/// Mean softmax cross-entropy over the batch and its gradient.
inline LossAndGradients backward(const Network& net, std::span<const double> inputs, std::span<const int> labels,
                                 const DropMasks* masks = nullptr) {
  const std::size_t n = batch_count(net, inputs), k = net.classes();
  if (labels.size() != n) throw std::invalid_argument("backward: label count mismatch");
  for (auto l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= k) throw std::invalid_argument("backward: label out of range");
  std::size_t i = 0;
  const double inv_n = 1.0 / static_cast<double>(n);
  auto res = backward_custom(
      net, inputs,
      [&](std::span<const double> z, std::span<double> dz) {
        std::copy(z.begin(), z.end(), dz.begin());
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (auto v : z) sum += std::exp(v - mx);
        const double log_sum = mx + std::log(sum);
        const int y = labels[i++];
        for (std::size_t c = 0; c < k; ++c) dz[c] = (std::exp(z[c] - log_sum) - (static_cast<int>(c) == y)) * inv_n;
        return (log_sum - z[static_cast<std::size_t>(y)]) * inv_n;
      },
      masks);
  return res;
}

struct Optimizer {
  enum class Kind { SGD, Adam } kind = Kind::Adam;
  double lr = 0.001;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  static Optimizer sgd(double lr) { return {Kind::SGD, lr}; }
  static Optimizer adam(double lr = 0.001) { return {Kind::Adam, lr}; }
};

inline void apply_gradients(Network& net, const Gradients& g, const Optimizer& opt) {
  if (opt.kind == Optimizer::Kind::SGD) {
    for (std::size_t i = 0; i < net.params().size(); ++i) {
      auto& p = net.params()[i];
      for (std::size_t k = 0; k < p.w.size(); ++k) p.w[k] -= opt.lr * g.dw[i][k];
      for (std::size_t k = 0; k < p.b.size(); ++k) p.b[k] -= opt.lr * g.db[i][k];
    }
    return;
  }
  const auto t = static_cast<double>(++net.adam_steps());
  const double c1 = opt.beta1 > 0.0 ? 1.0 - std::pow(opt.beta1, t) : 1.0;
  const double c2 = opt.beta2 > 0.0 ? 1.0 - std::pow(opt.beta2, t) : 1.0;
  auto update = [&](std::vector<double>& w, std::vector<double>& m, std::vector<double>& v, const std::vector<double>& d) {
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * d[k];
      v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * d[k] * d[k];
      w[k] -= opt.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + opt.eps);
    }
  };
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    auto& p = net.params()[i];
    update(p.w, p.mw, p.vw, g.dw[i]);
    update(p.b, p.mb, p.vb, g.db[i]);
  }
}

struct TrainConfig {
  Optimizer optimizer = Optimizer::adam();
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(optimizer.lr >= 0.0) || !std::isfinite(optimizer.lr))
      throw std::invalid_argument("train: learning rate must be nonnegative");
    if (epochs == 0) throw std::invalid_argument("train: epochs must be positive");
    if (batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  }
};

struct TrainingTrace {
  std::vector<double> train_loss, test_loss, test_accuracy;
  double best_accuracy = 0.0;
  std::size_t best_epoch = 0;  // 1-based; first epoch reaching best_accuracy

  /// First epoch whose test accuracy reaches `fraction` of the best accuracy.
  std::size_t epochs_to_fraction_of_best(double fraction) const {
    for (std::size_t e = 0; e < test_accuracy.size(); ++e)
      if (test_accuracy[e] >= fraction * best_accuracy) return e + 1;
    return test_accuracy.size();
  }
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

inline std::vector<double> gather_features(const Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<double> x;
  x.reserve(idx.size() * ds.dim);
  for (auto i : idx) {
    auto s = ds.sample(i);
    x.insert(x.end(), s.begin(), s.end());
  }
  return x;
}

inline Evaluation evaluate(const Network& net, const Dataset& ds, std::span<const std::size_t> idx) {
  Evaluation ev;
  if (idx.empty()) return ev;
  const std::size_t k = net.classes();
  std::size_t correct = 0;
  constexpr std::size_t chunk = 512;
  for (std::size_t start = 0; start < idx.size(); start += chunk) {
    const auto part = idx.subspan(start, std::min(chunk, idx.size() - start));
    const auto probs = forward(net, gather_features(ds, part));
    for (std::size_t i = 0; i < part.size(); ++i) {
      const double* p = probs.data() + i * k;
      const auto y = static_cast<std::size_t>(ds.labels[part[i]]);
      ev.loss -= std::log(std::max(p[y], 1e-300));
      if (static_cast<std::size_t>(std::max_element(p, p + k) - p) == y) ++correct;
    }
  }
  ev.loss /= static_cast<double>(idx.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(idx.size());
  return ev;
}

/**
 * Minibatch training with per-epoch test evaluation. The training order of
 * epoch e is drawn from Rng(seed).split(e); dropout masks from split(1e6 + e).
 */
inline TrainingTrace train(Network& net, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (ds.train_idx.empty()) throw std::invalid_argument("train: empty training split");
  if (ds.dim != net.input_size()) throw std::invalid_argument("train: dataset dimension does not match the network");
  if (ds.classes > net.classes()) throw std::invalid_argument("train: more classes than network outputs");
  TrainingTrace trace;
  const Rng base(cfg.seed);
  std::vector<std::size_t> order = ds.train_idx;
  std::vector<int> labels;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order = ds.train_idx;
    Rng order_rng = base.split(epoch);
    order_rng.shuffle(order);
    Rng drop_rng = base.split(1000000 + epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto part = std::span<const std::size_t>(order).subspan(start, std::min(cfg.batch_size, order.size() - start));
      const auto x = gather_features(ds, part);
      labels.clear();
      for (auto i : part) labels.push_back(ds.labels[i]);
      DropMasks masks;
      const bool dropping = net.spec().dropout_rate > 0.0;
      if (dropping) masks = sample_drop_masks(net, drop_rng);
      auto lg = backward(net, x, labels, dropping ? &masks : nullptr);
      if (!std::isfinite(lg.loss)) throw DivergenceError(epoch, "non-finite training loss");
      loss_sum += lg.loss * static_cast<double>(part.size());
      apply_gradients(net, lg.grads, cfg.optimizer);
      if (!net.all_finite()) throw DivergenceError(epoch, "non-finite parameter after update");
    }
    trace.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
    const auto ev = evaluate(net, ds, ds.test_idx.empty() ? std::span<const std::size_t>(ds.train_idx)
                                                          : std::span<const std::size_t>(ds.test_idx));
    trace.test_loss.push_back(ev.loss);
    trace.test_accuracy.push_back(ev.accuracy);
    if (ev.accuracy > trace.best_accuracy || trace.best_epoch == 0) {
      trace.best_accuracy = ev.accuracy;
      trace.best_epoch = epoch;
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------
// JSON description and checkpoints.

namespace detail {

inline void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& ctx) {
  if (!j.is_object()) throw std::invalid_argument(ctx + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw std::invalid_argument(ctx + ": unknown key '" + it.key() + "'");
  }
}

inline nlohmann::json bias_to_json(const BiasPolicy& b) {
  if (b.kind == BiasPolicy::Kind::Zero) return "zero";
  return b.value;
}

inline BiasPolicy bias_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "zero") return BiasPolicy::zero();
    throw std::invalid_argument("bias: expected \"zero\" or a number");
  }
  return BiasPolicy::constant(j.get<double>());
}

}  // namespace detail

inline nlohmann::json layer_to_json(const LayerSpec& l) {
  switch (l.kind) {
    case LayerSpec::Kind::Dense: return {{"type", "dense"}, {"width", l.width}};
    case LayerSpec::Kind::Conv:
      return {{"type", "conv"}, {"filter_h", l.filter_h}, {"filter_w", l.filter_w}, {"filters", l.filters}};
    case LayerSpec::Kind::MaxPool: return {{"type", "maxpool"}, {"window", l.window}};
    case LayerSpec::Kind::Flatten: return {{"type", "flatten"}};
  }
  return {};
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "dense") {
    detail::require_keys(j, {"type", "width"}, "dense layer");
    return LayerSpec::dense(j.at("width").get<std::size_t>());
  }
  if (type == "conv") {
    detail::require_keys(j, {"type", "filter_h", "filter_w", "filters"}, "conv layer");
    return LayerSpec::conv(j.value("filter_h", std::size_t{3}), j.value("filter_w", std::size_t{3}),
                           j.at("filters").get<std::size_t>());
  }
  if (type == "maxpool") {
    detail::require_keys(j, {"type", "window"}, "maxpool layer");
    return LayerSpec::max_pool(j.value("window", std::size_t{2}));
  }
  if (type == "flatten") {
    detail::require_keys(j, {"type"}, "flatten layer");
    return LayerSpec::flatten();
  }
  throw std::invalid_argument("unknown layer type '" + type + "'");
}

inline nlohmann::json spec_to_json(const NetworkSpec& s) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : s.layers) layers.push_back(layer_to_json(l));
  return {{"input_shape", s.input_shape},
          {"layers", layers},
          {"initializer", to_string(s.initializer.kind)},
          {"bias", detail::bias_to_json(s.initializer.bias)},
          {"conv_bias", detail::bias_to_json(s.conv_bias)},
          {"dropout", s.dropout_rate}};
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  detail::require_keys(j, {"input_shape", "layers", "initializer", "bias", "conv_bias", "dropout"}, "network");
  NetworkSpec s;
  s.input_shape = j.at("input_shape").get<Shape>();
  for (const auto& l : j.at("layers")) s.layers.push_back(layer_from_json(l));
  if (j.contains("initializer")) s.initializer.kind = parse_init_kind(j["initializer"].get<std::string>());
  if (j.contains("bias")) s.initializer.bias = detail::bias_from_json(j["bias"]);
  if (j.contains("conv_bias")) s.conv_bias = detail::bias_from_json(j["conv_bias"]);
  s.dropout_rate = j.value("dropout", 0.0);
  return s;
}

/**
 * Checkpoint directory: manifest.json (spec, epoch, metrics) plus one MLNT
 * container per parameter: param_<i>_w.bin and param_<i>_b.bin.
 */
inline void save_checkpoint(const Network& net, const std::string& dir, const nlohmann::json& metrics = {},
                            std::size_t epoch = 0) {
  std::filesystem::create_directories(dir);
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    const auto& p = net.params()[i];
    const std::string wn = "param_" + std::to_string(i) + "_w.bin", bn = "param_" + std::to_string(i) + "_b.bin";
    save_tensor(WeightTensor(p.shape, p.w, i), dir + "/" + wn, {{"role", "weight"}});
    save_tensor(WeightTensor({p.b.size()}, p.b, i), dir + "/" + bn, {{"role", "bias"}});
    params.push_back({{"weights", wn}, {"bias", bn}, {"shape", p.shape}});
  }
  nlohmann::json manifest = {{"format", "malinit-checkpoint"},
                             {"version", 1},
                             {"spec", spec_to_json(net.spec())},
                             {"epoch", epoch},
                             {"metrics", metrics.is_null() ? nlohmann::json::object() : metrics},
                             {"params", params}};
  std::ofstream out(dir + "/manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + dir + "/manifest.json");
  out << manifest.dump(2) << "\n";
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

inline Network load_checkpoint(const std::string& dir) {
  const auto manifest = read_json_file(dir + "/manifest.json");
  Network net = Network::zeros(spec_from_json(manifest.at("spec")));
  const auto& params = manifest.at("params");
  if (params.size() != net.params().size()) throw std::runtime_error(dir + ": parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto w = load_tensor(dir + "/" + params[i].at("weights").get<std::string>());
    const auto b = load_tensor(dir + "/" + params[i].at("bias").get<std::string>());
    net.set_weights(i, w);
    if (b.size() != net.params()[i].b.size()) throw std::runtime_error(dir + ": bias size mismatch");
    net.params()[i].b = b.values();
  }
  return net;
}

}  // namespace malinit

#endif  // MALINIT_NN_HPP
