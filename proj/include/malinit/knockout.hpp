#ifndef MALINIT_KNOCKOUT_HPP
#define MALINIT_KNOCKOUT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "malinit/nn.hpp"
#include "malinit/tensor.hpp"

namespace malinit {

struct KnockoutOptions {
  std::size_t free_layers = 2;  // leading weight matrices that are optimized
  std::size_t probe_count = 256;
  std::size_t iterations = 200;
  double step = 0.1;            // initial step, relative to each matrix norm
  bool resample_tail = true;    // replace later layers by fresh He draws
  std::uint64_t seed = 0;
  double min_relative_gain = 1e-6;
  std::size_t patience = 20;
};

struct KnockoutResult {
  Network net;                     // free layers optimized, surrogate tail
  std::vector<double> objective;   // value after every accepted step, starting with the initial one
  std::vector<double> norms_before, norms_after;
  std::size_t iterations = 0;
};

/// Total positive class output sum_j sum_c max(0, z_c(X_j)) over the probe batch.
inline double knockout_objective(const Network& net, std::span<const double> probes) {
  const auto z = forward_logits(net, probes);
  double j = 0.0;
  for (auto v : z) j += v > 0.0 ? v : 0.0;
  return j;
}

inline std::vector<double> uniform_probes(std::size_t count, std::size_t dim, Rng& rng) {
  std::vector<double> x(count * dim);
  for (auto& v : x) v = rng.uniform();
  return x;
}

namespace detail {

inline double norm_of(const std::vector<double>& v) { return frobenius_norm(v); }

inline void rescale_to(std::vector<double>& v, double target) {
  const double cur = norm_of(v);
  if (cur == 0.0) throw std::runtime_error("knockout: matrix collapsed to zero norm");
  const double f = target / cur;
  for (auto& x : v) x *= f;
}

}  // namespace detail

/**
 * Projected gradient descent on the free leading weight matrices, each kept
 * on the sphere of its initial Frobenius norm. A step that does not lower
 * the objective is retried at half the size; accepted steps grow it by 1.5.
 */
inline KnockoutResult optimize_knockout(const Network& start, const KnockoutOptions& opt) {
  if (opt.probe_count == 0) throw std::invalid_argument("knockout: probe batch must be nonempty");
  if (!(opt.step > 0.0)) throw std::invalid_argument("knockout: step must be positive");
  const std::size_t free = std::min(opt.free_layers, start.params().size());
  if (free == 0) throw std::invalid_argument("knockout: at least one free matrix is required");

  KnockoutResult res{start, {}, {}, {}, 0};
  Network& net = res.net;
  const Rng base(opt.seed);
  if (opt.resample_tail) {
    Rng tail_rng = base.split(1);
    for (std::size_t i = free; i < net.params().size(); ++i) {
      auto& p = net.params()[i];
      const auto layer = init_layer(net.spec().initializer, p.shape, tail_rng, i);
      p.w = layer.weights.values();
    }
  }
  for (std::size_t i = 0; i < free; ++i) {
    const double n0 = detail::norm_of(net.params()[i].w);
    if (n0 == 0.0) throw std::invalid_argument("knockout: zero-norm matrix " + std::to_string(i) + " cannot be projected");
    res.norms_before.push_back(n0);
  }
  Rng probe_rng = base.split(0);
  const auto probes = uniform_probes(opt.probe_count, net.input_size(), probe_rng);
  double j = knockout_objective(net, probes);
  res.objective.push_back(j);

  auto positive_logit_grad = [](std::span<const double> z, std::span<double> dz) {
    double s = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      dz[c] = z[c] > 0.0 ? 1.0 : 0.0;
      s += z[c] > 0.0 ? z[c] : 0.0;
    }
    return s;
  };

  double step = opt.step;
  for (std::size_t it = 0; it < opt.iterations && j > 0.0; ++it) {
    res.iterations = it + 1;
    const auto g = backward_custom(net, probes, positive_logit_grad).grads;
    double gnorm_total = 0.0;
    for (std::size_t i = 0; i < free; ++i) gnorm_total += detail::norm_of(g.dw[i]);
    if (gnorm_total == 0.0) break;

    bool accepted = false;
    while (step > 1e-12) {
      Network trial = net;
      for (std::size_t i = 0; i < free; ++i) {
        auto& w = trial.params()[i].w;
        const double gn = detail::norm_of(g.dw[i]);
        if (gn == 0.0) continue;
        const double scale = step * res.norms_before[i] / gn;
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= scale * g.dw[i][k];
        detail::rescale_to(w, res.norms_before[i]);
      }
      const double jt = knockout_objective(trial, probes);
      if (jt < j) {
        net = std::move(trial);
        j = jt;
        accepted = true;
        step *= 1.5;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    res.objective.push_back(j);
    const std::size_t k = res.objective.size();
    if (k > opt.patience) {
      const double past = res.objective[k - 1 - opt.patience];
      if (past - j < opt.min_relative_gain * past) break;
    }
  }
  for (std::size_t i = 0; i < free; ++i) res.norms_after.push_back(detail::norm_of(net.params()[i].w));
  return res;
}

/// Standalone problem: fresh He network with the given widths (input first).
inline KnockoutResult optimize_knockout(const std::vector<std::size_t>& widths, const KnockoutOptions& opt) {
  if (widths.size() < 2) throw std::invalid_argument("knockout: need an input width and at least one layer");
  const std::vector<std::size_t> layers(widths.begin() + 1, widths.end());
  const Network net(NetworkSpec::dense_stack(widths.front(), layers), Rng(opt.seed).split(2).next_u64());
  return optimize_knockout(net, opt);
}

/// Copies the optimized free matrices into `target`, leaving everything else as is.
inline Network apply_knockout(const Network& target, const KnockoutResult& res) {
  Network out = target;
  for (std::size_t i = 0; i < res.norms_after.size(); ++i) out.set_weights(i, res.net.weight_tensor(i));
  return out;
}

}  // namespace malinit

#endif  // MALINIT_KNOCKOUT_HPP
