#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "acnet/ops.hpp"

namespace acnet {

struct GradCheckOptions {
  double step = 1e-5;
  double abs_floor = 1e-8;
  // 0 checks every coordinate; otherwise a seeded random subset per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0x5eed;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  std::string worst;
};

/// Compares reverse-mode gradients of a scalar reduction of `f()` against
/// central finite differences at double precision.
///
/// The output of `f` is reduced with a fixed pseudo-random weighting (all
/// weights in [0.5, 1.5]) instead of a plain sum, so that operators whose
/// plain sum is constant (softmax, normalization) still get a non-trivial
/// check. Relative error is |a - n| / max(|a|, |n|, abs_floor).
template <class F>
GradCheckResult grad_check(F&& f, std::vector<Tensor<double>> wrt, const GradCheckOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed);
  Tensor<double> y0 = f();
  std::uniform_real_distribution<double> wdist(0.5, 1.5);
  std::vector<double> weights(y0.numel());
  for (auto& w : weights) w = wdist(rng);

  auto objective = [&]() {
    Tensor<double> y = f();
    if (y.numel() != weights.size()) throw NumericError("grad_check: output size changed between evaluations");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) acc += y.data()[i] * weights[i];
    if (!std::isfinite(acc)) throw NumericError("grad_check: non-finite objective");
    return acc;
  };

  for (auto& t : wrt) {
    if (!t.requires_grad()) throw InvalidInput("grad_check: tensor does not require grad");
    t.zero_grad();
  }
  Tensor<double> loss = weighted_sum(f(), weights);
  loss.backward();

  GradCheckResult result;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    Tensor<double>& t = wrt[ti];
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (opt.max_coords_per_tensor != 0 && coords.size() > opt.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords_per_tensor);
    }
    for (std::size_t i : coords) {
      if (!std::isfinite(analytic[i])) throw NumericError("grad_check: non-finite analytic gradient");
      double& v = t.values()[i];
      const double saved = v;
      v = saved + opt.step;
      const double fp = objective();
      v = saved - opt.step;
      const double fm = objective();
      v = saved;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opt.abs_floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++result.coords;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = "tensor " + std::to_string(ti) + " coord " + std::to_string(i) + ": analytic " +
                       std::to_string(analytic[i]) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return result;
}

}  // namespace acnet
