#pragma once

#include "glimpsekit/layers.hpp"
#include "glimpsekit/tensor.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <string>

namespace glimpse {

/// Rescales every gradient by threshold/||g|| when the global L2 norm of all
/// gradients exceeds threshold. Returns the norm before clipping.
template <typename Scalar>
double clip_global_norm(ParamBundle<Scalar>& params, double threshold) {
  double sq = 0;
  for (const auto& p : params) {
    if (!p.grad.all_finite()) throw NumericError("clip_global_norm: non-finite gradient in " + p.name);
    sq += p.grad.vec().template cast<double>().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (norm > threshold) {
    const Scalar scale = Scalar(threshold / norm);
    for (auto& p : params) p.grad.vec() *= scale;
  }
  return norm;
}

template <typename Scalar>
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::map<std::string, Tensor<Scalar>> m, v;
};

/// One bias-corrected Adam update of every parameter from its gradient.
template <typename Scalar>
void adam_step(ParamBundle<Scalar>& params, AdamState<Scalar>& s) {
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, double(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, double(s.step));
  const Scalar b1 = Scalar(s.beta1), b2 = Scalar(s.beta2);
  const Scalar step_size = Scalar(s.lr / c1), eps = Scalar(s.epsilon);
  const Scalar inv_sqrt_c2 = Scalar(1.0 / std::sqrt(c2));
  for (auto& p : params) {
    auto [mit, m_new] = s.m.try_emplace(p.name, p.value.shape());
    auto [vit, v_new] = s.v.try_emplace(p.name, p.value.shape());
    if (mit->second.shape() != p.value.shape() || vit->second.shape() != p.value.shape())
      throw DimensionError("adam_step: moment shape mismatch for " + p.name);
    auto m = mit->second.vec().array();
    auto v = vit->second.vec().array();
    const auto g = p.grad.vec().array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    p.value.vec().array() -= step_size * m / (v.sqrt() * inv_sqrt_c2 + eps);
  }
}

/// Multiplies the learning rate by `factor` once the monitored loss has failed
/// to improve (relative `threshold`) for more than `patience` epochs.
struct PlateauSchedule {
  double lr = 1e-4;
  int patience = 3;
  double factor = 0.1;
  double threshold = 1e-4;
  double floor = 1e-7;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  double update(double loss) {
    if (!std::isfinite(loss)) throw NumericError("plateau schedule: non-finite loss");
    if (loss < best * (1.0 - threshold)) {
      best = loss;
      bad_epochs = 0;
    } else if (++bad_epochs > patience) {
      lr = std::max(lr * factor, floor);
      bad_epochs = 0;
    }
    return lr;
  }
};

}  // namespace glimpse
