#pragma once

#include "glimpsekit/stn.hpp"
#include "glimpsekit/tensor.hpp"

#include <array>
#include <cmath>
#include <span>
#include <vector>

namespace glimpse {

inline constexpr double kProbabilityFloor = 1e-12;

struct LossWeights {
  double alpha1 = 1.0;  // classification ("what")
  double alpha2 = 1.0;  // localization ("where")
  std::array<double, 6> beta{1.0, 0.5, 1.0, 0.5, 1.0, 1.0};
  /// The first read always uses the fixed identity transform, so its
  /// localization term is a constant; false drops that term.
  bool supervise_initial_read = true;
};

/// Per-image targets: one label and one ground-truth transform per object.
struct SupervisionTarget {
  std::vector<int> labels;
  std::vector<AffineParams<double>> gt_affine;
  std::array<bool, 6> active{true, true, true, true, true, true};
};

template <typename Scalar>
double classification_loss(std::span<const Scalar> y, int label) {
  if (label < 0 || label >= static_cast<int>(y.size()))
    throw std::out_of_range("classification_loss: label " + std::to_string(label) + " outside " +
                            std::to_string(y.size()) + " classes");
  return -std::log(std::max(double(y[static_cast<std::size_t>(label)]), kProbabilityFloor));
}

template <typename Scalar>
double localization_loss(const AffineParams<Scalar>& a, const AffineParams<double>& gt,
                         const std::array<double, 6>& beta, const std::array<bool, 6>& mask) {
  double sum = 0;
  for (std::size_t k = 0; k < 6; ++k)
    if (mask[k]) {
      const double diff = double(a[k]) - gt[k];
      sum += beta[k] * diff * diff;
    }
  return sum;
}

template <typename Scalar>
struct LossResult {
  double value = 0;             // batch mean
  std::vector<double> per_sample;
  std::vector<Tensor<Scalar>> d_ys;    // dL/dy per step, [B, classes]
  std::vector<Tensor<Scalar>> d_reads; // dL/d(read transform) per step, [B, 6]
};

/// Step layout of an image with S objects, N glimpses each, plus optional
/// terminal steps supervised only by the terminal class.
struct StepBudget {
  Index N = 1;
  Index S = 1;
  Index terminal_steps = 0;
  int terminal_class = -1;
  Index supervised() const { return N * S + terminal_steps; }
};

/// L = (1/N) sum_i sum_j (alpha1 L^y_ij + alpha2 L^A_ij), averaged over the
/// batch. Step i*N+j is supervised by object i's label and ground-truth
/// transform; the transform penalized is the one used for that step's read.
template <typename Scalar>
LossResult<Scalar> composite_loss(const std::vector<Tensor<Scalar>>& ys, const std::vector<Tensor<Scalar>>& reads,
                                  const std::vector<SupervisionTarget>& targets, const LossWeights& w,
                                  const StepBudget& budget) {
  const Index steps = budget.supervised();
  if (static_cast<Index>(ys.size()) < steps || static_cast<Index>(reads.size()) < steps)
    throw std::invalid_argument("composite_loss: need " + std::to_string(steps) + " steps, got " +
                                std::to_string(std::min(ys.size(), reads.size())));
  const Index B = static_cast<Index>(targets.size());
  if (B == 0) throw std::invalid_argument("composite_loss: empty batch");
  const Index C = ys[0].dim(1);
  for (const auto& t : targets)
    if (static_cast<Index>(t.labels.size()) != budget.S || static_cast<Index>(t.gt_affine.size()) != budget.S)
      throw std::invalid_argument("composite_loss: target has " + std::to_string(t.labels.size()) +
                                  " objects, expected " + std::to_string(budget.S));

  LossResult<Scalar> r;
  r.per_sample.assign(static_cast<std::size_t>(B), 0.0);
  for (std::size_t t = 0; t < ys.size(); ++t) {
    r.d_ys.emplace_back(Shape{B, C});
    r.d_reads.emplace_back(Shape{B, 6});
  }
  const double inv_n = 1.0 / double(budget.N), inv_b = 1.0 / double(B);
  for (Index b = 0; b < B; ++b) {
    const auto& tgt = targets[static_cast<std::size_t>(b)];
    double total = 0;
    for (Index s = 0; s < steps; ++s) {
      const auto ts = static_cast<std::size_t>(s);
      const bool terminal = s >= budget.N * budget.S;
      const auto obj = static_cast<std::size_t>(terminal ? 0 : s / budget.N);
      const int label = terminal ? budget.terminal_class : tgt.labels[obj];
      const Scalar* row = ys[ts].data() + b * C;
      const double ce = classification_loss(std::span<const Scalar>(row, static_cast<std::size_t>(C)), label);
      total += w.alpha1 * ce;
      const double p = double(row[label]);
      if (p > kProbabilityFloor) r.d_ys[ts][b * C + label] = Scalar(-w.alpha1 * inv_n * inv_b / p);
      if (terminal || (s == 0 && !w.supervise_initial_read)) continue;
      const auto a = affine_row(reads[ts], b);
      total += w.alpha2 * localization_loss(a, tgt.gt_affine[obj], w.beta, tgt.active);
      for (std::size_t k = 0; k < 6; ++k)
        if (tgt.active[k])
          r.d_reads[ts][b * 6 + static_cast<Index>(k)] =
              Scalar(w.alpha2 * inv_n * inv_b * 2.0 * w.beta[k] * (double(a[k]) - tgt.gt_affine[obj][k]));
    }
    r.per_sample[static_cast<std::size_t>(b)] = total * inv_n;
    r.value += total * inv_n * inv_b;
  }
  return r;
}

/// Argmax of the mean of N probability rows; ties go to the lowest class.
template <typename Scalar>
int aggregate_prediction(const std::vector<std::span<const Scalar>>& rows) {
  if (rows.empty()) throw std::invalid_argument("aggregate_prediction: no rows");
  const std::size_t C = rows[0].size();
  std::vector<double> mean(C, 0.0);
  for (const auto& r : rows) {
    if (r.size() != C) throw DimensionError("aggregate_prediction: ragged rows");
    for (std::size_t k = 0; k < C; ++k) mean[k] += double(r[k]);
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < C; ++k)
    if (mean[k] > mean[best]) best = k;
  return static_cast<int>(best);
}

}  // namespace glimpse
