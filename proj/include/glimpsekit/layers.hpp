#pragma once

#include "glimpsekit/tensor.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace glimpse {

// ---------------------------------------------------------------------------
// Parameter bundle
// ---------------------------------------------------------------------------

enum class Init {
  uniform,   // U[-0.01, 0.01]: convolutional and recurrent weights
  gaussian,  // N(0, variance 0.001): fully connected weights
  zeros,
  ones,
  custom,    // values supplied at declaration
};

inline constexpr double kUniformInitRange = 0.01;
inline constexpr double kGaussianInitVariance = 0.001;

template <typename Scalar>
struct Param {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  Init init = Init::zeros;
  std::vector<double> custom;
};

/// Named learnable tensors in declaration order, each with a gradient slot of
/// the same shape.
template <typename Scalar>
class ParamBundle {
 public:
  Param<Scalar>& add(std::string name, Shape shape, Init init, std::vector<double> custom = {}) {
    if (index_.count(name)) throw std::invalid_argument("param bundle: duplicate name " + name);
    index_[name] = params_.size();
    Param<Scalar> p{std::move(name), Tensor<Scalar>(shape), Tensor<Scalar>(shape), init, std::move(custom)};
    if (init == Init::custom && static_cast<Index>(p.custom.size()) != p.value.size())
      throw DimensionError("param bundle: custom init for " + p.name + " has wrong length");
    params_.push_back(std::move(p));
    return params_.back();
  }

  Param<Scalar>& operator[](const std::string& name) { return params_.at(lookup(name)); }
  const Param<Scalar>& operator[](const std::string& name) const { return params_.at(lookup(name)); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<Scalar>& value(const std::string& name) { return (*this)[name].value; }
  const Tensor<Scalar>& value(const std::string& name) const { return (*this)[name].value; }
  Tensor<Scalar>& grad(const std::string& name) { return (*this)[name].grad; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t count() const { return params_.size(); }

  void zero_grads() {
    for (auto& p : params_) p.grad.set_zero();
  }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  /// Fills every parameter from its init rule. A pure function of the
  /// declaration list and the seed.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(-kUniformInitRange, kUniformInitRange);
    std::normal_distribution<double> gaussian(0.0, std::sqrt(kGaussianInitVariance));
    for (auto& p : params_) {
      auto& v = p.value.vec();
      switch (p.init) {
        case Init::uniform:
          for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(uniform(rng));
          break;
        case Init::gaussian:
          for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(gaussian(rng));
          break;
        case Init::zeros: v.setZero(); break;
        case Init::ones: v.setOnes(); break;
        case Init::custom:
          for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(p.custom[static_cast<std::size_t>(i)]);
          break;
      }
      p.grad.set_zero();
    }
  }

  template <typename Other>
  ParamBundle<Other> cast() const {
    ParamBundle<Other> out;
    for (const auto& p : params_) {
      auto& q = out.add(p.name, p.value.shape(), p.init, p.custom);
      q.value = p.value.template cast<Other>();
      q.grad = p.grad.template cast<Other>();
    }
    return out;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("param bundle: no parameter named " + name);
    return it->second;
  }

  std::vector<Param<Scalar>> params_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

template <typename Scalar>
struct LstmState {
  Tensor<Scalar> h;  // [B, d]
  Tensor<Scalar> c;  // [B, d]

  static LstmState zeros(Index batch, Index units) {
    return {Tensor<Scalar>({batch, units}), Tensor<Scalar>({batch, units})};
  }
};

template <typename Scalar>
struct LstmCache {
  Tensor<Scalar> x, h_prev, c_prev;
  Tensor<Scalar> gates;  // [B, 4d] post-activation, blocks i | f | g | o
  Tensor<Scalar> tanh_c;
};

/// Declares `prefix.wx` [n,4d], `prefix.wh` [d,4d] and `prefix.b` [4d].
/// Gate blocks are ordered input, forget, candidate, output.
template <typename Scalar>
void declare_lstm(ParamBundle<Scalar>& bundle, const std::string& prefix, Index inputs, Index units,
                  double forget_bias) {
  bundle.add(prefix + ".wx", {inputs, 4 * units}, Init::uniform);
  bundle.add(prefix + ".wh", {units, 4 * units}, Init::uniform);
  std::vector<double> bias(static_cast<std::size_t>(4 * units), 0.0);
  std::fill(bias.begin() + units, bias.begin() + 2 * units, forget_bias);
  bundle.add(prefix + ".b", {4 * units}, Init::custom, std::move(bias));
}

template <typename Scalar>
LstmState<Scalar> lstm_step(const Tensor<Scalar>& x, const LstmState<Scalar>& s,
                            const Tensor<Scalar>& wx, const Tensor<Scalar>& wh, const Tensor<Scalar>& b,
                            LstmCache<Scalar>* cache = nullptr) {
  const Index B = x.dim(0), n = x.size() / std::max<Index>(B, 1), d = wh.dim(0);
  detail::require_axis(wx.dim(0), n, "lstm_step", "wx[0] (inputs)");
  detail::require_axis(wx.dim(1), 4 * d, "lstm_step", "wx[1] (4*units)");
  detail::require_axis(b.size(), 4 * d, "lstm_step", "b (4*units)");
  if (s.h.shape() != Shape{B, d} || s.c.shape() != Shape{B, d})
    throw DimensionError("lstm_step: state shape " + shape_str(s.h.shape()) + " does not match [B, units]");

  Tensor<Scalar> gates({B, 4 * d});
  auto z = gates.matrix(B, 4 * d);
  z.noalias() = x.matrix(B, n) * wx.matrix(n, 4 * d);
  z.noalias() += s.h.matrix(B, d) * wh.matrix(d, 4 * d);
  z.rowwise() += b.vec().transpose();
  auto sig = [](auto block) { block = (Scalar(1) + (-block.array()).exp()).inverse().matrix(); };
  sig(z.middleCols(0, 2 * d));
  z.middleCols(2 * d, d) = z.middleCols(2 * d, d).array().tanh().matrix();
  sig(z.middleCols(3 * d, d));

  LstmState<Scalar> next{Tensor<Scalar>({B, d}), Tensor<Scalar>({B, d})};
  auto c = next.c.matrix(B, d);
  c = z.middleCols(d, d).cwiseProduct(s.c.matrix(B, d)) + z.middleCols(0, d).cwiseProduct(z.middleCols(2 * d, d));
  Tensor<Scalar> tanh_c({B, d});
  tanh_c.matrix(B, d) = c.array().tanh().matrix();
  next.h.matrix(B, d) = z.middleCols(3 * d, d).cwiseProduct(tanh_c.matrix(B, d));
  check_finite(next.h, "lstm_step");
  check_finite(next.c, "lstm_step");
  if (cache) *cache = {x.reshaped({B, n}), s.h, s.c, std::move(gates), std::move(tanh_c)};
  return next;
}

template <typename Scalar>
struct LstmGrads {
  Tensor<Scalar> dx, dh_prev, dc_prev;
};

/// Backward through one cell; parameter gradients accumulate into dwx/dwh/db.
template <typename Scalar>
LstmGrads<Scalar> lstm_step_backward(const LstmCache<Scalar>& k, const Tensor<Scalar>& wx,
                                     const Tensor<Scalar>& wh, const Tensor<Scalar>& dh,
                                     const Tensor<Scalar>& dc, Tensor<Scalar>& dwx, Tensor<Scalar>& dwh,
                                     Tensor<Scalar>& db) {
  const Index B = k.x.dim(0), n = k.x.dim(1), d = wh.dim(0);
  const auto z = k.gates.matrix(B, 4 * d);
  const auto i = z.middleCols(0, d), f = z.middleCols(d, d), g = z.middleCols(2 * d, d), o = z.middleCols(3 * d, d);
  const auto tc = k.tanh_c.matrix(B, d);
  const auto dH = dh.matrix(B, d);

  typename Tensor<Scalar>::RowMatrix dC = dc.matrix(B, d);
  dC.array() += dH.array() * o.array() * (Scalar(1) - tc.array().square());

  Tensor<Scalar> dz_t({B, 4 * d});
  auto dz = dz_t.matrix(B, 4 * d);
  dz.middleCols(0, d) = (dC.array() * g.array() * i.array() * (Scalar(1) - i.array())).matrix();
  dz.middleCols(d, d) = (dC.array() * k.c_prev.matrix(B, d).array() * f.array() * (Scalar(1) - f.array())).matrix();
  dz.middleCols(2 * d, d) = (dC.array() * i.array() * (Scalar(1) - g.array().square())).matrix();
  dz.middleCols(3 * d, d) = (dH.array() * tc.array() * o.array() * (Scalar(1) - o.array())).matrix();

  dwx.matrix(n, 4 * d).noalias() += k.x.matrix(B, n).transpose() * dz;
  dwh.matrix(d, 4 * d).noalias() += k.h_prev.matrix(B, d).transpose() * dz;
  db.vec() += dz.colwise().sum().transpose();

  LstmGrads<Scalar> out{Tensor<Scalar>({B, n}), Tensor<Scalar>({B, d}), Tensor<Scalar>({B, d})};
  out.dx.matrix(B, n).noalias() = dz * wx.matrix(n, 4 * d).transpose();
  out.dh_prev.matrix(B, d).noalias() = dz * wh.matrix(d, 4 * d).transpose();
  out.dc_prev.matrix(B, d) = dC.cwiseProduct(f);
  return out;
}

// ---------------------------------------------------------------------------
// Per-timestep batch normalization
// ---------------------------------------------------------------------------

enum class Mode { train, eval };

/// Running statistics kept separately for every unrolled step.
template <typename Scalar>
struct BnTimeStats {
  std::vector<Tensor<Scalar>> mean;
  std::vector<Tensor<Scalar>> var;
  double momentum = 0.1;

  BnTimeStats() = default;
  BnTimeStats(Index steps, Index channels, double momentum_)
      : mean(static_cast<std::size_t>(steps), Tensor<Scalar>({channels})),
        var(static_cast<std::size_t>(steps), Tensor<Scalar>({channels}, Scalar(1))),
        momentum(momentum_) {}

  Index steps() const { return static_cast<Index>(mean.size()); }
};

template <typename Scalar>
struct BnCache {
  Tensor<Scalar> xhat;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std;
  Mode mode = Mode::train;
};

/// Normalizes x ([B, C, ...]) per channel (axis 1) using batch statistics in
/// train mode (and updates the running pair for step t) or the stored pair for
/// step t in eval mode.
template <typename Scalar>
Tensor<Scalar> batchnorm_step(const Tensor<Scalar>& x, Index t, BnTimeStats<Scalar>& stats,
                              const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta, Mode mode,
                              double eps, BnCache<Scalar>* cache = nullptr) {
  if (x.rank() < 2) throw DimensionError("batchnorm_step: input needs a channel axis, got " + shape_str(x.shape()));
  if (t < 0 || t >= stats.steps())
    throw std::out_of_range("batchnorm_step: timestep " + std::to_string(t) + " outside the " +
                            std::to_string(stats.steps()) + " tracked steps");
  const Index B = x.dim(0), C = x.dim(1), inner = x.size() / (B * C);
  detail::require_axis(gamma.size(), C, "batchnorm_step", "gamma (channels)");
  detail::require_axis(beta.size(), C, "batchnorm_step", "beta (channels)");
  if (mode == Mode::train && B < 2)
    throw DimensionError("batchnorm_step: train mode needs batch >= 2, got " + std::to_string(B));

  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Scalar count = Scalar(B * inner);
  Vec mean = Vec::Zero(C), var = Vec::Zero(C);
  const Scalar* in = x.data();
  if (mode == Mode::train) {
    for (Index b = 0; b < B; ++b)
      for (Index c = 0; c < C; ++c)
        mean[c] += Eigen::Map<const Vec>(in + (b * C + c) * inner, inner).sum();
    mean /= count;
    for (Index b = 0; b < B; ++b)
      for (Index c = 0; c < C; ++c)
        var[c] += (Eigen::Map<const Vec>(in + (b * C + c) * inner, inner).array() - mean[c]).square().sum();
    var /= count;
    const auto ts = static_cast<std::size_t>(t);
    const Scalar m = Scalar(stats.momentum);
    const Scalar unbias = count > 1 ? count / (count - 1) : Scalar(1);
    stats.mean[ts].vec() = (Scalar(1) - m) * stats.mean[ts].vec() + m * mean;
    stats.var[ts].vec() = (Scalar(1) - m) * stats.var[ts].vec() + m * unbias * var;
  } else {
    mean = stats.mean[static_cast<std::size_t>(t)].vec();
    var = stats.var[static_cast<std::size_t>(t)].vec();
  }
  const Vec inv_std = (var.array() + Scalar(eps)).rsqrt().matrix();

  Tensor<Scalar> xhat(x.shape()), y(x.shape());
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) {
      const Index off = (b * C + c) * inner;
      auto xh = Eigen::Map<Vec>(xhat.data() + off, inner);
      xh = (Eigen::Map<const Vec>(in + off, inner).array() - mean[c]) * inv_std[c];
      Eigen::Map<Vec>(y.data() + off, inner) = (xh.array() * gamma[c] + beta[c]).matrix();
    }
  check_finite(y, "batchnorm_step");
  if (cache) *cache = {std::move(xhat), inv_std, mode};
  return y;
}

/// Gradient through batchnorm_step; in train mode it flows through the batch
/// mean and variance.
template <typename Scalar>
Tensor<Scalar> batchnorm_step_backward(const BnCache<Scalar>& k, const Tensor<Scalar>& gamma,
                                       const Tensor<Scalar>& dy, Tensor<Scalar>& d_gamma,
                                       Tensor<Scalar>& d_beta) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Index B = dy.dim(0), C = dy.dim(1), inner = dy.size() / (B * C);
  Vec sum_dy = Vec::Zero(C), sum_dy_xhat = Vec::Zero(C);
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) {
      const Index off = (b * C + c) * inner;
      const auto g = Eigen::Map<const Vec>(dy.data() + off, inner);
      sum_dy[c] += g.sum();
      sum_dy_xhat[c] += g.dot(Eigen::Map<const Vec>(k.xhat.data() + off, inner));
    }
  d_gamma.vec() += sum_dy_xhat;
  d_beta.vec() += sum_dy;

  Tensor<Scalar> dx(dy.shape());
  const Scalar count = Scalar(B * inner);
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) {
      const Index off = (b * C + c) * inner;
      const auto g = Eigen::Map<const Vec>(dy.data() + off, inner);
      auto out = Eigen::Map<Vec>(dx.data() + off, inner);
      const Scalar scale = gamma[c] * k.inv_std[c];
      if (k.mode == Mode::train) {
        const auto xh = Eigen::Map<const Vec>(k.xhat.data() + off, inner);
        out = scale * (g.array() - sum_dy[c] / count - xh.array() * (sum_dy_xhat[c] / count)).matrix();
      } else {
        out = scale * g;
      }
    }
  return dx;
}

}  // namespace glimpse
