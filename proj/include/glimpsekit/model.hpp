#pragma once

#include "glimpsekit/config.hpp"
#include "glimpsekit/layers.hpp"
#include "glimpsekit/stn.hpp"
#include "glimpsekit/tensor.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace glimpse {

/// Area-averaging resize of [B,C,H,W] to [B,C,out_h,out_w]. Each output pixel
/// is the mean of the input region it covers, with fractional overlap weights.
template <typename Scalar>
Tensor<Scalar> area_downsample(const Tensor<Scalar>& images, Index out_h, Index out_w) {
  detail::require_rank(images.shape(), 4, "area_downsample", "images");
  const Index B = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  using RowMatrix = typename Tensor<Scalar>::RowMatrix;
  // Separable: out = Ry * plane * Rx^T.
  auto weights = [](Index in, Index out) {
    RowMatrix r = RowMatrix::Zero(out, in);
    const double scale = double(in) / double(out);
    for (Index o = 0; o < out; ++o) {
      const double lo = o * scale, hi = (o + 1) * scale;
      for (Index i = static_cast<Index>(lo); i < in && double(i) < hi; ++i) {
        const double overlap = std::min(hi, double(i + 1)) - std::max(lo, double(i));
        if (overlap > 0) r(o, i) = Scalar(overlap / scale);
      }
    }
    return r;
  };
  const RowMatrix ry = weights(H, out_h), rx = weights(W, out_w);
  Tensor<Scalar> out({B, C, out_h, out_w});
  for (Index p = 0; p < B * C; ++p) {
    Eigen::Map<const RowMatrix> plane(images.data() + p * H * W, H, W);
    Eigen::Map<RowMatrix>(out.data() + p * out_h * out_w, out_h, out_w).noalias() = ry * plane * rx.transpose();
  }
  return out;
}

template <typename Scalar>
struct ModelState {
  LstmState<Scalar> lstm1;  // r^(1): classification path
  LstmState<Scalar> lstm2;  // r^(2): emission path
  Tensor<Scalar> thetas;    // [B,6] transform for the pending read
  Index t = 0;
};

template <typename Scalar>
struct StepOutput {
  Tensor<Scalar> y;            // [B, classes] class distribution
  Tensor<Scalar> thetas_next;  // [B, 6]
};

template <typename Scalar>
struct Unrolled {
  std::vector<StepOutput<Scalar>> outputs;
  std::vector<Tensor<Scalar>> reads;  // transform used for the read at each step
};

/// Learnable-scalar totals per sub-network.
struct ParamCount {
  std::map<std::string, Index> groups;
  Index total = 0;
};

/// Sub-network a parameter belongs to: the name up to the first dot.
inline std::string param_group(const std::string& name) { return name.substr(0, name.find('.')); }

template <typename Scalar>
class Model {
 public:
  using T = Tensor<Scalar>;

  struct ConvLayerCache {
    T input;
    BnCache<Scalar> bn;
    T act;  // post-relu, pre-pool
    PoolIndex pool;
  };
  struct GlimpseCache {
    T patch;
    T thetas;
    std::vector<ConvLayerCache> convs;
    T flat, what, where;
  };
  struct StepCache {
    GlimpseCache glimpse;
    LstmCache<Scalar> lstm1, lstm2;
    T hidden;  // classification hidden layer (post-relu)
    T y;
    T h2;
  };
  struct Trace {
    Mode mode = Mode::train;
    T images;
    std::vector<T> context_inputs;
    Unrolled<Scalar> unrolled;
    std::vector<StepCache> steps;
  };

  Model() = default;

  /// Declares every parameter and initializes them from the seed.
  Model(ModelConfig config, std::uint64_t seed) : Model(std::move(config)) { params_.initialize(seed); }

  /// Declares every parameter, leaving them zero.
  explicit Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    declare();
  }

  const ModelConfig& config() const { return config_; }
  ParamBundle<Scalar>& params() { return params_; }
  const ParamBundle<Scalar>& params() const { return params_; }
  std::vector<BnTimeStats<Scalar>>& bn_stats() { return bn_; }
  const std::vector<BnTimeStats<Scalar>>& bn_stats() const { return bn_; }

  /// Scales the sampler's gradient; -1 flips it. Only used for fault injection.
  void set_sampler_grad_sign(Scalar sign) { sampler_grad_sign_ = sign; }

  ModelState<Scalar> init_state(const T& images, std::vector<T>* context_inputs = nullptr) const {
    detail::require_rank(images.shape(), 4, "init_state", "images");
    detail::require_axis(images.dim(1), config_.channels, "init_state", "images[1] (channels)");
    const Index B = images.dim(0);
    T x = area_downsample(images, config_.context_hw, config_.context_hw);
    for (std::size_t l = 0; l < config_.context_convs.size(); ++l) {
      if (context_inputs) context_inputs->push_back(x);
      const auto& spec = config_.context_convs[l];
      x = conv2d(x, value("context.conv" + std::to_string(l) + ".w"),
                 value("context.conv" + std::to_string(l) + ".b"), 1, spec.pad);
    }
    ModelState<Scalar> s;
    s.lstm1 = LstmState<Scalar>::zeros(B, config_.lstm_units);
    s.lstm2 = LstmState<Scalar>::zeros(B, config_.lstm_units);
    s.lstm2.h = std::move(x).reshaped({B, config_.lstm_units});
    s.thetas = T({B, 6});
    for (Index b = 0; b < B; ++b) {
      s.thetas[b * 6 + 0] = Scalar(1);
      s.thetas[b * 6 + 4] = Scalar(1);
    }
    s.t = 0;
    return s;
  }

  /// What x where fusion of a patch and the transform that produced it.
  T glimpse_features(const T& patch, const T& thetas, Index t, Mode mode, GlimpseCache* cache = nullptr) {
    const Index B = patch.dim(0);
    T x = patch;
    if (cache) cache->convs.resize(config_.glimpse_convs.size());
    for (std::size_t l = 0; l < config_.glimpse_convs.size(); ++l) {
      const auto& spec = config_.glimpse_convs[l];
      const std::string p = "glimpse.conv" + std::to_string(l);
      ConvLayerCache* lc = cache ? &cache->convs[l] : nullptr;
      if (lc) lc->input = x;
      T z = conv2d(x, value(p + ".w"), conv_bias(l), 1, spec.pad);
      if (config_.glimpse_bn)
        z = batchnorm_step(z, t, bn_[l], value("glimpse.bn" + std::to_string(l) + ".gamma"),
                           value("glimpse.bn" + std::to_string(l) + ".beta"), mode, config_.bn_eps,
                           lc ? &lc->bn : nullptr);
      x = relu(std::move(z));
      if (spec.pool_after) {
        PoolIndex idx;
        T pooled = maxpool2(x, idx);
        if (lc) {
          lc->act = std::move(x);
          lc->pool = std::move(idx);
        }
        x = std::move(pooled);
      } else if (lc) {
        lc->act = x;
      }
    }
    T flat = std::move(x).reshaped({B, config_.glimpse_flat()});
    T what = relu(dense(flat, value("glimpse.what.w"), value("glimpse.what.b")));
    T where = relu(dense(thetas, value("glimpse.where.w"), value("glimpse.where.b")));
    T g = what;
    g.vec().array() *= where.vec().array();
    if (cache) {
      cache->flat = std::move(flat);
      cache->what = std::move(what);
      cache->where = std::move(where);
      cache->thetas = thetas;
    }
    return g;
  }

  /// Classification head on r^(1).
  T classify(const T& h1, T* hidden = nullptr) const {
    T hdn = relu(dense(h1, value("classify.fc0.w"), value("classify.fc0.b")));
    T y = softmax(dense(hdn, value("classify.fc1.w"), value("classify.fc1.b")));
    if (hidden) *hidden = std::move(hdn);
    return y;
  }

  T emit(const T& h2) const { return dense(h2, value("emit.w"), value("emit.b")); }

  std::pair<ModelState<Scalar>, StepOutput<Scalar>> step(const ModelState<Scalar>& state, const T& images,
                                                         Mode mode, StepCache* cache = nullptr,
                                                         const T* read_offset = nullptr) {
    if (state.t >= config_.steps())
      throw std::logic_error("step: state is at step " + std::to_string(state.t) + " of " +
                             std::to_string(config_.steps()));
    T thetas = state.thetas;
    if (read_offset) thetas.vec() += read_offset->vec();
    T patch = read_glimpses(images, thetas, config_.glimpse_hw, config_.glimpse_hw);
    GlimpseCache* gc = cache ? &cache->glimpse : nullptr;
    if (gc) gc->patch = patch;
    T g = glimpse_features(patch, thetas, state.t, mode, gc);

    ModelState<Scalar> next;
    next.lstm1 = lstm_step(g, state.lstm1, value("lstm1.wx"), value("lstm1.wh"), value("lstm1.b"),
                           cache ? &cache->lstm1 : nullptr);
    StepOutput<Scalar> out;
    out.y = classify(next.lstm1.h, cache ? &cache->hidden : nullptr);
    next.lstm2 = lstm_step(next.lstm1.h, state.lstm2, value("lstm2.wx"), value("lstm2.wh"), value("lstm2.b"),
                           cache ? &cache->lstm2 : nullptr);
    out.thetas_next = emit(next.lstm2.h);
    check_finite(out.thetas_next, "emission");
    next.thetas = out.thetas_next;
    next.t = state.t + 1;
    if (cache) {
      cache->y = out.y;
      cache->h2 = next.lstm2.h;
    }
    return {std::move(next), std::move(out)};
  }

  Unrolled<Scalar> unroll(const T& images, Mode mode) { return forward(images, mode, false).unrolled; }

  /// Full unroll. With keep_cache the returned trace can be passed to
  /// backward(). read_offsets, when given, holds one [B,6] tensor per step
  /// added to the transform before each read.
  Trace forward(const T& images, Mode mode, bool keep_cache = true,
                const std::vector<T>* read_offsets = nullptr) {
    Trace tr;
    tr.mode = mode;
    if (keep_cache) tr.images = images;
    auto state = init_state(images, keep_cache ? &tr.context_inputs : nullptr);
    const Index steps = config_.steps();
    if (keep_cache) tr.steps.resize(static_cast<std::size_t>(steps));
    for (Index t = 0; t < steps; ++t) {
      const T* off = read_offsets ? &(*read_offsets)[static_cast<std::size_t>(t)] : nullptr;
      T read = state.thetas;
      if (off) read.vec() += off->vec();
      tr.unrolled.reads.push_back(std::move(read));
      auto [next, out] = step(state, images, mode, keep_cache ? &tr.steps[static_cast<std::size_t>(t)] : nullptr, off);
      tr.unrolled.outputs.push_back(std::move(out));
      state = std::move(next);
    }
    return tr;
  }

  /// Accumulates parameter gradients given dL/dy per step and the direct
  /// dL/d(read transform) per step. Returns the total gradient w.r.t. each
  /// step's read transform.
  std::vector<T> backward(const Trace& tr, const std::vector<T>& d_ys, const std::vector<T>& d_reads) {
    const Index steps = config_.steps(), B = tr.images.dim(0), d = config_.lstm_units;
    if (static_cast<Index>(tr.steps.size()) != steps) throw std::logic_error("backward: trace has no caches");
    std::vector<T> d_read_total(static_cast<std::size_t>(steps));
    T dh1({B, d}), dc1({B, d}), dh2({B, d}), dc2({B, d});
    T d_next_theta({B, 6});  // gradient reaching this step's emission output
    for (Index t = steps - 1; t >= 0; --t) {
      const auto& sc = tr.steps[static_cast<std::size_t>(t)];
      const auto ts = static_cast<std::size_t>(t);

      // Emission head and second LSTM.
      T d_h2 = dh2;
      dense_backward(sc.h2, value("emit.w"), d_next_theta, &d_h2, grad("emit.w"), grad("emit.b"));
      auto g2 = lstm_step_backward(sc.lstm2, value("lstm2.wx"), value("lstm2.wh"), d_h2, dc2, grad("lstm2.wx"),
                                   grad("lstm2.wh"), grad("lstm2.b"));
      dh2 = std::move(g2.dh_prev);
      dc2 = std::move(g2.dc_prev);

      // Classification head.
      T d_h1 = dh1;
      d_h1.vec() += g2.dx.vec();
      T d_logits = softmax_backward(sc.y, d_ys[ts]);
      T d_hidden({B, config_.fc_units});
      dense_backward(sc.hidden, value("classify.fc1.w"), d_logits, &d_hidden, grad("classify.fc1.w"),
                     grad("classify.fc1.b"));
      d_hidden = relu_backward(sc.hidden, std::move(d_hidden));
      // r^(1) of this step is the cached input of the second LSTM.
      dense_backward(sc.lstm2.x, value("classify.fc0.w"), d_hidden, &d_h1, grad("classify.fc0.w"),
                     grad("classify.fc0.b"));

      auto g1 = lstm_step_backward(sc.lstm1, value("lstm1.wx"), value("lstm1.wh"), d_h1, dc1, grad("lstm1.wx"),
                                   grad("lstm1.wh"), grad("lstm1.b"));
      dh1 = std::move(g1.dh_prev);
      dc1 = std::move(g1.dc_prev);

      // Glimpse network and sampler.
      T d_theta = d_reads[ts];
      glimpse_backward(tr, sc.glimpse, g1.dx, d_theta);
      d_read_total[ts] = d_theta;
      d_next_theta = std::move(d_theta);
    }
    context_backward(tr, dh2);
    return d_read_total;
  }

  /// Learnable scalar count per sub-network for a configuration. Layers
  /// with a zero-width input or output contribute nothing.
  static ParamCount count_parameters(const ModelConfig& c) {
    ParamCount pc;
    auto add = [&](const std::string& group, Index n) {
      pc.groups[group] += n;
      pc.total += n;
    };
    auto fc = [](Index in, Index out) { return in > 0 && out > 0 ? in * out + out : Index(0); };
    Index in_ch = c.channels;
    add("context", 0);
    for (const auto& s : c.context_convs) {
      add("context", in_ch > 0 ? s.filters * in_ch * s.size * s.size + s.filters : 0);
      in_ch = s.filters;
    }
    in_ch = c.channels;
    add("glimpse", 0);
    for (const auto& s : c.glimpse_convs) {
      // batch norm replaces the conv bias with a scale and a shift
      const Index per_filter = c.glimpse_bn ? 2 : 1;
      add("glimpse", in_ch > 0 ? s.filters * (in_ch * s.size * s.size + per_filter) : 0);
      in_ch = s.filters;
    }
    const Index flat = c.glimpse_convs.empty() ? c.channels * c.glimpse_hw * c.glimpse_hw : c.glimpse_flat();
    add("glimpse", fc(flat, c.fc_units) + fc(6, c.fc_units));
    auto lstm = [](Index in, Index d) { return d > 0 ? (in + d + 1) * 4 * d : Index(0); };
    add("lstm1", lstm(c.fc_units, c.lstm_units));
    add("lstm2", lstm(c.lstm_units, c.lstm_units));
    add("classify", fc(c.lstm_units, c.fc_units) + fc(c.fc_units, c.class_count));
    add("emit", fc(c.lstm_units, 6));
    return pc;
  }

 private:
  const T& value(const std::string& name) const { return params_.value(name); }
  T& grad(const std::string& name) { return params_.grad(name); }

  const T& conv_bias(std::size_t l) const {
    return config_.glimpse_bn ? zero_bias_[l] : value("glimpse.conv" + std::to_string(l) + ".b");
  }

  void glimpse_backward(const Trace& tr, const GlimpseCache& gc, const T& d_g, T& d_theta) {
    T d_what = d_g, d_where = d_g;
    d_what.vec().array() *= gc.where.vec().array();
    d_where.vec().array() *= gc.what.vec().array();
    d_where = relu_backward(gc.where, std::move(d_where));
    dense_backward(gc.thetas, value("glimpse.where.w"), d_where, &d_theta, grad("glimpse.where.w"),
                   grad("glimpse.where.b"));
    d_what = relu_backward(gc.what, std::move(d_what));
    T d_x = T::zeros_like(gc.flat);
    dense_backward(gc.flat, value("glimpse.what.w"), d_what, &d_x, grad("glimpse.what.w"), grad("glimpse.what.b"));

    for (std::size_t li = config_.glimpse_convs.size(); li-- > 0;) {
      const auto& spec = config_.glimpse_convs[li];
      const auto& lc = gc.convs[li];
      if (spec.pool_after) d_x = maxpool2_backward(lc.pool, d_x.reshaped(pooled_shape(lc.act.shape())));
      else d_x = std::move(d_x).reshaped(lc.act.shape());
      T d_z = relu_backward(lc.act, std::move(d_x));
      const std::string bn = "glimpse.bn" + std::to_string(li);
      if (config_.glimpse_bn) d_z = batchnorm_step_backward(lc.bn, value(bn + ".gamma"), d_z, grad(bn + ".gamma"), grad(bn + ".beta"));
      const std::string p = "glimpse.conv" + std::to_string(li);
      T d_in = T::zeros_like(lc.input);
      Tensor<Scalar>& d_bias = config_.glimpse_bn ? scratch_bias_[li] : grad(p + ".b");
      conv2d_backward(lc.input, value(p + ".w"), 1, spec.pad, d_z, &d_in, grad(p + ".w"), d_bias);
      d_x = std::move(d_in);
    }
    T d_sample = read_glimpses_backward(tr.images, gc.thetas, d_x.reshaped(gc.patch.shape()));
    d_theta.vec() += sampler_grad_sign_ * d_sample.vec();
  }

  void context_backward(const Trace& tr, const T& d_h2_0) {
    const Index n = static_cast<Index>(config_.context_convs.size());
    if (n == 0) return;
    T d_x = d_h2_0;
    for (Index l = n - 1; l >= 0; --l) {
      const auto& in = tr.context_inputs[static_cast<std::size_t>(l)];
      const std::string p = "context.conv" + std::to_string(l);
      const auto& w = value(p + ".w");
      const Index out_hw = in.dim(2) + 2 * config_.context_convs[static_cast<std::size_t>(l)].pad - w.dim(2) + 1;
      d_x = std::move(d_x).reshaped({in.dim(0), w.dim(0), out_hw, out_hw});
      T d_in = T::zeros_like(in);
      conv2d_backward(in, w, 1, config_.context_convs[static_cast<std::size_t>(l)].pad, d_x, l > 0 ? &d_in : nullptr,
                      grad(p + ".w"), grad(p + ".b"));
      d_x = std::move(d_in);
    }
  }

  static Shape pooled_shape(const Shape& s) { return {s[0], s[1], s[2] / 2, s[3] / 2}; }

  void declare() {
    const auto& c = config_;
    Index in_ch = c.channels;
    for (std::size_t l = 0; l < c.context_convs.size(); ++l) {
      const auto& s = c.context_convs[l];
      const std::string p = "context.conv" + std::to_string(l);
      params_.add(p + ".w", {s.filters, in_ch, s.size, s.size}, Init::uniform);
      params_.add(p + ".b", {s.filters}, Init::zeros);
      in_ch = s.filters;
    }
    in_ch = c.channels;
    for (std::size_t l = 0; l < c.glimpse_convs.size(); ++l) {
      const auto& s = c.glimpse_convs[l];
      const std::string p = "glimpse.conv" + std::to_string(l);
      params_.add(p + ".w", {s.filters, in_ch, s.size, s.size}, Init::uniform);
      if (c.glimpse_bn) {
        params_.add("glimpse.bn" + std::to_string(l) + ".gamma", {s.filters}, Init::ones);
        params_.add("glimpse.bn" + std::to_string(l) + ".beta", {s.filters}, Init::zeros);
        bn_.emplace_back(c.steps(), s.filters, c.bn_momentum);
        zero_bias_.emplace_back(Shape{s.filters});
        scratch_bias_.emplace_back(Shape{s.filters});
      } else {
        params_.add(p + ".b", {s.filters}, Init::zeros);
      }
      in_ch = s.filters;
    }
    params_.add("glimpse.what.w", {c.glimpse_flat(), c.fc_units}, Init::gaussian);
    params_.add("glimpse.what.b", {c.fc_units}, Init::zeros);
    params_.add("glimpse.where.w", {6, c.fc_units}, Init::gaussian);
    params_.add("glimpse.where.b", {c.fc_units}, Init::zeros);
    declare_lstm(params_, "lstm1", c.fc_units, c.lstm_units, c.forget_bias);
    declare_lstm(params_, "lstm2", c.lstm_units, c.lstm_units, c.forget_bias);
    params_.add("classify.fc0.w", {c.lstm_units, c.fc_units}, Init::gaussian);
    params_.add("classify.fc0.b", {c.fc_units}, Init::zeros);
    params_.add("classify.fc1.w", {c.fc_units, c.class_count}, Init::gaussian);
    params_.add("classify.fc1.b", {c.class_count}, Init::zeros);
    // Linear emission starting at the identity transform.
    params_.add("emit.w", {c.lstm_units, 6}, Init::zeros);
    params_.add("emit.b", {6}, Init::custom, {1, 0, 0, 0, 1, 0});
  }

  ModelConfig config_;
  ParamBundle<Scalar> params_;
  std::vector<BnTimeStats<Scalar>> bn_;
  std::vector<T> zero_bias_;
  std::vector<T> scratch_bias_;
  Scalar sampler_grad_sign_ = Scalar(1);
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace glimpse
