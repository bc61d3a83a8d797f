#pragma once

#include "glimpsekit/config.hpp"
#include "glimpsekit/layers.hpp"
#include "glimpsekit/tensor.hpp"

#include <string>
#include <vector>

namespace glimpse {

/// Plain convolutional classifier over the whole canvas: conv, relu and
/// optional 2x2 pooling per layer, then one linear softmax head per object.
template <typename Scalar>
class ConvBaseline {
 public:
  using T = Tensor<Scalar>;

  struct Trace {
    std::vector<T> inputs;  // input of each conv
    std::vector<T> acts;    // post-relu, pre-pool
    std::vector<PoolIndex> pools;
    T flat;
    std::vector<T> probs;  // per object, [B, classes]
  };

  ConvBaseline() = default;
  ConvBaseline(std::vector<ConvSpec> convs, Index channels, Index canvas_hw, Index objects, Index classes,
               std::uint64_t seed)
      : convs_(std::move(convs)), objects_(objects), classes_(classes) {
    Index ch = channels, hw = canvas_hw;
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      const auto& s = convs_[l];
      params_.add("conv" + std::to_string(l) + ".w", {s.filters, ch, s.size, s.size}, Init::uniform);
      params_.add("conv" + std::to_string(l) + ".b", {s.filters}, Init::zeros);
      hw = hw + 2 * s.pad - s.size + 1;
      if (hw < 1) throw ConfigError("baseline: conv " + std::to_string(l) + " shrinks the canvas to nothing");
      if (s.pool_after) {
        if (hw % 2) throw ConfigError("baseline: conv " + std::to_string(l) + " output is odd and cannot be pooled");
        hw /= 2;
      }
      ch = s.filters;
    }
    flat_ = ch * hw * hw;
    for (Index k = 0; k < objects_; ++k) {
      params_.add("out" + std::to_string(k) + ".w", {flat_, classes_}, Init::gaussian);
      params_.add("out" + std::to_string(k) + ".b", {classes_}, Init::zeros);
    }
    params_.initialize(seed);
  }

  ParamBundle<Scalar>& params() { return params_; }
  const ParamBundle<Scalar>& params() const { return params_; }
  Index objects() const { return objects_; }
  Index flat_size() const { return flat_; }

  /// Class distributions per object, each [B, classes].
  std::vector<T> forward(const T& images, Trace* trace = nullptr) const {
    T x = images;
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      const auto& s = convs_[l];
      if (trace) trace->inputs.push_back(x);
      x = relu(conv2d(x, params_.value("conv" + std::to_string(l) + ".w"),
                      params_.value("conv" + std::to_string(l) + ".b"), 1, s.pad));
      PoolIndex idx;
      if (s.pool_after) {
        T pooled = maxpool2(x, idx);
        if (trace) trace->acts.push_back(std::move(x));
        x = std::move(pooled);
      } else if (trace) {
        trace->acts.push_back(x);
      }
      if (trace) trace->pools.push_back(std::move(idx));
    }
    const Index B = images.dim(0);
    T flat = std::move(x).reshaped({B, flat_});
    std::vector<T> out;
    for (Index k = 0; k < objects_; ++k)
      out.push_back(softmax(dense(flat, params_.value("out" + std::to_string(k) + ".w"),
                                  params_.value("out" + std::to_string(k) + ".b"))));
    if (trace) {
      trace->flat = std::move(flat);
      trace->probs = out;
    }
    return out;
  }

  /// Accumulates parameter gradients from dL/d(probs) per object.
  void backward(const Trace& tr, const std::vector<T>& d_probs) {
    T d_flat = T::zeros_like(tr.flat);
    for (Index k = 0; k < objects_; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const std::string p = "out" + std::to_string(k);
      dense_backward(tr.flat, params_.value(p + ".w"), softmax_backward(tr.probs[ks], d_probs[ks]), &d_flat,
                     params_.grad(p + ".w"), params_.grad(p + ".b"));
    }
    T d_x = std::move(d_flat);
    for (std::size_t li = convs_.size(); li-- > 0;) {
      const auto& act = tr.acts[li];
      if (convs_[li].pool_after)
        d_x = maxpool2_backward(tr.pools[li], d_x.reshaped({act.dim(0), act.dim(1), act.dim(2) / 2, act.dim(3) / 2}));
      else
        d_x = std::move(d_x).reshaped(act.shape());
      T d_z = relu_backward(act, std::move(d_x));
      const std::string p = "conv" + std::to_string(li);
      T d_in = T::zeros_like(tr.inputs[li]);
      conv2d_backward(tr.inputs[li], params_.value(p + ".w"), 1, convs_[li].pad, d_z, li > 0 ? &d_in : nullptr,
                      params_.grad(p + ".w"), params_.grad(p + ".b"));
      d_x = std::move(d_in);
    }
  }

 private:
  std::vector<ConvSpec> convs_;
  Index objects_ = 1, classes_ = 10, flat_ = 0;
  ParamBundle<Scalar> params_;
};

}  // namespace glimpse
