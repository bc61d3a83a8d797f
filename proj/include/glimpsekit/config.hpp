#pragma once

#include "glimpsekit/tensor.hpp"

#include <string>
#include <vector>

namespace glimpse {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ConvSpec {
  Index filters = 0;
  Index size = 3;
  Index pad = 0;
  bool pool_after = false;
  bool operator==(const ConvSpec&) const = default;
};

/// Architecture and step-budget hyperparameters. Defaults are the
/// MNIST-Cluttered network: 26x26 glimpses, six glimpse convolutions,
/// 512 LSTM units and 1024-wide fully connected layers.
struct ModelConfig {
  Index N = 6;               // glimpses per object
  Index S = 1;               // objects per image
  Index terminal_steps = 0;  // extra steps supervised with the terminal class
  Index channels = 1;
  Index glimpse_hw = 26;
  Index context_hw = 12;
  std::vector<ConvSpec> context_convs{{16, 5, 0}, {16, 3, 0}, {32, 3, 0}};
  std::vector<ConvSpec> glimpse_convs{{64, 3, 1, false},  {64, 3, 0, true},  {128, 3, 1, false},
                                      {128, 3, 1, true},  {160, 3, 1, false}, {192, 3, 0, false}};
  Index lstm_units = 512;
  Index fc_units = 1024;
  Index class_count = 10;
  bool glimpse_bn = true;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  double forget_bias = 1.0;

  Index steps() const { return N * S + terminal_steps; }

  /// Spatial extent after the context convolutions (square).
  Index context_out_hw() const;
  /// Flattened length of the context network output.
  Index context_flat() const;
  /// Spatial extent of each glimpse conv output, before pooling.
  std::vector<Index> glimpse_conv_hw() const;
  /// Flattened length of the glimpse conv stack output.
  Index glimpse_flat() const;

  /// Throws ConfigError describing the first inconsistency.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;

  static ModelConfig mnist_cluttered() { return {}; }
  /// 8x8 canvas, 4x4 glimpse, two glimpse convs, 8 LSTM units, T=2.
  static ModelConfig downscaled();
};

}  // namespace glimpse
