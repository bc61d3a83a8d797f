#pragma once

#include "glimpsekit/config.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace glimpse {

struct GradcheckOptions {
  Index batch = 3;
  Index canvas = 8;
  double step = 1e-6;
  double threshold = 1e-3;
  /// Relative-error denominator floor.
  double floor = 1e-6;
  /// Flip the sampler gradient sign (fault injection).
  bool corrupt_sampler = false;
};

struct GradcheckReport {
  /// Max relative error per parameter group, plus "stn" for the read transforms.
  std::map<std::string, double> max_rel_error;
  Index checked = 0;
  bool passed(double threshold) const;
};

/// Central finite differences of the composite loss through the fully
/// unrolled 64-bit model against backward(). Parameters are redrawn at a
/// larger scale than training init, and each read gets a small fixed offset
/// so sample points avoid the sampler's integer kinks.
GradcheckReport gradient_check(const ModelConfig& config, std::uint64_t seed, const GradcheckOptions& opt = {});

}  // namespace glimpse
