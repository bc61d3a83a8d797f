#pragma once

#include "glimpsekit/config.hpp"
#include "glimpsekit/data.hpp"
#include "glimpsekit/loss.hpp"

#include <cstdint>
#include <string>

namespace glimpse {

/// Every hyperparameter of a run as a flat key = value document.
struct RunConfig {
  // network
  std::string model = "attention";  // attention | baseline
  ModelConfig net;
  std::vector<ConvSpec> baseline_convs{{32, 5, 2, true}, {64, 5, 2, true}};

  // loss
  LossWeights loss{1.0, 1.0, {1.0, 0.5, 1.0, 0.5, 1.0, 1.0}, false};
  bool supervise_skew = true;
  bool reverse_order = false;

  // optimization
  double lr = 1e-4;
  Index batch = 128;
  double clip = 10.0;
  Index epochs = 100;
  Index patience = 3;
  double decay = 0.1;
  double lr_floor = 1e-7;
  double plateau_threshold = 1e-4;
  double time_budget_s = 0;  // 0: no limit; checked at epoch ends
  Index max_steps = 0;       // 0: no limit
  Index eval_batch = 256;
  std::uint64_t seed = 1;

  // data
  std::string mnist_dir = "data/mnist";
  Index canvas_hw = 100;
  Index clutter = 8;
  Index train_count = 60000;
  Index test_count = 10000;
  std::uint64_t data_seed = 7;

  /// Parses key = value lines; '#' starts a comment. Unknown keys and
  /// malformed values throw ConfigError naming the line.
  static RunConfig parse(const std::string& text, RunConfig base);
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  /// Sets one key from its text form.
  void set(const std::string& key, const std::string& value);
  /// Every key with its current value, one per line, parseable by parse().
  std::string to_text() const;

  DatasetMeta dataset_meta() const;
  StepBudget step_budget() const;
  std::array<bool, 6> supervision_mask() const;
  void validate() const;
};

std::string format_convs(const std::vector<ConvSpec>& convs);
std::vector<ConvSpec> parse_convs(const std::string& text);

}  // namespace glimpse
