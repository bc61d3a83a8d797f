#pragma once

#include "glimpsekit/baseline.hpp"
#include "glimpsekit/data.hpp"
#include "glimpsekit/model.hpp"
#include "glimpsekit/optim.hpp"
#include "glimpsekit/run_config.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace glimpse {

/// Per-object class scores of a batch, in natural object order.
struct Predictions {
  TensorF probs;  // [B, S, classes]
  /// Transform of the last read spent on each object, [B*S]; empty when
  /// the network does not attend.
  std::vector<AffineParams<double>> final_reads;
  /// Every read transform, [steps][B*6] flattened per step.
  std::vector<TensorF> reads;

  int label(Index b, Index s) const;
};

/// A trainable classifier over cluttered canvases.
class Network {
 public:
  virtual ~Network() = default;
  virtual ParamBundle<float>& params() = 0;
  /// Accumulates parameter gradients of the batch loss and returns the loss.
  virtual double loss_and_grad(const Batch<float>& batch, Predictions* pred) = 0;
  virtual Predictions predict(const TensorF& images) = 0;
  virtual std::vector<BnTimeStats<float>>* bn_stats() { return nullptr; }
};

class AttentionNet : public Network {
 public:
  explicit AttentionNet(const RunConfig& cfg);
  ParamBundle<float>& params() override { return model_.params(); }
  double loss_and_grad(const Batch<float>& batch, Predictions* pred) override;
  Predictions predict(const TensorF& images) override;
  std::vector<BnTimeStats<float>>* bn_stats() override { return &model_.bn_stats(); }
  Model<float>& model() { return model_; }

 private:
  Predictions collect(const Unrolled<float>& u, Index B) const;
  Model<float> model_;
  LossWeights weights_;
  StepBudget budget_;
  std::array<bool, 6> mask_;
  bool reverse_;
};

class BaselineNet : public Network {
 public:
  explicit BaselineNet(const RunConfig& cfg);
  ParamBundle<float>& params() override { return net_.params(); }
  double loss_and_grad(const Batch<float>& batch, Predictions* pred) override;
  Predictions predict(const TensorF& images) override;

 private:
  ConvBaseline<float> net_;
  Index classes_;
};

std::unique_ptr<Network> make_network(const RunConfig& cfg);

struct EvalResult {
  Index count = 0;
  double error = 0;  // fraction of images with any object wrong
  std::vector<double> object_accuracy;
  double mean_iou = -1;  // of each object's final glimpse window; -1 without attention
};

/// Error, per-object accuracy and final-glimpse IoU in eval mode. With a
/// partner the two networks' per-object distributions are averaged.
EvalResult evaluate(Network& net, const Dataset& data, Index batch, Network* partner = nullptr);

struct TrainState {
  Index epoch = 0;  // completed epochs
  AdamState<float> adam;
  PlateauSchedule schedule;
};

TrainState initial_train_state(const RunConfig& cfg);

struct EpochRecord {
  Index epoch = 0;
  double train_loss = 0, train_err = 0, test_err = 0, lr = 0, wall_s = 0;
};

inline constexpr const char* kMetricsHeader = "# epoch train_loss train_err test_err lr wall_s";
std::string format_record(const EpochRecord& r);

struct TrainHooks {
  std::function<void(const EpochRecord&, const TrainState&)> on_epoch;
  /// Stop after the epoch when this returns true.
  std::function<bool(const EpochRecord&)> stop;
};

/// Runs epochs from state.epoch until cfg.epochs, the step cap or the time
/// budget. Batches of epoch e follow BatchStream(n, batch, seed).batches(e).
/// Throws NumericError on a non-finite loss before touching the parameters.
void train(const RunConfig& cfg, Network& net, TrainState& state, const Dataset& train_set, const Dataset* test_set,
           const TrainHooks& hooks = {});

}  // namespace glimpse
