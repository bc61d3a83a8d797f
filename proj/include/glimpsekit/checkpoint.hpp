#pragma once

#include "glimpsekit/run_config.hpp"
#include "glimpsekit/train.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <string>

namespace glimpse {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1, i64 = 2 };

/// Named tensors plus the run config text. Integers are stored as i64
/// tensors of shape [1].
struct TensorArchive {
  std::string config_text;
  std::map<std::string, TensorF> f32;
  std::map<std::string, TensorD> f64;
  std::map<std::string, std::int64_t> i64;

  void write(const std::string& path) const;
  static TensorArchive read(const std::string& path);
};

/// Parameters, Adam moments, batch-norm statistics, epoch, schedule and
/// seed of a run. Written to a temporary file and renamed into place.
void save_checkpoint(const std::string& path, const RunConfig& cfg, Network& net, const TrainState& state);

struct LoadedCheckpoint {
  RunConfig config;
  std::unique_ptr<Network> net;
  TrainState state;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace glimpse
