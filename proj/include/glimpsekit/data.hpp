#pragma once

#include "glimpsekit/loss.hpp"
#include "glimpsekit/stn.hpp"
#include "glimpsekit/tensor.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace glimpse {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class IdxMagicError : public DataError {
 public:
  using DataError::DataError;
};
class IdxTruncatedError : public DataError {
 public:
  using DataError::DataError;
};
class IdxDimensionError : public DataError {
 public:
  using DataError::DataError;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Raw IDX container of unsigned bytes.
struct IdxArray {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;
};

IdxArray read_idx(const std::string& path);
void write_idx(const std::string& path, const IdxArray& a);

/// Grayscale digits as bytes, [count, rows, cols], with one label each.
struct DigitSet {
  Index count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;

  const std::uint8_t* digit(Index i) const { return pixels.data() + i * rows * cols; }
  /// Digit i as [1, rows, cols] scaled to [0,1].
  TensorF image(Index i) const;
};

/// Images file (magic 0x803) plus labels file (magic 0x801).
DigitSet load_idx(const std::string& images_path, const std::string& labels_path);

struct Placement {
  Index source = 0;  // digit index in the pool
  Index x = 0, y = 0;
  Index crop_x = 0, crop_y = 0;  // crop origin inside the source digit; 0 for whole digits
};

struct LabeledSample {
  TensorF canvas;  // [1, H, W], values in [0,1]
  std::vector<int> labels;
  std::vector<AffineParams<double>> gt_affine;
  std::vector<Box> boxes;
  std::vector<Placement> digits;
  std::vector<Placement> clutter;
};

/// Canvas-space target transform whose glimpse window is exactly the box.
AffineParams<double> gt_affine_from_bbox(const Box& box, Index canvas_h, Index canvas_w);

inline constexpr Index kClutterSize = 8;

/// Whole digits at the given positions plus clutter_count random 8x8
/// fragments of other digits, max-composited.
LabeledSample compose_canvas(const DigitSet& pool, std::span<const Placement> digits, Index canvas_hw,
                             Index clutter_count, std::mt19937_64& rng);

/// One digit at a uniformly random position surrounded by clutter.
LabeledSample synthesize_cluttered(const DigitSet& pool, Index digit, Index canvas_hw, Index clutter_count,
                                   std::mt19937_64& rng);

/// digits.size() digits left to right, each uniform inside its own
/// vertical strip of the canvas.
LabeledSample synthesize_sequence(const DigitSet& pool, std::span<const Index> digits, Index canvas_hw,
                                  Index clutter_count, std::mt19937_64& rng);

struct DatasetMeta {
  Index train_count = 60000;
  Index test_count = 10000;
  Index canvas_hw = 100;
  Index clutter_count = 8;
  Index objects = 1;
  std::uint64_t seed = 0;
  bool operator==(const DatasetMeta&) const = default;
};

enum class Split : std::uint32_t { train = 0, test = 1 };

/// Synthesized samples stored compactly; canvases stay on the 1/255 grid.
struct Dataset {
  DatasetMeta meta;
  Split split = Split::train;
  Index count = 0;
  std::vector<std::uint8_t> pixels;  // [count, H, W]
  std::vector<int> labels;           // [count, objects]
  std::vector<Box> boxes;            // [count, objects]

  Index hw() const { return meta.canvas_hw; }
  Index objects() const { return meta.objects; }
  LabeledSample sample(Index i) const;
};

/// Deterministic in (meta, split, pool): sample i is drawn from its own
/// generator seeded by (seed, split, i), so threads do not change the bytes.
Dataset generate_dataset(const DigitSet& pool, const DatasetMeta& meta, Split split, unsigned threads = 1);

/// The first n samples.
Dataset head(const Dataset& d, Index n);

void save_dataset(const std::string& path, const Dataset& d);
Dataset load_dataset(const std::string& path);

/// Epoch-wise shuffled partition of [0, n) into batches; the last batch may be short.
class BatchStream {
 public:
  BatchStream(Index n, Index batch_size, std::uint64_t seed);
  std::vector<Index> order(Index epoch) const;
  std::vector<std::vector<Index>> batches(Index epoch) const;
  Index batch_count() const { return (n_ + batch_ - 1) / batch_; }

 private:
  Index n_, batch_;
  std::uint64_t seed_;
};

template <typename Scalar>
struct Batch {
  Tensor<Scalar> images;  // [B, 1, H, W]
  std::vector<SupervisionTarget> targets;
};

template <typename Scalar>
Batch<Scalar> make_batch(const Dataset& d, std::span<const Index> indices) {
  const Index B = static_cast<Index>(indices.size()), hw = d.hw(), plane = hw * hw, S = d.objects();
  Batch<Scalar> out;
  out.images = Tensor<Scalar>({B, 1, hw, hw});
  out.targets.resize(static_cast<std::size_t>(B));
  for (Index b = 0; b < B; ++b) {
    const Index i = indices[static_cast<std::size_t>(b)];
    if (i < 0 || i >= d.count) throw std::out_of_range("make_batch: index " + std::to_string(i));
    const std::uint8_t* src = d.pixels.data() + i * plane;
    for (Index p = 0; p < plane; ++p) out.images[b * plane + p] = Scalar(src[p]) / Scalar(255);
    auto& t = out.targets[static_cast<std::size_t>(b)];
    for (Index s = 0; s < S; ++s) {
      t.labels.push_back(d.labels[static_cast<std::size_t>(i * S + s)]);
      t.gt_affine.push_back(gt_affine_from_bbox(d.boxes[static_cast<std::size_t>(i * S + s)], hw, hw));
    }
  }
  return out;
}

/// Thread cap from GLIMPSEKIT_THREADS, else the hardware count.
unsigned thread_budget();

}  // namespace glimpse
