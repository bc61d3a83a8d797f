#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace glimpse {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

/// Dense row-major n-dimensional array. Storage is a contiguous Eigen
/// column vector so that any 2-d view can be taken with matrix().
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(Vector::Constant(shape_size(shape_), fill)) {}

  Tensor(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape)) {
    if (static_cast<Index>(values.size()) != shape_size(shape_))
      throw DimensionError("tensor: " + std::to_string(values.size()) +
                           " values for shape " + shape_str(shape_));
    data_.resize(shape_size(shape_));
    std::copy(values.begin(), values.end(), data_.data());
  }

  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw DimensionError("tensor: data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  template <typename... I>
  Scalar& operator()(I... idx) {
    return data_[offset({static_cast<Index>(idx)...})];
  }
  template <typename... I>
  Scalar operator()(I... idx) const {
    return data_[offset({static_cast<Index>(idx)...})];
  }

  /// Row-major 2-d view; rows * cols must equal size().
  MatrixMap matrix(Index rows, Index cols) {
    check_view(rows, cols);
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_view(rows, cols);
    return ConstMatrixMap(data_.data(), rows, cols);
  }
  /// View with the leading axis as rows and the rest flattened.
  MatrixMap matrix() { return matrix(dim(0), size() / std::max<Index>(dim(0), 1)); }
  ConstMatrixMap matrix() const { return matrix(dim(0), size() / std::max<Index>(dim(0), 1)); }

  Tensor reshaped(Shape shape) const& {
    if (shape_size(shape) != size())
      throw DimensionError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }
  Tensor reshaped(Shape shape) && {
    if (shape_size(shape) != size())
      throw DimensionError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
    return Tensor(std::move(shape), std::move(data_));
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  void set_zero() { data_.setZero(); }
  bool all_finite() const { return data_.allFinite(); }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Index offset(std::initializer_list<Index> idx) const {
    Index off = 0;
    std::size_t axis = 0;
    for (Index i : idx) off = off * shape_[axis++] + i;
    return off;
  }
  void check_view(Index rows, Index cols) const {
    if (rows * cols != size())
      throw DimensionError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                           " of " + shape_str(shape_));
  }

  Shape shape_;
  Vector data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename Scalar>
void check_finite(const Tensor<Scalar>& t, const char* where) {
  if (!t.all_finite()) throw NumericError(std::string(where) + ": non-finite value in output");
}

namespace detail {

inline void require_rank(const Shape& s, Index rank, const char* op, const char* arg) {
  if (static_cast<Index>(s.size()) != rank)
    throw DimensionError(std::string(op) + ": " + arg + " must have rank " +
                         std::to_string(rank) + ", got " + shape_str(s));
}

inline void require_axis(Index got, Index want, const char* op, const char* what) {
  if (got != want)
    throw DimensionError(std::string(op) + ": axis " + what + " is " + std::to_string(got) +
                         ", expected " + std::to_string(want));
}

struct ConvGeometry {
  Index batch, channels, height, width;
  Index filters, kh, kw;
  Index stride, pad;
  Index out_h, out_w;
  Index patch() const { return channels * kh * kw; }
  Index out_pixels() const { return out_h * out_w; }
};

template <typename Scalar>
ConvGeometry conv_geometry(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                           Index stride, Index pad) {
  require_rank(input.shape(), 4, "conv2d", "input");
  require_rank(kernels.shape(), 4, "conv2d", "kernels");
  require_axis(kernels.dim(1), input.dim(1), "conv2d", "kernels[1] (channels)");
  if (stride < 1 || pad < 0) throw DimensionError("conv2d: stride must be >= 1 and pad >= 0");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                 kernels.dim(0), kernels.dim(2), kernels.dim(3), stride, pad, 0, 0};
  const Index span_h = g.height + 2 * pad - g.kh;
  const Index span_w = g.width + 2 * pad - g.kw;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0)
    throw DimensionError("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                         " stride " + std::to_string(stride) + " pad " + std::to_string(pad) +
                         " does not tile input axes (H,W)=" + std::to_string(g.height) + "," +
                         std::to_string(g.width));
  g.out_h = span_h / stride + 1;
  g.out_w = span_w / stride + 1;
  return g;
}

template <typename Scalar, typename ColMatrix>
void im2col(const Scalar* image, const ConvGeometry& g, ColMatrix& col) {
  col.resize(g.patch(), g.out_pixels());
  for (Index c = 0; c < g.channels; ++c) {
    const Scalar* plane = image + c * g.height * g.width;
    for (Index ky = 0; ky < g.kh; ++ky)
      for (Index kx = 0; kx < g.kw; ++kx) {
        Scalar* row = col.data() + ((c * g.kh + ky) * g.kw + kx) * g.out_pixels();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          Scalar* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, Scalar(0));
            continue;
          }
          const Scalar* src = plane + iy * g.width;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : Scalar(0);
          }
        }
      }
  }
}

template <typename Scalar, typename ColMatrix>
void col2im_add(const ColMatrix& col, const ConvGeometry& g, Scalar* image) {
  for (Index c = 0; c < g.channels; ++c) {
    Scalar* plane = image + c * g.height * g.width;
    for (Index ky = 0; ky < g.kh; ++ky)
      for (Index kx = 0; kx < g.kw; ++kx) {
        const Scalar* row = col.data() + ((c * g.kh + ky) * g.kw + kx) * g.out_pixels();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          Scalar* dst = plane + iy * g.width;
          const Scalar* src = row + oy * g.out_w;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Cross-correlation of [B,C,H,W] input with [K,C,kh,kw] kernels, lowered to
/// one GEMM per image through im2col.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                      const Tensor<Scalar>& bias, Index stride = 1, Index pad = 0) {
  using RowMatrix = typename Tensor<Scalar>::RowMatrix;
  const auto g = detail::conv_geometry(input, kernels, stride, pad);
  detail::require_rank(bias.shape(), 1, "conv2d", "bias");
  detail::require_axis(bias.dim(0), g.filters, "conv2d", "bias[0] (filters)");

  Tensor<Scalar> out({g.batch, g.filters, g.out_h, g.out_w});
  const auto w = kernels.matrix(g.filters, g.patch());
  RowMatrix col;
  const Index in_stride = g.channels * g.height * g.width;
  const Index out_stride = g.filters * g.out_pixels();
  for (Index b = 0; b < g.batch; ++b) {
    detail::im2col(input.data() + b * in_stride, g, col);
    Eigen::Map<RowMatrix> o(out.data() + b * out_stride, g.filters, g.out_pixels());
    o.noalias() = w * col;
    o.colwise() += bias.vec();
  }
  check_finite(out, "conv2d");
  return out;
}

/// Accumulates conv2d gradients. d_input may be null when the input is a
/// leaf that needs no gradient.
template <typename Scalar>
void conv2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels, Index stride,
                     Index pad, const Tensor<Scalar>& d_out, Tensor<Scalar>* d_input,
                     Tensor<Scalar>& d_kernels, Tensor<Scalar>& d_bias) {
  using RowMatrix = typename Tensor<Scalar>::RowMatrix;
  const auto g = detail::conv_geometry(input, kernels, stride, pad);
  if (d_out.shape() != Shape{g.batch, g.filters, g.out_h, g.out_w})
    throw DimensionError("conv2d_backward: d_out shape " + shape_str(d_out.shape()));
  const auto w = kernels.matrix(g.filters, g.patch());
  auto dw = d_kernels.matrix(g.filters, g.patch());
  RowMatrix col, d_col;
  const Index in_stride = g.channels * g.height * g.width;
  const Index out_stride = g.filters * g.out_pixels();
  for (Index b = 0; b < g.batch; ++b) {
    Eigen::Map<const RowMatrix> dy(d_out.data() + b * out_stride, g.filters, g.out_pixels());
    detail::im2col(input.data() + b * in_stride, g, col);
    dw.noalias() += dy * col.transpose();
    d_bias.vec() += dy.rowwise().sum();
    if (d_input) {
      d_col.noalias() = w.transpose() * dy;
      detail::col2im_add(d_col, g, d_input->data() + b * in_stride);
    }
  }
}

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> d_input, d_kernels, d_bias;
};

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                                  Index stride, Index pad, const Tensor<Scalar>& d_out) {
  ConvGrads<Scalar> g{Tensor<Scalar>::zeros_like(input), Tensor<Scalar>::zeros_like(kernels),
                      Tensor<Scalar>({kernels.dim(0)})};
  conv2d_backward(input, kernels, stride, pad, d_out, &g.d_input, g.d_kernels, g.d_bias);
  return g;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2
// ---------------------------------------------------------------------------

struct PoolIndex {
  Shape input_shape;
  std::vector<Index> argmax;  // flat input offset per output element
};

/// Ties go to the lowest flat input index.
template <typename Scalar>
Tensor<Scalar> maxpool2(const Tensor<Scalar>& input, PoolIndex& index) {
  detail::require_rank(input.shape(), 4, "maxpool2", "input");
  const Index B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw DimensionError("maxpool2: spatial axes (H,W)=" + std::to_string(H) + "," +
                         std::to_string(W) + " must be even");
  const Index Ho = H / 2, Wo = W / 2;
  Tensor<Scalar> out({B, C, Ho, Wo});
  index.input_shape = input.shape();
  index.argmax.resize(static_cast<std::size_t>(out.size()));
  const Scalar* in = input.data();
  Index o = 0;
  for (Index plane = 0; plane < B * C; ++plane) {
    const Index base = plane * H * W;
    for (Index oy = 0; oy < Ho; ++oy)
      for (Index ox = 0; ox < Wo; ++ox, ++o) {
        Index best = base + 2 * oy * W + 2 * ox;
        for (Index dy = 0; dy < 2; ++dy)
          for (Index dx = 0; dx < 2; ++dx) {
            const Index at = base + (2 * oy + dy) * W + 2 * ox + dx;
            if (in[at] > in[best]) best = at;
          }
        index.argmax[static_cast<std::size_t>(o)] = best;
        out[o] = in[best];
      }
  }
  check_finite(out, "maxpool2");
  return out;
}

template <typename Scalar>
Tensor<Scalar> maxpool2(const Tensor<Scalar>& input) {
  PoolIndex index;
  return maxpool2(input, index);
}

template <typename Scalar>
Tensor<Scalar> maxpool2_backward(const PoolIndex& index, const Tensor<Scalar>& d_out) {
  Tensor<Scalar> d_in(index.input_shape);
  for (Index o = 0; o < d_out.size(); ++o) d_in[index.argmax[static_cast<std::size_t>(o)]] += d_out[o];
  return d_in;
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                     const Tensor<Scalar>& bias) {
  detail::require_rank(weights.shape(), 2, "dense", "weights");
  detail::require_rank(bias.shape(), 1, "dense", "bias");
  const Index B = input.dim(0), n = input.size() / std::max<Index>(B, 1);
  detail::require_axis(weights.dim(0), n, "dense", "weights[0] (inputs)");
  detail::require_axis(bias.dim(0), weights.dim(1), "dense", "bias[0] (outputs)");
  const Index m = weights.dim(1);
  Tensor<Scalar> out({B, m});
  auto o = out.matrix(B, m);
  o.noalias() = input.matrix(B, n) * weights.matrix(n, m);
  o.rowwise() += bias.vec().transpose();
  check_finite(out, "dense");
  return out;
}

template <typename Scalar>
void dense_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                    const Tensor<Scalar>& d_out, Tensor<Scalar>* d_input,
                    Tensor<Scalar>& d_weights, Tensor<Scalar>& d_bias) {
  const Index B = input.dim(0), n = weights.dim(0), m = weights.dim(1);
  detail::require_axis(d_out.size(), B * m, "dense_backward", "d_out size");
  const auto dy = d_out.matrix(B, m);
  d_weights.matrix(n, m).noalias() += input.matrix(B, n).transpose() * dy;
  d_bias.vec() += dy.colwise().sum().transpose();
  if (d_input) d_input->matrix(B, n).noalias() += dy * weights.matrix(n, m).transpose();
}

template <typename Scalar>
struct DenseGrads {
  Tensor<Scalar> d_input, d_weights, d_bias;
};

template <typename Scalar>
DenseGrads<Scalar> dense_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                                  const Tensor<Scalar>& d_out) {
  DenseGrads<Scalar> g{Tensor<Scalar>::zeros_like(input), Tensor<Scalar>::zeros_like(weights),
                       Tensor<Scalar>({weights.dim(1)})};
  dense_backward(input, weights, d_out, &g.d_input, g.d_weights, g.d_bias);
  return g;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> relu(Tensor<Scalar> x) {
  x.vec() = x.vec().cwiseMax(Scalar(0));
  return x;
}

/// Gradient through relu given its output (or input; both agree on the mask).
template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& y, Tensor<Scalar> dy) {
  dy.vec() = (y.vec().array() > Scalar(0)).select(dy.vec(), Scalar(0));
  return dy;
}

template <typename Scalar>
Tensor<Scalar> tanh(Tensor<Scalar> x) {
  x.vec() = x.vec().array().tanh();
  return x;
}

template <typename Scalar>
Tensor<Scalar> tanh_backward(const Tensor<Scalar>& y, Tensor<Scalar> dy) {
  dy.vec().array() *= Scalar(1) - y.vec().array().square();
  return dy;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(Tensor<Scalar> x) {
  x.vec() = (Scalar(1) + (-x.vec().array()).exp()).inverse();
  return x;
}

template <typename Scalar>
Tensor<Scalar> sigmoid_backward(const Tensor<Scalar>& y, Tensor<Scalar> dy) {
  dy.vec().array() *= y.vec().array() * (Scalar(1) - y.vec().array());
  return dy;
}

/// Softmax over the last axis with max subtraction.
template <typename Scalar>
Tensor<Scalar> softmax(Tensor<Scalar> x) {
  const Index cols = x.dim(x.rank() - 1);
  auto m = x.matrix(x.size() / cols, cols);
  for (Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    row.array() = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  check_finite(x, "softmax");
  return x;
}

template <typename Scalar>
Tensor<Scalar> softmax_backward(const Tensor<Scalar>& y, Tensor<Scalar> dy) {
  const Index cols = y.dim(y.rank() - 1);
  const auto p = y.matrix(y.size() / cols, cols);
  auto d = dy.matrix(y.size() / cols, cols);
  for (Index r = 0; r < p.rows(); ++r) {
    const Scalar dot = p.row(r).dot(d.row(r));
    d.row(r).array() = p.row(r).array() * (d.row(r).array() - dot);
  }
  return dy;
}

}  // namespace glimpse
