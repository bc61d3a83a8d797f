#pragma once

#include "glimpsekit/tensor.hpp"

#include <array>
#include <cmath>

namespace glimpse {

/// The 2x3 matrix [t1 t2 t3; t4 t5 t6] mapping target mesh points to source
/// coordinates. t1,t5 zoom, t2,t4 skew, t3,t6 translate the grid center.
template <typename Scalar>
struct AffineParams {
  std::array<Scalar, 6> theta{Scalar(1), Scalar(0), Scalar(0), Scalar(0), Scalar(1), Scalar(0)};

  static AffineParams identity() { return {}; }
  static AffineParams zero() { return {{Scalar(0), Scalar(0), Scalar(0), Scalar(0), Scalar(0), Scalar(0)}}; }

  Scalar& operator[](std::size_t k) { return theta[k]; }
  Scalar operator[](std::size_t k) const { return theta[k]; }

  bool all_finite() const {
    for (Scalar v : theta)
      if (!std::isfinite(v)) return false;
    return true;
  }
  bool operator==(const AffineParams&) const = default;
};

/// Source coordinates in normalized [-1,1] space, one (x,y) pair per target
/// pixel, stored as [h, w, 2].
template <typename Scalar>
struct SampleGrid {
  Index height = 0, width = 0;
  Tensor<Scalar> coords;

  Scalar x(Index i, Index j) const { return coords[(i * width + j) * 2]; }
  Scalar y(Index i, Index j) const { return coords[(i * width + j) * 2 + 1]; }
};

/// Uniform mesh over [-1,1]; a single point sits at 0.
template <typename Scalar>
Scalar mesh_coord(Index i, Index n) {
  return n == 1 ? Scalar(0) : Scalar(-1) + Scalar(2) * Scalar(i) / Scalar(n - 1);
}

template <typename Scalar>
SampleGrid<Scalar> make_grid(const AffineParams<Scalar>& a, Index h, Index w) {
  if (h < 1 || w < 1) throw DimensionError("make_grid: grid extents must be >= 1");
  SampleGrid<Scalar> grid{h, w, Tensor<Scalar>({h, w, 2})};
  for (Index i = 0; i < h; ++i) {
    const Scalar yg = mesh_coord<Scalar>(i, h);
    for (Index j = 0; j < w; ++j) {
      const Scalar xg = mesh_coord<Scalar>(j, w);
      grid.coords[(i * w + j) * 2] = a[0] * xg + a[1] * yg + a[2];
      grid.coords[(i * w + j) * 2 + 1] = a[3] * xg + a[4] * yg + a[5];
    }
  }
  return grid;
}

namespace detail {

/// Corner-aligned mapping: -1 is the first pixel center, +1 the last.
template <typename Scalar>
Scalar to_pixel(Scalar normalized, Index extent) {
  return (normalized + Scalar(1)) * Scalar(0.5) * Scalar(extent - 1);
}

// Bilinear kernel footprint of one sample point.
template <typename Scalar>
struct Footprint {
  bool inside = false;  // false when no neighbor lies in the image
  Index x0 = 0, y0 = 0;
  Scalar fx = 0, fy = 0;
};

template <typename Scalar>
Footprint<Scalar> footprint(Scalar xs, Scalar ys, Index H, Index W) {
  const Scalar xp = to_pixel(xs, W), yp = to_pixel(ys, H);
  if (!(xp > Scalar(-1) && xp < Scalar(W) && yp > Scalar(-1) && yp < Scalar(H))) return {};
  const Scalar x0 = std::floor(xp), y0 = std::floor(yp);
  return {true, static_cast<Index>(x0), static_cast<Index>(y0), xp - x0, yp - y0};
}

template <typename Scalar>
Scalar pixel(const Scalar* plane, Index H, Index W, Index y, Index x) {
  return (x >= 0 && x < W && y >= 0 && y < H) ? plane[y * W + x] : Scalar(0);
}

template <typename Scalar>
void sample_planes(const Scalar* image, Index C, Index H, Index W, const SampleGrid<Scalar>& grid,
                   Scalar* out) {
  const Index n = grid.height * grid.width;
  for (Index p = 0; p < n; ++p) {
    const auto f = footprint(grid.coords[2 * p], grid.coords[2 * p + 1], H, W);
    if (!f.inside) {
      for (Index c = 0; c < C; ++c) out[c * n + p] = Scalar(0);
      continue;
    }
    const Scalar w00 = (1 - f.fx) * (1 - f.fy), w01 = f.fx * (1 - f.fy);
    const Scalar w10 = (1 - f.fx) * f.fy, w11 = f.fx * f.fy;
    for (Index c = 0; c < C; ++c) {
      const Scalar* plane = image + c * H * W;
      out[c * n + p] = w00 * pixel(plane, H, W, f.y0, f.x0) +
                       w01 * pixel(plane, H, W, f.y0, f.x0 + 1) +
                       w10 * pixel(plane, H, W, f.y0 + 1, f.x0) +
                       w11 * pixel(plane, H, W, f.y0 + 1, f.x0 + 1);
    }
  }
}

/// Gradient w.r.t. the normalized grid coordinates (and optionally the image).
/// At exact-integer pixel coordinates the one-sided derivative toward the next
/// pixel is used, i.e. floor() decides the cell.
template <typename Scalar>
void sample_planes_backward(const Scalar* image, Index C, Index H, Index W,
                            const SampleGrid<Scalar>& grid, const Scalar* d_out,
                            Scalar* d_grid, Scalar* d_image) {
  const Index n = grid.height * grid.width;
  const Scalar sx = Scalar(0.5) * Scalar(W - 1), sy = Scalar(0.5) * Scalar(H - 1);
  for (Index p = 0; p < n; ++p) {
    const auto f = footprint(grid.coords[2 * p], grid.coords[2 * p + 1], H, W);
    if (!f.inside) {
      d_grid[2 * p] = d_grid[2 * p + 1] = Scalar(0);
      continue;
    }
    Scalar gx = 0, gy = 0;
    for (Index c = 0; c < C; ++c) {
      const Scalar g = d_out[c * n + p];
      if (g == Scalar(0)) continue;
      const Scalar* plane = image + c * H * W;
      const Scalar v00 = pixel(plane, H, W, f.y0, f.x0), v01 = pixel(plane, H, W, f.y0, f.x0 + 1);
      const Scalar v10 = pixel(plane, H, W, f.y0 + 1, f.x0);
      const Scalar v11 = pixel(plane, H, W, f.y0 + 1, f.x0 + 1);
      gx += g * ((1 - f.fy) * (v01 - v00) + f.fy * (v11 - v10));
      gy += g * ((1 - f.fx) * (v10 - v00) + f.fx * (v11 - v01));
      if (d_image) {
        Scalar* dplane = d_image + c * H * W;
        const auto add = [&](Index y, Index x, Scalar v) {
          if (x >= 0 && x < W && y >= 0 && y < H) dplane[y * W + x] += v;
        };
        add(f.y0, f.x0, g * (1 - f.fx) * (1 - f.fy));
        add(f.y0, f.x0 + 1, g * f.fx * (1 - f.fy));
        add(f.y0 + 1, f.x0, g * (1 - f.fx) * f.fy);
        add(f.y0 + 1, f.x0 + 1, g * f.fx * f.fy);
      }
    }
    d_grid[2 * p] = gx * sx;
    d_grid[2 * p + 1] = gy * sy;
  }
}

}  // namespace detail

/// Bilinear read of a [C,H,W] image at the grid; output is [C,h,w].
template <typename Scalar>
Tensor<Scalar> bilinear_sample(const Tensor<Scalar>& image, const SampleGrid<Scalar>& grid) {
  detail::require_rank(image.shape(), 3, "bilinear_sample", "image");
  const Index C = image.dim(0);
  Tensor<Scalar> out({C, grid.height, grid.width});
  detail::sample_planes(image.data(), C, image.dim(1), image.dim(2), grid, out.data());
  return out;
}

template <typename Scalar>
struct SamplerGrads {
  Tensor<Scalar> d_image;
  Tensor<Scalar> d_grid;  // [h, w, 2]
};

template <typename Scalar>
SamplerGrads<Scalar> bilinear_sample_backward(const Tensor<Scalar>& image,
                                              const SampleGrid<Scalar>& grid,
                                              const Tensor<Scalar>& d_out) {
  detail::require_rank(image.shape(), 3, "bilinear_sample_backward", "image");
  if (d_out.shape() != Shape{image.dim(0), grid.height, grid.width})
    throw DimensionError("bilinear_sample_backward: d_out shape " + shape_str(d_out.shape()));
  SamplerGrads<Scalar> g{Tensor<Scalar>::zeros_like(image), Tensor<Scalar>::zeros_like(grid.coords)};
  detail::sample_planes_backward(image.data(), image.dim(0), image.dim(1), image.dim(2), grid,
                                 d_out.data(), g.d_grid.data(), g.d_image.data());
  return g;
}

/// Pulls a grid-coordinate gradient back onto the six affine parameters.
template <typename Scalar>
AffineParams<Scalar> grid_backward(const Tensor<Scalar>& d_grid, Index h, Index w) {
  if (d_grid.size() != h * w * 2) throw DimensionError("grid_backward: d_grid shape " + shape_str(d_grid.shape()));
  auto d = AffineParams<Scalar>::zero();
  for (Index i = 0; i < h; ++i) {
    const Scalar yg = mesh_coord<Scalar>(i, h);
    for (Index j = 0; j < w; ++j) {
      const Scalar xg = mesh_coord<Scalar>(j, w);
      const Scalar dx = d_grid[(i * w + j) * 2], dy = d_grid[(i * w + j) * 2 + 1];
      d[0] += dx * xg;
      d[1] += dx * yg;
      d[2] += dx;
      d[3] += dy * xg;
      d[4] += dy * yg;
      d[5] += dy;
    }
  }
  return d;
}

template <typename Scalar>
AffineParams<Scalar> affine_row(const Tensor<Scalar>& thetas, Index b) {
  AffineParams<Scalar> a;
  for (std::size_t k = 0; k < 6; ++k) a[k] = thetas[b * 6 + static_cast<Index>(k)];
  return a;
}

/// Batched read: images [B,C,H,W], thetas [B,6] -> patches [B,C,h,w].
template <typename Scalar>
Tensor<Scalar> read_glimpses(const Tensor<Scalar>& images, const Tensor<Scalar>& thetas, Index h,
                             Index w) {
  detail::require_rank(images.shape(), 4, "read_glimpses", "images");
  const Index B = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  if (thetas.shape() != Shape{B, 6}) throw DimensionError("read_glimpses: thetas shape " + shape_str(thetas.shape()));
  Tensor<Scalar> out({B, C, h, w});
  for (Index b = 0; b < B; ++b) {
    const auto grid = make_grid(affine_row(thetas, b), h, w);
    detail::sample_planes(images.data() + b * C * H * W, C, H, W, grid, out.data() + b * C * h * w);
  }
  return out;
}

/// Gradient of a batched read w.r.t. thetas; the image is treated as a leaf.
template <typename Scalar>
Tensor<Scalar> read_glimpses_backward(const Tensor<Scalar>& images, const Tensor<Scalar>& thetas,
                                      const Tensor<Scalar>& d_patches) {
  const Index B = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  const Index h = d_patches.dim(2), w = d_patches.dim(3);
  Tensor<Scalar> d_thetas({B, 6});
  Tensor<Scalar> d_grid({h, w, 2});
  for (Index b = 0; b < B; ++b) {
    const auto grid = make_grid(affine_row(thetas, b), h, w);
    detail::sample_planes_backward(images.data() + b * C * H * W, C, H, W, grid,
                                   d_patches.data() + b * C * h * w, d_grid.data(),
                                   static_cast<Scalar*>(nullptr));
    const auto d = grid_backward(d_grid, h, w);
    for (std::size_t k = 0; k < 6; ++k) d_thetas[b * 6 + static_cast<Index>(k)] = d[k];
  }
  return d_thetas;
}

/// Axis-aligned box covered by the glimpse window on an H x W canvas, in
/// pixel-edge units (x from 0 to W). Skewed windows yield their bounding box.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }
};

inline double iou(const Box& a, const Box& b) {
  const Box inter{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
  const double i = (inter.x1 > inter.x0 && inter.y1 > inter.y0) ? inter.area() : 0.0;
  const double u = a.area() + b.area() - i;
  return u > 0 ? i / u : 0.0;
}

/// The four window corners (-1,-1),(1,-1),(1,1),(-1,1) mapped through the
/// transform, in pixel-edge units.
template <typename Scalar>
std::array<std::array<double, 2>, 4> window_corners(const AffineParams<Scalar>& a, Index H, Index W) {
  std::array<std::array<double, 2>, 4> out{};
  const double mesh[4][2] = {{-1, -1}, {1, -1}, {1, 1}, {-1, 1}};
  for (int k = 0; k < 4; ++k) {
    const double xs = double(a[0]) * mesh[k][0] + double(a[1]) * mesh[k][1] + double(a[2]);
    const double ys = double(a[3]) * mesh[k][0] + double(a[4]) * mesh[k][1] + double(a[5]);
    out[static_cast<std::size_t>(k)] = {(xs + 1) * 0.5 * double(W), (ys + 1) * 0.5 * double(H)};
  }
  return out;
}

template <typename Scalar>
Box window_box(const AffineParams<Scalar>& a, Index H, Index W) {
  const auto c = window_corners(a, H, W);
  Box b{c[0][0], c[0][1], c[0][0], c[0][1]};
  for (const auto& p : c) {
    b.x0 = std::min(b.x0, p[0]);
    b.x1 = std::max(b.x1, p[0]);
    b.y0 = std::min(b.y0, p[1]);
    b.y1 = std::max(b.y1, p[1]);
  }
  return b;
}

}  // namespace glimpse
