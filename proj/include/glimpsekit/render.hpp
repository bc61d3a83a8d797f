#pragma once

#include "glimpsekit/stn.hpp"
#include "glimpsekit/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace glimpse {

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit RGB raster.
struct Image {
  Index width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  Image(Index w, Index h) : width(w), height(h), pixels(static_cast<std::size_t>(w * h * 3), 0) {}
  void set(Index x, Index y, Rgb c);
  Rgb at(Index x, Index y) const;
  void write_ppm(const std::string& path) const;
};

/// Grayscale canvas [1,H,W] in [0,1], upscaled by an integer factor.
Image gray_image(const TensorF& canvas, Index scale);

void draw_line(Image& img, double x0, double y0, double x1, double y1, Rgb c);
/// Closed polygon through the four window corners (canvas pixel units).
void draw_quad(Image& img, const std::array<std::array<double, 2>, 4>& corners, double scale, Rgb c);
/// Digits and letters from a 3x5 bitmap font; unknown glyphs are skipped.
void draw_text(Image& img, Index x, Index y, const std::string& text, Index size, Rgb c);

/// Distinct color for glimpse step t.
Rgb step_color(Index t);
inline constexpr Rgb kGroundTruthColor{0, 255, 0};

/// Canvas with one quadrilateral per read, optional ground-truth boxes and
/// a caption line.
Image render_glimpses(const TensorF& canvas, const std::vector<AffineParams<double>>& reads,
                      const std::vector<Box>& ground_truth, const std::string& caption, Index scale = 4);

}  // namespace glimpse
