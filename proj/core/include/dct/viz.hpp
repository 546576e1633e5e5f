#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dct/geometry.hpp"
#include "dct/png_io.hpp"

namespace dct::viz {

// 24-bit RGB drawing surface
struct Canvas {
  io::ImageU8 img;

  Canvas(int64_t h, int64_t w, uint8_t r = 255, uint8_t g = 255, uint8_t b = 255);
  void set(int64_t y, int64_t x, uint8_t r, uint8_t g, uint8_t b);
  void line(int64_t y0, int64_t x0, int64_t y1, int64_t x1, uint8_t r, uint8_t g, uint8_t b);
  void fill_rect(int64_t y0, int64_t x0, int64_t y1, int64_t x1, uint8_t r, uint8_t g, uint8_t b);
  // 3x5 bitmap glyphs: digits, '.', '-', 'e', 'x'; enough for axis labels
  void text(int64_t y, int64_t x, const std::string& s, uint8_t r, uint8_t g, uint8_t b, int scale = 1);
};

// Line plot of per-step values with min/max axis labels.
void plot_curve(const std::vector<double>& values, const std::string& title_number_hint,
                const std::string& out_png, int64_t height = 320, int64_t width = 640);

// class id -> display color (0 background, 1 road, 2 vehicle; single-class
// foreground uses the target class color)
std::array<uint8_t, 3> class_color(uint8_t cls);

// image | prediction | ground truth side by side (gt optional: pass empty)
io::ImageU8 compose_prediction(const geo::FrontViewImage& image, const std::vector<uint8_t>& pred,
                               const std::vector<uint8_t>& gt, int64_t map_hw);

// [0,1] scores to an 8-bit grayscale image
io::ImageU8 probability_map(const std::vector<double>& scores, int64_t hw);

}  // namespace dct::viz
