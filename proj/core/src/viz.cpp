#include "dct/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace dct::viz {

Canvas::Canvas(int64_t h, int64_t w, uint8_t r, uint8_t g, uint8_t b) : img(io::make_image(h, w, 3)) {
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
}

void Canvas::set(int64_t y, int64_t x, uint8_t r, uint8_t g, uint8_t b) {
  if (y < 0 || y >= img.height || x < 0 || x >= img.width) return;
  img.at(y, x, 0) = r;
  img.at(y, x, 1) = g;
  img.at(y, x, 2) = b;
}

void Canvas::line(int64_t y0, int64_t x0, int64_t y1, int64_t x1, uint8_t r, uint8_t g, uint8_t b) {
  int64_t dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  int64_t sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int64_t err = dx + dy;
  while (true) {
    set(y0, x0, r, g, b);
    if (x0 == x1 && y0 == y1) break;
    int64_t e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Canvas::fill_rect(int64_t y0, int64_t x0, int64_t y1, int64_t x1, uint8_t r, uint8_t g, uint8_t b) {
  for (int64_t y = y0; y <= y1; ++y)
    for (int64_t x = x0; x <= x1; ++x) set(y, x, r, g, b);
}

namespace {

// 3x5 glyphs, row-major bits (msb = left column)
struct Glyph {
  char ch;
  uint8_t rows[5];
};

constexpr Glyph kGlyphs[] = {
    {'0', {0b111, 0b101, 0b101, 0b101, 0b111}}, {'1', {0b010, 0b110, 0b010, 0b010, 0b111}},
    {'2', {0b111, 0b001, 0b111, 0b100, 0b111}}, {'3', {0b111, 0b001, 0b111, 0b001, 0b111}},
    {'4', {0b101, 0b101, 0b111, 0b001, 0b001}}, {'5', {0b111, 0b100, 0b111, 0b001, 0b111}},
    {'6', {0b111, 0b100, 0b111, 0b101, 0b111}}, {'7', {0b111, 0b001, 0b010, 0b010, 0b010}},
    {'8', {0b111, 0b101, 0b111, 0b101, 0b111}}, {'9', {0b111, 0b101, 0b111, 0b001, 0b111}},
    {'.', {0b000, 0b000, 0b000, 0b000, 0b010}}, {'-', {0b000, 0b000, 0b111, 0b000, 0b000}},
    {'+', {0b000, 0b010, 0b111, 0b010, 0b000}}, {'e', {0b011, 0b101, 0b111, 0b100, 0b011}},
    {'x', {0b000, 0b101, 0b010, 0b101, 0b000}}, {' ', {0b000, 0b000, 0b000, 0b000, 0b000}},
};

const Glyph* find_glyph(char c) {
  for (const auto& g : kGlyphs)
    if (g.ch == c) return &g;
  return nullptr;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace

void Canvas::text(int64_t y, int64_t x, const std::string& s, uint8_t r, uint8_t g, uint8_t b, int scale) {
  int64_t cursor = x;
  for (char c : s) {
    const Glyph* gl = find_glyph(c);
    if (gl) {
      for (int row = 0; row < 5; ++row)
        for (int col = 0; col < 3; ++col)
          if (gl->rows[row] & (0b100 >> col))
            for (int dy = 0; dy < scale; ++dy)
              for (int dx = 0; dx < scale; ++dx)
                set(y + row * scale + dy, cursor + col * scale + dx, r, g, b);
    }
    cursor += 4 * scale;
  }
}

void plot_curve(const std::vector<double>& values, const std::string& title_number_hint,
                const std::string& out_png, int64_t height, int64_t width) {
  if (values.empty()) throw std::invalid_argument("plot_curve: no values");
  Canvas canvas(height, width);
  int64_t margin = 28;
  int64_t py0 = margin, py1 = height - margin, px0 = margin + 12, px1 = width - margin / 2;

  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) hi = lo + 1.0;

  canvas.line(py0, px0, py1, px0, 0, 0, 0);
  canvas.line(py1, px0, py1, px1, 0, 0, 0);

  auto to_y = [&](double v) {
    return py1 - static_cast<int64_t>(std::llround((v - lo) / (hi - lo) * static_cast<double>(py1 - py0)));
  };
  auto to_x = [&](size_t i) {
    if (values.size() == 1) return px0;
    return px0 + static_cast<int64_t>(std::llround(static_cast<double>(i) /
                                                   static_cast<double>(values.size() - 1) *
                                                   static_cast<double>(px1 - px0)));
  };
  for (size_t i = 1; i < values.size(); ++i)
    canvas.line(to_y(values[i - 1]), to_x(i - 1), to_y(values[i]), to_x(i), 180, 40, 40);

  canvas.text(py0 - 6, 2, format_number(hi), 0, 0, 0);
  canvas.text(py1 - 2, 2, format_number(lo), 0, 0, 0);
  canvas.text(py1 + 8, px1 - 40, format_number(static_cast<double>(values.size())), 0, 0, 0);
  if (!title_number_hint.empty()) canvas.text(6, px0 + 8, title_number_hint, 60, 60, 60);
  io::write_png(out_png, canvas.img);
}

std::array<uint8_t, 3> class_color(uint8_t cls) {
  auto scale = [](const std::array<float, 3>& c) {
    return std::array<uint8_t, 3>{static_cast<uint8_t>(c[0] * 255), static_cast<uint8_t>(c[1] * 255),
                                  static_cast<uint8_t>(c[2] * 255)};
  };
  switch (cls) {
    case 1: return scale(geo::kRoadColor);
    case 2: return scale(geo::kVehicleColor);
    default: return scale(geo::kGroundColor);
  }
}

io::ImageU8 compose_prediction(const geo::FrontViewImage& image, const std::vector<uint8_t>& pred,
                               const std::vector<uint8_t>& gt, int64_t map_hw) {
  if (pred.size() != static_cast<size_t>(map_hw * map_hw))
    throw std::invalid_argument("compose_prediction: prediction size mismatch");
  bool with_gt = !gt.empty();
  if (with_gt && gt.size() != pred.size())
    throw std::invalid_argument("compose_prediction: gt size mismatch");

  int64_t panel = std::max(image.height, map_hw);
  int64_t panels = with_gt ? 3 : 2;
  int64_t gap = 4;
  io::ImageU8 out = io::make_image(panel, panels * panel + (panels - 1) * gap, 3);

  // left: the front-view input (nearest resize to panel size)
  for (int64_t y = 0; y < panel; ++y)
    for (int64_t x = 0; x < panel; ++x) {
      int64_t sy = std::min(y * image.height / panel, image.height - 1);
      int64_t sx = std::min(x * image.width / panel, image.width - 1);
      for (int64_t c = 0; c < 3; ++c)
        out.at(y, x, c) = static_cast<uint8_t>(std::clamp(image.at(c, sy, sx) * 255.0f, 0.0f, 255.0f));
    }

  auto draw_map = [&](const std::vector<uint8_t>& classes, int64_t x_off) {
    for (int64_t y = 0; y < panel; ++y)
      for (int64_t x = 0; x < panel; ++x) {
        int64_t sy = std::min(y * map_hw / panel, map_hw - 1);
        int64_t sx = std::min(x * map_hw / panel, map_hw - 1);
        auto rgb = class_color(classes[static_cast<size_t>(sy * map_hw + sx)]);
        for (int64_t c = 0; c < 3; ++c) out.at(y, x_off + x, c) = rgb[static_cast<size_t>(c)];
      }
  };
  draw_map(pred, panel + gap);
  if (with_gt) draw_map(gt, 2 * (panel + gap));
  return out;
}

io::ImageU8 probability_map(const std::vector<double>& scores, int64_t hw) {
  if (scores.size() != static_cast<size_t>(hw * hw))
    throw std::invalid_argument("probability_map: size mismatch");
  io::ImageU8 out = io::make_image(hw, hw, 1);
  for (size_t i = 0; i < scores.size(); ++i)
    out.pixels[i] = static_cast<uint8_t>(std::clamp(scores[i], 0.0, 1.0) * 255.0);
  return out;
}

}  // namespace dct::viz
