#include "dct/supervision.hpp"

#include <cmath>
#include <stdexcept>

#include "dct/png_io.hpp"

namespace dct::data {

std::string mode_name(Mode m) { return m == Mode::single_class ? "single_class" : "multi_class"; }

Mode mode_from_name(const std::string& s) {
  if (s == "single_class") return Mode::single_class;
  if (s == "multi_class") return Mode::multi_class;
  throw std::invalid_argument("unknown mode: " + s);
}

std::string target_class_name(TargetClass t) { return t == TargetClass::vehicle ? "vehicle" : "road"; }

TargetClass target_class_from_name(const std::string& s) {
  if (s == "vehicle") return TargetClass::vehicle;
  if (s == "road") return TargetClass::road;
  throw std::invalid_argument("unknown target class: " + s);
}

SupervisionTensor render_single_class(const geo::LayoutRaster& raster, TargetClass target) {
  if (raster.class_set.size() != 3)
    throw std::invalid_argument("render_single_class: raster must use the 3-class set");
  int64_t g = raster.grid_size;
  SupervisionTensor out;
  out.mode = Mode::single_class;
  out.class_set = {"background", "foreground"};
  out.data = Tensor<float>(Shape{3, g, g});
  const std::vector<uint8_t>& fg =
      target == TargetClass::vehicle ? raster.vehicle_coverage : raster.road_coverage;
  if (fg.size() != static_cast<size_t>(g * g))
    throw std::invalid_argument("render_single_class: raster coverage masks missing");
  for (int64_t i = 0; i < g * g; ++i) {
    float v = fg[static_cast<size_t>(i)] ? 1.0f : 0.0f;
    out.data[i] = v;
    out.data[g * g + i] = v;
    out.data[2 * g * g + i] = v;
  }
  return out;
}

SupervisionTensor render_multi_class(const geo::LayoutRaster& raster) {
  if (raster.class_set.size() != 3)
    throw std::invalid_argument("render_multi_class: raster must use the 3-class set");
  int64_t g = raster.grid_size;
  SupervisionTensor out;
  out.mode = Mode::multi_class;
  out.class_set = raster.class_set;
  out.data = Tensor<float>::zeros(Shape{3, g, g});
  for (int64_t i = 0; i < g * g; ++i) {
    uint8_t cls = raster.classes[static_cast<size_t>(i)];
    if (cls >= 3) throw std::invalid_argument("render_multi_class: class id out of range");
    out.data[cls * g * g + i] = 1.0f;
  }
  return out;
}

SupervisionTensor resize_labels(const SupervisionTensor& t, int64_t new_h, int64_t new_w) {
  if (new_h <= 0 || new_w <= 0) throw std::invalid_argument("resize_labels: target dims must be positive");
  int64_t h = t.height(), w = t.width();
  SupervisionTensor out;
  out.mode = t.mode;
  out.class_set = t.class_set;
  out.data = Tensor<float>(Shape{3, new_h, new_w});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < new_h; ++i) {
      int64_t si = std::min(i * h / new_h, h - 1);
      for (int64_t j = 0; j < new_w; ++j) {
        int64_t sj = std::min(j * w / new_w, w - 1);
        out.data.at3(c, i, j) = t.data.at3(c, si, sj);
      }
    }
  return out;
}

Tensor<float> target_onehot(const SupervisionTensor& t) {
  int64_t h = t.height(), w = t.width();
  if (t.mode == Mode::multi_class) return t.data;
  Tensor<float> out(Shape{2, h, w});
  for (int64_t i = 0; i < h * w; ++i) {
    float fg = t.data[i];
    out[i] = 1.0f - fg;      // background
    out[h * w + i] = fg;     // foreground
  }
  return out;
}

std::vector<uint8_t> supervision_to_classes(const SupervisionTensor& t) {
  int64_t h = t.height(), w = t.width();
  std::vector<uint8_t> out(static_cast<size_t>(h * w), 0);
  if (t.mode == Mode::single_class) {
    for (int64_t i = 0; i < h * w; ++i) out[static_cast<size_t>(i)] = t.data[i] > 0.5f ? 1 : 0;
  } else {
    for (int64_t i = 0; i < h * w; ++i) {
      int best = 0;
      float best_v = t.data[i];
      for (int c = 1; c < 3; ++c) {
        float v = t.data[c * h * w + i];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out[static_cast<size_t>(i)] = static_cast<uint8_t>(best);
    }
  }
  return out;
}

void write_raster_png(const std::string& path, const geo::LayoutRaster& raster) {
  int64_t g = raster.grid_size;
  io::ImageU8 img = io::make_image(g, g, 1);
  for (int64_t i = 0; i < g * g; ++i) img.pixels[static_cast<size_t>(i)] = raster.classes[static_cast<size_t>(i)];
  io::write_png(path, img);
}

geo::LayoutRaster read_raster_png(const std::string& path) {
  io::ImageU8 img = io::read_png(path);
  if (img.channels != 1 || img.height != img.width)
    throw std::invalid_argument("read_raster_png: expected square single-channel PNG: " + path);
  geo::LayoutRaster r;
  r.grid_size = img.height;
  r.resolution = 0.0;  // unknown from pixels alone; the dataset manifest carries it
  r.class_set = geo::layout_class_set();
  size_t n = img.pixels.size();
  r.classes.assign(img.pixels.begin(), img.pixels.end());
  r.road_coverage.assign(n, 0);
  r.vehicle_coverage.assign(n, 0);
  // Coverage re-derived from labels loses road cells hidden under vehicles;
  // loaders that need the pre-priority masks re-rasterize from the scene JSON.
  for (size_t i = 0; i < n; ++i) {
    if (r.classes[i] == 1) r.road_coverage[i] = 1;
    if (r.classes[i] == 2) r.vehicle_coverage[i] = 1;
    if (r.classes[i] > 2) throw std::invalid_argument("read_raster_png: pixel value exceeds class count");
  }
  return r;
}

void write_image_png(const std::string& path, const geo::FrontViewImage& img) {
  io::ImageU8 out = io::make_image(img.height, img.width, 3);
  for (int64_t i = 0; i < img.height; ++i)
    for (int64_t j = 0; j < img.width; ++j)
      for (int64_t c = 0; c < 3; ++c) {
        float v = std::round(img.at(c, i, j) * 255.0f);
        out.at(i, j, c) = static_cast<uint8_t>(std::clamp(v, 0.0f, 255.0f));
      }
  io::write_png(path, out);
}

geo::FrontViewImage read_image_png(const std::string& path) {
  io::ImageU8 in = io::read_png(path);
  geo::FrontViewImage img;
  img.height = in.height;
  img.width = in.width;
  img.pixels.assign(static_cast<size_t>(3 * in.height * in.width), 0.0f);
  for (int64_t i = 0; i < in.height; ++i)
    for (int64_t j = 0; j < in.width; ++j)
      for (int64_t c = 0; c < 3; ++c) {
        uint8_t v = in.channels == 3 ? in.at(i, j, c) : in.at(i, j, 0);
        img.at(c, i, j) = static_cast<float>(v) / 255.0f;
      }
  return img;
}

}  // namespace dct::data
