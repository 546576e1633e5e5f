#pragma once

#include <string>
#include <vector>

#include "dct/geometry.hpp"
#include "dct/tensor.hpp"

namespace dct::data {

enum class Mode { single_class, multi_class };
enum class TargetClass { vehicle, road };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& s);
std::string target_class_name(TargetClass t);
TargetClass target_class_from_name(const std::string& s);

// Always 3 channels: multi-class is one-hot over {background, road, vehicle}
// (channel index = class id); single-class repeats one binary foreground map
// across all three channels.
struct SupervisionTensor {
  Tensor<float> data;  // [3,H,W]
  Mode mode = Mode::multi_class;
  std::vector<std::string> class_set;

  int64_t height() const { return data.dim(1); }
  int64_t width() const { return data.dim(2); }
};

// Foreground/background map for one task. Road supervision uses the raster's
// pre-priority road coverage so cells occupied by vehicles still count as road
// for the road task.
SupervisionTensor render_single_class(const geo::LayoutRaster& raster, TargetClass target);

SupervisionTensor render_multi_class(const geo::LayoutRaster& raster);

// Nearest-neighbor; label maps must stay crisp (no soft values).
SupervisionTensor resize_labels(const SupervisionTensor& t, int64_t new_h, int64_t new_w);

// One-hot training target with the class axis sized for the model head:
// single-class -> [2,H,W] {background, foreground}; multi-class -> data as-is.
Tensor<float> target_onehot(const SupervisionTensor& t);

// Per-pixel class ids recovered from a supervision tensor (argmax for
// multi-class, foreground threshold for single-class).
std::vector<uint8_t> supervision_to_classes(const SupervisionTensor& t);

// PNG round-trip for class-id grids (pixel value = class index).
void write_raster_png(const std::string& path, const geo::LayoutRaster& raster);
geo::LayoutRaster read_raster_png(const std::string& path);

void write_image_png(const std::string& path, const geo::FrontViewImage& img);
geo::FrontViewImage read_image_png(const std::string& path);

}  // namespace dct::data
