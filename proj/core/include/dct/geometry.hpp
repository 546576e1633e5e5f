#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dct::geo {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

using Polygon = std::vector<Vec2>;  // simple, implicitly closed

// Oriented rectangle on the ground plane. heading is radians CCW from +x;
// length runs along the heading axis, width across it.
struct VehicleBox {
  double x = 0.0;
  double y = 0.0;
  double length = 4.0;
  double width = 2.0;
  double heading = 0.0;

  bool contains(double px, double py) const;
  std::array<Vec2, 4> corners() const;
};

// Pinhole intrinsics expressed at a reference canvas resolution; rendering at
// another resolution scales fx,cx by W/canvas_px and fy,cy by H/canvas_px.
// World frame: x right, y forward, z up. The camera sits at (0,0,height)
// pitched down by `pitch` radians, looking along +y.
struct CameraModel {
  double fx = 230.0;
  double fy = 230.0;
  double cx = 128.0;
  double cy = 128.0;
  int64_t canvas_px = 256;
  double height = 1.6;
  double pitch = 0.12;

  // row (continuous, canvas scale `h`,`w`) where the ground meets the sky
  double horizon_row(int64_t h) const;
  // project ground point -> pixel (u=col, v=row); false if behind the camera
  bool ground_to_pixel(double gx, double gy, int64_t h, int64_t w, double& u, double& v) const;
  // back-project pixel -> ground point; false if at/above the horizon
  bool pixel_to_ground(double u, double v, int64_t h, int64_t w, double& gx, double& gy) const;
};

// The BEV window covers x in [-extent/2, extent/2], y in [0, extent] (ahead of
// the camera). Raster row 0 is the far edge (y = extent), column 0 is x = -extent/2.
struct SceneSpec {
  uint64_t seed = 0;
  double extent = 32.0;
  CameraModel camera;
  std::vector<Polygon> roads;
  std::vector<VehicleBox> vehicles;

  std::string to_json() const;             // stable key order
  static SceneSpec from_json(const std::string& text);
};

enum class Difficulty { easy, standard };

// Class-id grid plus the pre-priority coverage masks it was built from.
// Ids index class_set: 0=background, 1=road, 2=vehicle.
struct LayoutRaster {
  int64_t grid_size = 0;
  double resolution = 0.0;  // meters per cell
  std::vector<std::string> class_set;
  std::vector<uint8_t> classes;           // grid_size^2, row-major
  std::vector<uint8_t> road_coverage;     // 1 where any road polygon covers the cell
  std::vector<uint8_t> vehicle_coverage;  // 1 where any vehicle covers the cell

  uint8_t at(int64_t row, int64_t col) const { return classes[static_cast<size_t>(row * grid_size + col)]; }
};

// [0,1] floats, planar CHW (3 channels).
struct FrontViewImage {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<float> pixels;

  float at(int64_t c, int64_t row, int64_t col) const {
    return pixels[static_cast<size_t>((c * height + row) * width + col)];
  }
  float& at(int64_t c, int64_t row, int64_t col) {
    return pixels[static_cast<size_t>((c * height + row) * width + col)];
  }
};

// Flat base colors; the task is solvable from color + position cues alone.
inline constexpr std::array<float, 3> kSkyColor{0.55f, 0.75f, 0.95f};
inline constexpr std::array<float, 3> kGroundColor{0.35f, 0.33f, 0.30f};
inline constexpr std::array<float, 3> kRoadColor{0.12f, 0.12f, 0.14f};
inline constexpr std::array<float, 3> kVehicleColor{0.85f, 0.15f, 0.10f};

inline const std::vector<std::string>& layout_class_set() {
  static const std::vector<std::string> s{"background", "road", "vehicle"};
  return s;
}

bool point_in_polygon(const Polygon& poly, double x, double y);

SceneSpec generate_scene(uint64_t seed, Difficulty difficulty);

// Point-samples cell centers; vehicles win over roads where both cover a cell.
LayoutRaster rasterize_bev(const SceneSpec& scene, int64_t grid_size);

// Paints the ground plane through the camera homography. Throws
// std::invalid_argument("degenerate camera...") when the horizon row falls
// outside [0, height). Deterministic given (scene.seed, noise_std).
FrontViewImage render_front_view(const SceneSpec& scene, int64_t height, int64_t width, double noise_std);

}  // namespace dct::geo
