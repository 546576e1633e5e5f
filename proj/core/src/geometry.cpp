#include "dct/geometry.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "dct/rng.hpp"

namespace dct::geo {

using ordered_json = nlohmann::ordered_json;

bool VehicleBox::contains(double px, double py) const {
  double dx = px - x, dy = py - y;
  double c = std::cos(heading), s = std::sin(heading);
  double u = c * dx + s * dy;   // along the length axis
  double v = -s * dx + c * dy;  // across
  return std::abs(u) <= length * 0.5 && std::abs(v) <= width * 0.5;
}

std::array<Vec2, 4> VehicleBox::corners() const {
  double c = std::cos(heading), s = std::sin(heading);
  double hl = length * 0.5, hw = width * 0.5;
  auto corner = [&](double u, double v) { return Vec2{x + c * u - s * v, y + s * u + c * v}; };
  return {corner(hl, hw), corner(hl, -hw), corner(-hl, -hw), corner(-hl, hw)};
}

bool point_in_polygon(const Polygon& poly, double x, double y) {
  // even-odd crossing rule
  bool inside = false;
  size_t n = poly.size();
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[j];
    if ((a.y > y) != (b.y > y)) {
      double t = (y - a.y) / (b.y - a.y);
      if (x < a.x + t * (b.x - a.x)) inside = !inside;
    }
  }
  return inside;
}

double CameraModel::horizon_row(int64_t h) const {
  double sy = static_cast<double>(h) / static_cast<double>(canvas_px);
  return cy * sy - fy * sy * std::tan(pitch);
}

bool CameraModel::ground_to_pixel(double gx, double gy, int64_t h, int64_t w, double& u, double& v) const {
  double sx = static_cast<double>(w) / static_cast<double>(canvas_px);
  double sy = static_cast<double>(h) / static_cast<double>(canvas_px);
  double cphi = std::cos(pitch), sphi = std::sin(pitch);
  // camera frame: z forward, y down; camera center at (0,0,height)
  double zc = gy * cphi + height * sphi;
  if (zc <= 1e-9) return false;
  double yc = -gy * sphi + height * cphi;
  u = cx * sx + fx * sx * (gx / zc);
  v = cy * sy + fy * sy * (yc / zc);
  return true;
}

bool CameraModel::pixel_to_ground(double u, double v, int64_t h, int64_t w, double& gx, double& gy) const {
  double sx = static_cast<double>(w) / static_cast<double>(canvas_px);
  double sy = static_cast<double>(h) / static_cast<double>(canvas_px);
  double cphi = std::cos(pitch), sphi = std::sin(pitch);
  double a = (u - cx * sx) / (fx * sx);
  double b = (v - cy * sy) / (fy * sy);
  double den = b * cphi + sphi;
  if (den <= 1e-9) return false;  // at or above the horizon
  gy = height * (cphi - b * sphi) / den;
  double zc = gy * cphi + height * sphi;
  gx = a * zc;
  return true;
}

// --- scene generation -------------------------------------------------------

namespace {

constexpr uint64_t kTagScene = 0x5343454e45ull;   // "SCENE"
constexpr uint64_t kTagNoise = 0x4e4f495345ull;   // "NOISE"

// quad strip around a centerline from (x0,y0) to (x1,y1)
Polygon road_strip(double x0, double y0, double x1, double y1, double half_width) {
  double dx = x1 - x0, dy = y1 - y0;
  double len = std::hypot(dx, dy);
  double nx = -dy / len * half_width, ny = dx / len * half_width;
  return Polygon{{x0 + nx, y0 + ny}, {x1 + nx, y1 + ny}, {x1 - nx, y1 - ny}, {x0 - nx, y0 - ny}};
}

bool box_inside_window(const VehicleBox& b, double extent) {
  for (const Vec2& c : b.corners()) {
    if (c.x < -extent / 2 + 0.05 || c.x > extent / 2 - 0.05) return false;
    if (c.y < 0.05 || c.y > extent - 0.05) return false;
  }
  return true;
}

}  // namespace

SceneSpec generate_scene(uint64_t seed, Difficulty difficulty) {
  SceneSpec scene;
  scene.seed = seed;
  scene.extent = 32.0;
  scene.camera = CameraModel{};
  Rng rng(hash_combine(splitmix64(seed), kTagScene));
  double e = scene.extent;

  if (difficulty == Difficulty::easy) {
    // one straight road running away from the camera, 1..2 vehicles on it
    double xc = rng.uniform(-2.0, 2.0);
    double hw = rng.uniform(2.0, 3.5);
    scene.roads.push_back(road_strip(xc, 0.0, xc, e, hw));
    int n_vehicles = 1 + static_cast<int>(rng.uniform_int(2));
    for (int i = 0; i < n_vehicles; ++i) {
      for (int attempt = 0; attempt < 64; ++attempt) {
        VehicleBox box;
        box.length = rng.uniform(3.5, 5.0);
        box.width = rng.uniform(1.8, 2.2);
        box.heading = 3.14159265358979323846 / 2 + rng.uniform(-0.15, 0.15);
        box.x = xc + rng.uniform(-(hw - 1.4), hw - 1.4);
        box.y = rng.uniform(0.25 * e, 0.70 * e);
        if (box_inside_window(box, e)) {
          scene.vehicles.push_back(box);
          break;
        }
      }
    }
  } else {
    int n_roads = 1 + static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < n_roads; ++i) {
      double x0 = rng.uniform(-e / 4, e / 4);
      double slant = rng.uniform(-0.45, 0.45);
      double x1 = x0 + std::tan(slant) * e;
      double hw = rng.uniform(1.8, 3.5);
      scene.roads.push_back(road_strip(x0, 0.0, x1, e, hw));
    }
    int n_vehicles = static_cast<int>(rng.uniform_int(7));
    for (int i = 0; i < n_vehicles; ++i) {
      for (int attempt = 0; attempt < 64; ++attempt) {
        VehicleBox box;
        box.length = rng.uniform(3.2, 5.2);
        box.width = rng.uniform(1.6, 2.4);
        box.heading = rng.uniform(0.0, 2 * 3.14159265358979323846);
        box.x = rng.uniform(-e / 2 + 3.0, e / 2 - 3.0);
        box.y = rng.uniform(3.0, e - 3.0);
        if (box_inside_window(box, e)) {
          scene.vehicles.push_back(box);
          break;
        }
      }
    }
  }
  return scene;
}

LayoutRaster rasterize_bev(const SceneSpec& scene, int64_t grid_size) {
  if (grid_size < 8) throw std::invalid_argument("rasterize_bev: grid_size must be >= 8");
  LayoutRaster r;
  r.grid_size = grid_size;
  r.resolution = scene.extent / static_cast<double>(grid_size);
  r.class_set = layout_class_set();
  size_t n = static_cast<size_t>(grid_size * grid_size);
  r.classes.assign(n, 0);
  r.road_coverage.assign(n, 0);
  r.vehicle_coverage.assign(n, 0);

  for (int64_t i = 0; i < grid_size; ++i) {
    double gy = scene.extent - (static_cast<double>(i) + 0.5) * r.resolution;  // row 0 is far
    for (int64_t j = 0; j < grid_size; ++j) {
      double gx = -scene.extent / 2 + (static_cast<double>(j) + 0.5) * r.resolution;
      size_t idx = static_cast<size_t>(i * grid_size + j);
      for (const auto& road : scene.roads) {
        if (point_in_polygon(road, gx, gy)) {
          r.road_coverage[idx] = 1;
          break;
        }
      }
      for (const auto& box : scene.vehicles) {
        if (box.contains(gx, gy)) {
          r.vehicle_coverage[idx] = 1;
          break;
        }
      }
      r.classes[idx] = r.vehicle_coverage[idx] ? 2 : (r.road_coverage[idx] ? 1 : 0);
    }
  }
  return r;
}

FrontViewImage render_front_view(const SceneSpec& scene, int64_t height, int64_t width, double noise_std) {
  if (noise_std < 0) throw std::invalid_argument("render_front_view: noise_std must be >= 0");
  if (height <= 0 || width <= 0) throw std::invalid_argument("render_front_view: bad dimensions");
  const CameraModel& cam = scene.camera;
  double horizon = cam.horizon_row(height);
  if (!(horizon >= 0.0 && horizon < static_cast<double>(height)))
    throw std::invalid_argument("degenerate camera: horizon row " + std::to_string(horizon) +
                                " outside image of height " + std::to_string(height));

  FrontViewImage img;
  img.height = height;
  img.width = width;
  img.pixels.assign(static_cast<size_t>(3 * height * width), 0.0f);

  for (int64_t i = 0; i < height; ++i) {
    double v = static_cast<double>(i) + 0.5;
    for (int64_t j = 0; j < width; ++j) {
      double u = static_cast<double>(j) + 0.5;
      const std::array<float, 3>* color = &kSkyColor;
      double gx, gy;
      if (cam.pixel_to_ground(u, v, height, width, gx, gy)) {
        color = &kGroundColor;
        for (const auto& road : scene.roads) {
          if (point_in_polygon(road, gx, gy)) {
            color = &kRoadColor;
            break;
          }
        }
        for (const auto& box : scene.vehicles) {
          if (box.contains(gx, gy)) {
            color = &kVehicleColor;
            break;
          }
        }
      }
      for (int64_t c = 0; c < 3; ++c) img.at(c, i, j) = (*color)[static_cast<size_t>(c)];
    }
  }

  if (noise_std > 0) {
    Rng rng(hash_combine(splitmix64(scene.seed), kTagNoise));
    for (float& p : img.pixels) {
      p = static_cast<float>(p + rng.normal(0.0, noise_std));
      p = std::clamp(p, 0.0f, 1.0f);
    }
  }
  return img;
}

// --- JSON -------------------------------------------------------------------

std::string SceneSpec::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["extent"] = extent;
  j["camera"] = {{"fx", camera.fx},           {"fy", camera.fy},     {"cx", camera.cx},
                 {"cy", camera.cy},           {"canvas_px", camera.canvas_px},
                 {"height", camera.height},   {"pitch", camera.pitch}};
  j["roads"] = ordered_json::array();
  for (const auto& road : roads) {
    ordered_json poly = ordered_json::array();
    for (const auto& p : road) poly.push_back({p.x, p.y});
    j["roads"].push_back(poly);
  }
  j["vehicles"] = ordered_json::array();
  for (const auto& b : vehicles) {
    j["vehicles"].push_back({{"x", b.x},
                             {"y", b.y},
                             {"length", b.length},
                             {"width", b.width},
                             {"heading", b.heading}});
  }
  return j.dump(2);
}

SceneSpec SceneSpec::from_json(const std::string& text) {
  ordered_json j = ordered_json::parse(text);
  SceneSpec s;
  s.seed = j.at("seed").get<uint64_t>();
  s.extent = j.at("extent").get<double>();
  const auto& c = j.at("camera");
  s.camera.fx = c.at("fx").get<double>();
  s.camera.fy = c.at("fy").get<double>();
  s.camera.cx = c.at("cx").get<double>();
  s.camera.cy = c.at("cy").get<double>();
  s.camera.canvas_px = c.at("canvas_px").get<int64_t>();
  s.camera.height = c.at("height").get<double>();
  s.camera.pitch = c.at("pitch").get<double>();
  for (const auto& poly : j.at("roads")) {
    Polygon road;
    for (const auto& p : poly) road.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    s.roads.push_back(std::move(road));
  }
  for (const auto& b : j.at("vehicles")) {
    VehicleBox box;
    box.x = b.at("x").get<double>();
    box.y = b.at("y").get<double>();
    box.length = b.at("length").get<double>();
    box.width = b.at("width").get<double>();
    box.heading = b.at("heading").get<double>();
    s.vehicles.push_back(box);
  }
  return s;
}

}  // namespace dct::geo
