#include "dct/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dct/rng.hpp"

namespace dct::data {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::vector<const DatasetEntry*> DatasetManifest::split_entries(const std::string& split) const {
  std::vector<const DatasetEntry*> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(&e);
  return out;
}

uint64_t split_score(uint64_t split_seed, int64_t id) {
  return splitmix64(hash_combine(splitmix64(split_seed), static_cast<uint64_t>(id)));
}

std::vector<std::string> assign_splits(const std::vector<int64_t>& ids, uint64_t split_seed,
                                       double train_fraction) {
  if (train_fraction < 0.0 || train_fraction > 1.0)
    throw std::invalid_argument("assign_splits: train_fraction outside [0,1]");
  size_t n = ids.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    uint64_t sa = split_score(split_seed, ids[a]), sb = split_score(split_seed, ids[b]);
    return sa != sb ? sa < sb : ids[a] < ids[b];
  });
  size_t n_train = static_cast<size_t>(std::ceil(train_fraction * static_cast<double>(n)));
  std::vector<std::string> out(n);
  for (size_t r = 0; r < n; ++r) out[order[r]] = r < n_train ? "train" : "val";
  return out;
}

namespace {

std::string pad_id(int64_t id) {
  std::ostringstream ss;
  ss << std::setw(4) << std::setfill('0') << id;
  return ss.str();
}

ordered_json manifest_to_json(const DatasetManifest& m) {
  ordered_json j;
  j["format"] = "dct-dataset-v1";
  j["seed"] = m.seed;
  j["split_seed"] = m.split_seed;
  j["difficulty"] = m.difficulty;
  j["image_hw"] = m.image_hw;
  j["grid_size"] = m.grid_size;
  j["extent"] = m.extent;
  j["noise_std"] = m.noise_std;
  j["class_set"] = m.class_set;
  j["entries"] = ordered_json::array();
  for (const auto& e : m.entries) {
    j["entries"].push_back({{"id", e.id},
                            {"image", e.image_file},
                            {"layout", e.layout_file},
                            {"scene", e.scene_file},
                            {"scene_seed", e.scene_seed},
                            {"split", e.split}});
  }
  return j;
}

}  // namespace

DatasetManifest build_dataset(const BuildConfig& cfg) {
  if (cfg.n_scenes < 1) throw std::invalid_argument("build_dataset: n_scenes must be >= 1");
  if (cfg.out_dir.empty()) throw std::invalid_argument("build_dataset: out_dir required");
  fs::create_directories(fs::path(cfg.out_dir) / "images");
  fs::create_directories(fs::path(cfg.out_dir) / "layouts");
  fs::create_directories(fs::path(cfg.out_dir) / "scenes");

  DatasetManifest m;
  m.root = cfg.out_dir;
  m.seed = cfg.seed;
  m.split_seed = cfg.seed;
  m.difficulty = cfg.difficulty == geo::Difficulty::easy ? "easy" : "standard";
  m.image_hw = cfg.image_hw;
  m.grid_size = cfg.grid_size;
  m.noise_std = cfg.noise_std;
  m.class_set = geo::layout_class_set();

  std::vector<int64_t> ids(static_cast<size_t>(cfg.n_scenes));
  for (int64_t i = 0; i < cfg.n_scenes; ++i) ids[static_cast<size_t>(i)] = i;
  std::vector<std::string> splits = assign_splits(ids, m.split_seed, cfg.train_fraction);

  for (int64_t i = 0; i < cfg.n_scenes; ++i) {
    uint64_t scene_seed = hash_combine(splitmix64(cfg.seed), static_cast<uint64_t>(i));
    geo::SceneSpec scene = geo::generate_scene(scene_seed, cfg.difficulty);
    m.extent = scene.extent;
    geo::LayoutRaster raster = geo::rasterize_bev(scene, cfg.grid_size);
    geo::FrontViewImage img = geo::render_front_view(scene, cfg.image_hw, cfg.image_hw, cfg.noise_std);

    DatasetEntry e;
    e.id = i;
    e.scene_seed = scene_seed;
    e.image_file = "images/" + pad_id(i) + ".png";
    e.layout_file = "layouts/" + pad_id(i) + ".png";
    e.scene_file = "scenes/" + pad_id(i) + ".json";
    e.split = splits[static_cast<size_t>(i)];

    write_image_png((fs::path(cfg.out_dir) / e.image_file).string(), img);
    write_raster_png((fs::path(cfg.out_dir) / e.layout_file).string(), raster);
    std::ofstream sf(fs::path(cfg.out_dir) / e.scene_file);
    if (!sf) throw std::runtime_error("build_dataset: cannot write " + e.scene_file);
    sf << scene.to_json() << "\n";
    m.entries.push_back(std::move(e));
  }
  save_manifest(m);
  return m;
}

void save_manifest(const DatasetManifest& m) {
  std::ofstream f(fs::path(m.root) / "manifest.json");
  if (!f) throw std::runtime_error("save_manifest: cannot write manifest under " + m.root);
  f << manifest_to_json(m).dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& dataset_dir) {
  std::ifstream f(fs::path(dataset_dir) / "manifest.json");
  if (!f) throw std::runtime_error("load_manifest: no manifest.json under " + dataset_dir);
  ordered_json j = ordered_json::parse(f);
  if (j.value("format", "") != "dct-dataset-v1")
    throw std::runtime_error("load_manifest: unrecognized dataset format");
  DatasetManifest m;
  m.root = dataset_dir;
  m.seed = j.at("seed").get<uint64_t>();
  m.split_seed = j.at("split_seed").get<uint64_t>();
  m.difficulty = j.at("difficulty").get<std::string>();
  m.image_hw = j.at("image_hw").get<int64_t>();
  m.grid_size = j.at("grid_size").get<int64_t>();
  m.extent = j.at("extent").get<double>();
  m.noise_std = j.at("noise_std").get<double>();
  m.class_set = j.at("class_set").get<std::vector<std::string>>();
  for (const auto& je : j.at("entries")) {
    DatasetEntry e;
    e.id = je.at("id").get<int64_t>();
    e.image_file = je.at("image").get<std::string>();
    e.layout_file = je.at("layout").get<std::string>();
    e.scene_file = je.at("scene").get<std::string>();
    e.scene_seed = je.at("scene_seed").get<uint64_t>();
    e.split = je.at("split").get<std::string>();
    for (const std::string* rel : {&e.image_file, &e.layout_file, &e.scene_file})
      if (!fs::exists(fs::path(dataset_dir) / *rel))
        throw std::runtime_error("load_manifest: missing file " + *rel);
    m.entries.push_back(std::move(e));
  }
  return m;
}

Tensor<float> load_image_tensor(const DatasetManifest& m, const DatasetEntry& e) {
  geo::FrontViewImage img = read_image_png((fs::path(m.root) / e.image_file).string());
  Tensor<float> t(Shape{3, img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), t.data());
  return t;
}

SupervisionTensor load_supervision(const DatasetManifest& m, const DatasetEntry& e, Mode mode,
                                   TargetClass target) {
  std::ifstream sf(fs::path(m.root) / e.scene_file);
  if (!sf) throw std::runtime_error("load_supervision: cannot read " + e.scene_file);
  std::stringstream buf;
  buf << sf.rdbuf();
  geo::SceneSpec scene = geo::SceneSpec::from_json(buf.str());
  geo::LayoutRaster raster = geo::rasterize_bev(scene, m.grid_size);
  SupervisionTensor sup =
      mode == Mode::single_class ? render_single_class(raster, target) : render_multi_class(raster);
  if (m.image_hw != m.grid_size) sup = resize_labels(sup, m.image_hw, m.image_hw);
  return sup;
}

}  // namespace dct::data
