#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dct/geometry.hpp"
#include "dct/supervision.hpp"
#include "dct/tensor.hpp"

namespace dct::data {

struct DatasetEntry {
  int64_t id = 0;
  std::string image_file;   // relative to root
  std::string layout_file;
  std::string scene_file;
  uint64_t scene_seed = 0;
  std::string split;        // "train" | "val"
};

struct DatasetManifest {
  std::string root;
  uint64_t seed = 0;
  uint64_t split_seed = 0;
  std::string difficulty = "easy";
  int64_t image_hw = 256;
  int64_t grid_size = 64;
  double extent = 32.0;
  double noise_std = 0.02;
  std::vector<std::string> class_set;
  std::vector<DatasetEntry> entries;

  std::vector<const DatasetEntry*> split_entries(const std::string& split) const;
};

struct BuildConfig {
  int64_t n_scenes = 0;
  uint64_t seed = 0;
  geo::Difficulty difficulty = geo::Difficulty::easy;
  int64_t image_hw = 256;
  int64_t grid_size = 64;
  double noise_std = 0.02;
  double train_fraction = 0.8;
  std::string out_dir;
};

// Per-id split score; assignment ranks all ids by (score, id) and takes the
// first ceil(train_fraction*n) as train, so fractions are exact and the
// assignment is independent of entry order.
uint64_t split_score(uint64_t split_seed, int64_t id);

std::vector<std::string> assign_splits(const std::vector<int64_t>& ids, uint64_t split_seed,
                                       double train_fraction);

// Writes images/NNNN.png, layouts/NNNN.png, scenes/NNNN.json and manifest.json
// under cfg.out_dir. Deterministic given cfg.
DatasetManifest build_dataset(const BuildConfig& cfg);

DatasetManifest load_manifest(const std::string& dataset_dir);
void save_manifest(const DatasetManifest& m);

// [3,H,W] floats in [0,1]
Tensor<float> load_image_tensor(const DatasetManifest& m, const DatasetEntry& e);

// Re-rasterizes the stored scene (so road coverage under vehicles is exact)
// and renders + nearest-neighbor-resizes supervision to image resolution.
SupervisionTensor load_supervision(const DatasetManifest& m, const DatasetEntry& e, Mode mode,
                                   TargetClass target);

}  // namespace dct::data
