#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dct/model.hpp"
#include "dct/tensor.hpp"

namespace dct::ckpt {

// Single-file archive: 8-byte magic "DCTCKPT1", a little-endian u64 manifest
// length, the JSON manifest (config, class set, counters, RNG state, and a
// name -> shape table), then raw little-endian float32 payloads in manifest
// order. Optimizer moments ride along as ordinary tensors named
// "adam.m.<param>" / "adam.v.<param>".
inline constexpr char kMagic[8] = {'D', 'C', 'T', 'C', 'K', 'P', 'T', '1'};

struct Checkpoint {
  model::ModelConfig config;
  std::vector<std::string> class_set;
  std::string mode = "multi_class";
  std::string target_class = "vehicle";  // meaningful in single_class mode
  int64_t epoch = 0;
  int64_t global_step = 0;
  double current_lr = 0.0;
  double best_val_miou = 0.0;
  uint64_t seed = 0;
  std::string rng_state;  // serialized generator, empty if not saved
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

// Validates magic, manifest shapes, and payload size; throws
// std::runtime_error on any mismatch.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dct::ckpt
