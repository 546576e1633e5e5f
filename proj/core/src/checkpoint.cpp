#include "dct/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dct::ckpt {

namespace {

void write_u64_le(std::ostream& os, uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

uint64_t read_u64_le(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

void write_f32_le(std::ostream& os, const float* data, int64_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), n * 4);
  } else {
    for (int64_t i = 0; i < n; ++i) {
      uint32_t bits = std::bit_cast<uint32_t>(data[i]);
      char buf[4];
      for (int k = 0; k < 4; ++k) buf[k] = static_cast<char>((bits >> (8 * k)) & 0xff);
      os.write(buf, 4);
    }
  }
}

void read_f32_le(std::istream& is, float* data, int64_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(data), n * 4);
    if (!is) throw std::runtime_error("checkpoint: truncated tensor payload");
  } else {
    std::vector<unsigned char> buf(static_cast<size_t>(n) * 4);
    is.read(reinterpret_cast<char*>(buf.data()), n * 4);
    if (!is) throw std::runtime_error("checkpoint: truncated tensor payload");
    for (int64_t i = 0; i < n; ++i) {
      uint32_t bits = 0;
      for (int k = 0; k < 4; ++k) bits |= static_cast<uint32_t>(buf[static_cast<size_t>(i * 4 + k)]) << (8 * k);
      data[i] = std::bit_cast<float>(bits);
    }
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::ordered_json manifest;
  manifest["model_config"] = ckpt.config.to_json();
  manifest["class_set"] = ckpt.class_set;
  manifest["mode"] = ckpt.mode;
  manifest["target_class"] = ckpt.target_class;
  manifest["epoch"] = ckpt.epoch;
  manifest["global_step"] = ckpt.global_step;
  manifest["current_lr"] = ckpt.current_lr;
  manifest["best_val_miou"] = ckpt.best_val_miou;
  manifest["seed"] = ckpt.seed;
  manifest["rng_state"] = ckpt.rng_state;
  manifest["tensors"] = nlohmann::ordered_json::array();
  for (const auto& [name, t] : ckpt.tensors)
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  std::string mbytes = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 8);
  write_u64_le(os, mbytes.size());
  os.write(mbytes.data(), static_cast<std::streamsize>(mbytes.size()));
  for (const auto& [name, t] : ckpt.tensors) write_f32_le(os, t.data(), t.numel());
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path + " (corrupt or not a checkpoint)");
  uint64_t mlen = read_u64_le(is);
  std::string mbytes(mlen, '\0');
  is.read(mbytes.data(), static_cast<std::streamsize>(mlen));
  if (!is) throw std::runtime_error("checkpoint: truncated manifest in " + path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mbytes);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: corrupt manifest JSON: " + std::string(e.what()));
  }

  Checkpoint ckpt;
  ckpt.config = model::ModelConfig::from_json(manifest.at("model_config"));
  ckpt.class_set = manifest.at("class_set").get<std::vector<std::string>>();
  ckpt.mode = manifest.at("mode").get<std::string>();
  ckpt.target_class = manifest.at("target_class").get<std::string>();
  ckpt.epoch = manifest.at("epoch").get<int64_t>();
  ckpt.global_step = manifest.at("global_step").get<int64_t>();
  ckpt.current_lr = manifest.at("current_lr").get<double>();
  ckpt.best_val_miou = manifest.at("best_val_miou").get<double>();
  ckpt.seed = manifest.at("seed").get<uint64_t>();
  ckpt.rng_state = manifest.at("rng_state").get<std::string>();

  for (const auto& jt : manifest.at("tensors")) {
    std::string name = jt.at("name").get<std::string>();
    Shape shape = jt.at("shape").get<Shape>();
    Tensor<float> t(shape);
    read_f32_le(is, t.data(), t.numel());
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  // no trailing bytes allowed
  is.peek();
  if (!is.eof()) throw std::runtime_error("checkpoint: trailing bytes after payloads in " + path);
  return ckpt;
}

}  // namespace dct::ckpt
