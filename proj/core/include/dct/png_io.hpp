#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dct::io {

struct PngError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Row-major byte images. Gray: H*W bytes. Rgb: H*W*3 bytes, interleaved.
struct ImageU8 {
  int64_t height = 0;
  int64_t width = 0;
  int64_t channels = 0;  // 1 or 3
  std::vector<uint8_t> pixels;

  uint8_t& at(int64_t y, int64_t x, int64_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  uint8_t at(int64_t y, int64_t x, int64_t c = 0) const { return pixels[(y * width + x) * channels + c]; }
};

ImageU8 read_png(const std::string& path);            // yields 1 or 3 channels
void write_png(const std::string& path, const ImageU8& img);

ImageU8 make_image(int64_t height, int64_t width, int64_t channels, uint8_t fill = 0);

}  // namespace dct::io
