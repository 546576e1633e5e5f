#include "dct/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

namespace dct::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageU8 make_image(int64_t height, int64_t width, int64_t channels, uint8_t fill) {
  if (height <= 0 || width <= 0 || (channels != 1 && channels != 3))
    throw PngError("make_image: bad dimensions");
  ImageU8 img;
  img.height = height;
  img.width = width;
  img.channels = channels;
  img.pixels.assign(static_cast<size_t>(height * width * channels), fill);
  return img;
}

ImageU8 read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw PngError("cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw PngError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw PngError("png_create_info_struct failed");
  }
  std::vector<png_bytep> row_ptrs;
  ImageU8 img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw PngError("failed to decode " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  // normalize everything to 8-bit gray or rgb
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  int out_channels = static_cast<int>(png_get_channels(png, info));
  if (out_channels != 1 && out_channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw PngError("unsupported channel count in " + path);
  }

  img = make_image(h, w, out_channels);
  row_ptrs.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    row_ptrs[y] = img.pixels.data() + static_cast<size_t>(y) * w * static_cast<size_t>(out_channels);
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3) throw PngError("write_png: channels must be 1 or 3");
  if (img.pixels.size() != static_cast<size_t>(img.height * img.width * img.channels))
    throw PngError("write_png: pixel buffer size mismatch");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw PngError("cannot open " + path + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw PngError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw PngError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw PngError("failed to encode " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> row_ptrs(static_cast<size_t>(img.height));
  for (int64_t y = 0; y < img.height; ++y)
    row_ptrs[static_cast<size_t>(y)] =
        const_cast<png_bytep>(img.pixels.data() + static_cast<size_t>(y * img.width * img.channels));
  png_write_rows(png, row_ptrs.data(), static_cast<png_uint_32>(img.height));
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

}  // namespace dct::io
