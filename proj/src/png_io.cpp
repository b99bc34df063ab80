#include "cleansplat/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace cleansplat {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw PngError("cannot open " + path.string());
  return f;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct RawPng {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3 after normalization
  std::vector<std::uint8_t> bytes;
};

RawPng read_raw(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw PngError("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw PngError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw PngError("png_create_info_struct failed");
  }
  RawPng raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw PngError("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color_type = png_get_color_type(png, info);
  const png_byte bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = static_cast<int>(png_get_channels(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  raw.bytes.resize(stride * raw.height);
  std::vector<png_bytep> rows(raw.height);
  for (int y = 0; y < raw.height; ++y) rows[y] = raw.bytes.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (raw.channels != 1 && raw.channels != 3) throw PngError("unsupported PNG channel layout");
  return raw;
}

void write_raw(const std::filesystem::path& path, int width, int height, int channels,
               const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw PngError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw PngError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw PngError("failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, bytes.data() + static_cast<std::size_t>(y) * width * channels);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  const RawPng raw = read_raw(path);
  std::vector<double> data(raw.bytes.size());
  std::transform(raw.bytes.begin(), raw.bytes.end(), data.begin(),
                 [](std::uint8_t b) { return b / 255.0; });
  return Image(raw.width, raw.height, raw.channels, std::move(data));
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw PngError("PNG output needs 1 or 3 channels");
  }
  std::vector<std::uint8_t> bytes(image.data().size());
  std::transform(image.data().begin(), image.data().end(), bytes.begin(), to_byte);
  write_raw(path, image.width(), image.height(), image.channels(), bytes);
}

BinaryMask read_mask_png(const std::filesystem::path& path) {
  const RawPng raw = read_raw(path);
  BinaryMask mask(raw.width, raw.height);
  for (std::size_t p = 0; p < mask.pixel_count(); ++p) {
    mask.set(p, raw.bytes[p * raw.channels] >= 128);
  }
  return mask;
}

void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes(mask.pixel_count());
  for (std::size_t p = 0; p < bytes.size(); ++p) bytes[p] = mask.test(p) ? 255 : 0;
  write_raw(path, mask.width(), mask.height(), 1, bytes);
}

Image quantize8(const Image& image) {
  Image out = image;
  for (double& v : out.data()) v = to_byte(v) / 255.0;
  return out;
}

}  // namespace cleansplat
