#pragma once

#include "ophavatar/image.hpp"

#include <png.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace opha {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class IoError : public Error {
public:
  using Error::Error;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

// 8-bit PNG (gray or RGB). Values are clamped to [0, 1] and rounded to the
// nearest of 256 levels; no gamma chunk is written.
inline void write_png(const std::filesystem::path& path, const Image& img) {
  require(img.channels == 1 || img.channels == 3, "write_png: 1 or 3 channels expected");
  detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError("cannot open '" + path.string() + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng: out of memory");
  }
  std::vector<png_byte> row(static_cast<std::size_t>(img.width) * img.channels);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng: failed writing '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8, img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      const double v = std::clamp(img.data[static_cast<std::size_t>(y) * row.size() + i], 0.0, 1.0);
      row[i] = static_cast<png_byte>(std::lround(v * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads 8/16-bit gray, gray+alpha, RGB or RGBA; alpha is dropped and gray
// is expanded only when `channels` is 3.
inline Image read_png(const std::filesystem::path& path, int channels = 3) {
  require(channels == 1 || channels == 3, "read_png: 1 or 3 channels expected");
  detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("cannot open '" + path.string() + "'");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw IoError("'" + path.string() + "' is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng: out of memory");
  }
  Image img;
  std::vector<png_byte> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng: failed reading '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  const bool gray = !(color & PNG_COLOR_MASK_COLOR) && color != PNG_COLOR_TYPE_PALETTE;
  if (gray && channels == 3) png_set_gray_to_rgb(png);
  if (!gray && channels == 1) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int c = png_get_channels(png, info);
  if (c != channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("'" + path.string() + "': unexpected channel count");
  }
  img = Image(w, h, channels);
  row.resize(png_get_rowbytes(png, info));
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int i = 0; i < w * channels; ++i)
      img.data[static_cast<std::size_t>(y) * w * channels + i] = row[i] / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// Raw sidecar: "OPHI", int32 width, height, channels, then float64 values.
inline void write_raw(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::int32_t dims[3] = {img.width, img.height, img.channels};
  out.write("OPHI", 4);
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size() * sizeof(double)));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline Image read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char magic[4];
  std::int32_t dims[3];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || std::memcmp(magic, "OPHI", 4) != 0 || dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
    throw IoError("'" + path.string() + "' is not a raw image");
  Image img(dims[0], dims[1], dims[2]);
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size() * sizeof(double)));
  if (!in) throw IoError("'" + path.string() + "' is truncated");
  return img;
}

// PNG plus a ".f64" sidecar next to it.
inline void write_image(const std::filesystem::path& png_path, const Image& img) {
  write_png(png_path, img);
  auto raw = png_path;
  write_raw(raw.replace_extension(".f64"), img);
}

// Prefers the sidecar when present so metrics see full precision.
inline Image read_image(const std::filesystem::path& png_path, int channels = 3) {
  auto raw = png_path;
  raw.replace_extension(".f64");
  if (std::filesystem::exists(raw)) {
    Image img = read_raw(raw);
    if (img.channels != channels) throw IoError("'" + raw.string() + "': unexpected channel count");
    return img;
  }
  return read_png(png_path, channels);
}

inline std::string frame_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04d.png", index);
  return buf;
}

}  // namespace opha
