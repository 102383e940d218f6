#include "verf/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

#include "verf/error.hpp"

namespace verf {

GrayImage::GrayImage(int width, int height, float fill)
    : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {
  if (width < 0 || height < 0) throw Error(ErrorCode::InvalidArgument, "negative image size");
}

GrayImage::GrayImage(int width, int height, std::vector<float> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (width < 0 || height < 0 || data_.size() != static_cast<std::size_t>(width) * height) {
    throw Error(ErrorCode::InvalidArgument, "image data does not match its dimensions");
  }
}

RgbImage::RgbImage(int width, int height)
    : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, {0.f, 0.f, 0.f}) {}

float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

GrayImage RgbImage::to_gray() const {
  GrayImage out(width_, height_);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      const auto& c = at(x, y);
      out(x, y) = luma(c[0], c[1], c[2]);
    }
  }
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void write_png(const std::filesystem::path& path, int width, int height, int color_type,
               const std::vector<std::uint8_t>& bytes, int channels) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, bytes.data() + static_cast<std::size_t>(y) * width * channels);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

GrayImage read_png_gray(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw Error(ErrorCode::ImageDecodeError, "cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw Error(ErrorCode::ImageDecodeError, path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::ImageDecodeError, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::ImageDecodeError, "corrupt PNG " + path.string());
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  std::vector<std::uint8_t> row(png_get_rowbytes(png, info));
  GrayImage out(width, height);
  for (int y = 0; y < height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < width; ++x) {
      const std::uint8_t* px = row.data() + static_cast<std::size_t>(x) * channels;
      out(x, y) = channels >= 3 ? luma(px[0] / 255.0f, px[1] / 255.0f, px[2] / 255.0f) : px[0] / 255.0f;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png_gray(const std::filesystem::path& path, const GrayImage& image) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(image.data().size());
  for (const float v : image.data()) bytes.push_back(to_byte(v));
  write_png(path, image.width(), image.height(), PNG_COLOR_TYPE_GRAY, bytes, 1);
}

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(static_cast<std::size_t>(image.width()) * image.height() * 3);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (const float c : image.at(x, y)) bytes.push_back(to_byte(c));
    }
  }
  write_png(path, image.width(), image.height(), PNG_COLOR_TYPE_RGB, bytes, 3);
}

}  // namespace verf
