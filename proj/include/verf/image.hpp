#pragma once

#include <array>
#include <filesystem>
#include <vector>

namespace verf {

// Row-major intensities in [0, 1].
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, float fill = 0.0f);
  GrayImage(int width, int height, std::vector<float> data);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  float operator()(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float& operator()(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  const std::vector<float>& data() const { return data_; }

  bool operator==(const GrayImage&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }

  std::array<float, 3>& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  const std::array<float, 3>& at(int x, int y) const {
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }

  GrayImage to_gray() const;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::array<float, 3>> data_;
};

float luma(float r, float g, float b);

// 8-bit grayscale or RGB(A) PNG; colour is converted with luma weights.
GrayImage read_png_gray(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const GrayImage& image);
void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);

}  // namespace verf
