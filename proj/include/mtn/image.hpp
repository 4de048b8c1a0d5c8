#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace mtn {

/// Row-major H x W x channels image of doubles, row 0 at the top.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(int width, int height, int channels = 3, double fill = 0.0);

  double& at(int row, int col, int c) {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + c];
  }
  double at(int row, int col, int c) const {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + c];
  }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Image& other) const {
    return width == other.width && height == other.height && channels == other.channels;
  }
};

/// 8-bit sRGB PNG. When `alpha` is given (one value per pixel) the file is
/// RGBA with straight alpha.
void write_png(const std::filesystem::path& path, const Image& rgb,
               const std::vector<double>* alpha = nullptr);

/// Reads an 8-bit RGB or RGBA PNG into a 3-channel image in [0, 1]; alpha is dropped.
Image read_png(const std::filesystem::path& path);

}  // namespace mtn
