#pragma once

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace fvpy {

// Single-channel float image, row-major, values nominally in [0,1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.0f);
  GrayImage(int w, int h, std::vector<float> values);

  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }
};

// Decodes an 8/16-bit PNG or BMP. Color images are reduced with
// 0.299 R + 0.587 G + 0.114 B. Throws IoError when unreadable.
GrayImage read_image(const std::filesystem::path& path);

// Writes an 8-bit grayscale PNG, rounding [0,1] values to k/255.
void write_png(const std::filesystem::path& path, const GrayImage& image);

// Width and height from the PNG or BMP header without decoding pixels.
std::pair<int, int> read_image_size(const std::filesystem::path& path);

// Rounds every value to the nearest k/255 after clamping to [0,1], which is
// exactly what a write_png / read_image round trip produces.
void quantize_8bit(GrayImage& image);

}  // namespace fvpy
