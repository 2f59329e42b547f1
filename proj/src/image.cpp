#include "fvpy/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <string>

#include "fvpy/error.hpp"

namespace fvpy {

GrayImage::GrayImage(int w, int h, float fill) : width(w), height(h) {
  if (w < 1 || h < 1) throw ValueError("image dimensions must be positive");
  pixels.assign(static_cast<std::size_t>(w) * h, fill);
}

GrayImage::GrayImage(int w, int h, std::vector<float> values) : width(w), height(h), pixels(std::move(values)) {
  if (w < 1 || h < 1) throw ValueError("image dimensions must be positive");
  if (pixels.size() != static_cast<std::size_t>(w) * h) throw ValueError("pixel count does not match image size");
}

GrayImage read_image(const std::filesystem::path& path) {
  cv::Mat mat;
  try {
    mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED | cv::IMREAD_ANYDEPTH);
  } catch (const cv::Exception& e) {
    throw IoError("cannot decode image " + path.string() + ": " + e.what());
  }
  if (mat.empty()) throw IoError("cannot read image " + path.string());

  double full_scale = 255.0;
  switch (mat.depth()) {
    case CV_8U: full_scale = 255.0; break;
    case CV_16U: full_scale = 65535.0; break;
    default: throw IoError("unsupported pixel depth in " + path.string());
  }
  GrayImage out(mat.cols, mat.rows);
  const int channels = mat.channels();
  for (int y = 0; y < mat.rows; ++y) {
    for (int x = 0; x < mat.cols; ++x) {
      auto sample = [&](int c) -> double {
        return mat.depth() == CV_8U ? mat.ptr<std::uint8_t>(y)[x * channels + c]
                                    : mat.ptr<std::uint16_t>(y)[x * channels + c];
      };
      double v = 0.0;
      if (channels == 1 || channels == 2) {
        v = sample(0);
      } else {
        // OpenCV stores color as B, G, R(, A).
        v = 0.114 * sample(0) + 0.587 * sample(1) + 0.299 * sample(2);
      }
      out.at(x, y) = static_cast<float>(v / full_scale);
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  cv::Mat mat(image.height, image.width, CV_8UC1);
  for (int y = 0; y < image.height; ++y) {
    auto* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width; ++x) {
      row[x] = static_cast<std::uint8_t>(std::lround(std::clamp(image.at(x, y), 0.0f, 1.0f) * 255.0f));
    }
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

std::pair<int, int> read_image_size(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::array<unsigned char, 26> h{};
  in.read(reinterpret_cast<char*>(h.data()), h.size());
  if (in.gcount() < 26) throw IoError("image header too short: " + path.string());
  auto be32 = [&](int o) {
    return static_cast<std::uint32_t>(h[o]) << 24 | static_cast<std::uint32_t>(h[o + 1]) << 16 |
           static_cast<std::uint32_t>(h[o + 2]) << 8 | h[o + 3];
  };
  auto le32 = [&](int o) {
    return static_cast<std::int32_t>(static_cast<std::uint32_t>(h[o]) | static_cast<std::uint32_t>(h[o + 1]) << 8 |
                                     static_cast<std::uint32_t>(h[o + 2]) << 16 |
                                     static_cast<std::uint32_t>(h[o + 3]) << 24);
  };
  static constexpr std::array<unsigned char, 8> png_sig{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (std::equal(png_sig.begin(), png_sig.end(), h.begin())) {
    return {static_cast<int>(be32(16)), static_cast<int>(be32(20))};
  }
  if (h[0] == 'B' && h[1] == 'M') {
    // BITMAPINFOHEADER; height is negative for top-down bitmaps.
    return {std::abs(le32(18)), std::abs(le32(22))};
  }
  throw IoError("not a PNG or BMP file: " + path.string());
}

void quantize_8bit(GrayImage& image) {
  for (auto& v : image.pixels) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0);
}

}  // namespace fvpy
