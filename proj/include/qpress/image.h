#ifndef QPRESS_IMAGE_H_
#define QPRESS_IMAGE_H_

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace qpress {

// RGB image with values normalized to [0, 1], stored row-major with the
// channel innermost (HWC).
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int y, int x, int c) { return data_[Index(y, x, c)]; }
  double at(int y, int x, int c) const { return data_[Index(y, x, c)]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  // Copy of the rectangle starting at (y0, x0).
  Image Crop(int y0, int x0, int height, int width) const;
  void Paste(const Image& src, int y0, int x0);
  Image FlipHorizontal() const;
  void Clamp01();

  bool operator==(const Image& other) const = default;

 private:
  size_t Index(int y, int x, int c) const {
    return (static_cast<size_t>(y) * width_ + x) * kChannels + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

// Reads 8-bit (or 16-bit, reduced to 8) PNG or binary PPM (P6) files.
// Grayscale and palette images are expanded to RGB, alpha is dropped.
Image LoadImage(const std::filesystem::path& path);

// Quantizes to 8 bits (round half up after clamping) and writes a PNG.
void SavePng(const Image& image, const std::filesystem::path& path);
void SavePpm(const Image& image, const std::filesystem::path& path);

// Recursively lists .png/.ppm files under dir, sorted by path.
std::vector<std::filesystem::path> ListImages(const std::filesystem::path& dir);

// Rounds to the 8-bit grid used on disk.
Image QuantizeTo8Bit(const Image& image);

}  // namespace qpress

#endif  // QPRESS_IMAGE_H_
