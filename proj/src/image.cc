#include "qpress/image.h"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "qpress/errors.h"
#include "qpress/tensor.h"

namespace qpress {

std::string Rng::Serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::Deserialize(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (!is) throw FormatError("corrupt RNG state");
}

Image::Image(int height, int width, double fill)
    : height_(height), width_(width),
      data_(static_cast<size_t>(height) * width * kChannels, fill) {
  if (height < 0 || width < 0) throw ShapeError("negative image size");
}

Image Image::Crop(int y0, int x0, int height, int width) const {
  if (y0 < 0 || x0 < 0 || y0 + height > height_ || x0 + width > width_) {
    throw ShapeError("crop rectangle outside image");
  }
  Image out(height, width);
  for (int y = 0; y < height; ++y) {
    const double* src = &data_[Index(y0 + y, x0, 0)];
    std::copy(src, src + static_cast<size_t>(width) * kChannels,
              &out.data_[out.Index(y, 0, 0)]);
  }
  return out;
}

void Image::Paste(const Image& src, int y0, int x0) {
  if (y0 < 0 || x0 < 0 || y0 + src.height_ > height_ ||
      x0 + src.width_ > width_) {
    throw ShapeError("paste rectangle outside image");
  }
  for (int y = 0; y < src.height_; ++y) {
    const double* row = &src.data_[src.Index(y, 0, 0)];
    std::copy(row, row + static_cast<size_t>(src.width_) * kChannels,
              &data_[Index(y0 + y, x0, 0)]);
  }
}

Image Image::FlipHorizontal() const {
  Image out(height_, width_);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x)
      for (int c = 0; c < kChannels; ++c)
        out.at(y, width_ - 1 - x, c) = at(y, x, c);
  return out;
}

void Image::Clamp01() {
  for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
}

namespace {

uint8_t To8Bit(double v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct FileCloser {
  void operator()(FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

Image LoadPng(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG '" + path.string() + "': " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<uint8_t> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  Image out(static_cast<int>(img.height), static_cast<int>(img.width));
  for (size_t i = 0; i < buffer.size(); ++i) out.data()[i] = buffer[i] / 255.0;
  return out;
}

// Skips whitespace and '#' comments in a PNM header.
int ReadPnmInt(std::istream& in) {
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v = -1;
  in >> v;
  if (!in || v < 0) throw FormatError("malformed PPM header");
  return v;
}

Image LoadPpm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') {
    throw FormatError("'" + path.string() + "' is not a binary PPM (P6)");
  }
  const int width = ReadPnmInt(in);
  const int height = ReadPnmInt(in);
  const int maxval = ReadPnmInt(in);
  in.get();
  if (maxval <= 0 || maxval > 65535) throw FormatError("bad PPM maxval");
  Image out(height, width);
  const int bytes = maxval < 256 ? 1 : 2;
  std::vector<uint8_t> raw(out.size() * bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw FormatError("truncated PPM '" + path.string() + "'");
  for (size_t i = 0; i < out.size(); ++i) {
    const int v = bytes == 1 ? raw[i] : (raw[2 * i] << 8) | raw[2 * i + 1];
    // Normalize through the 8-bit grid.
    out.data()[i] = std::lround(255.0 * v / maxval) / 255.0;
  }
  return out;
}

}  // namespace

Image LoadImage(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("no such file '" + path.string() + "'");
  }
  std::ifstream probe(path, std::ios::binary);
  unsigned char sig[8] = {};
  probe.read(reinterpret_cast<char*>(sig), 8);
  if (probe.gcount() >= 8 && png_sig_cmp(sig, 0, 8) == 0) return LoadPng(path);
  if (probe.gcount() >= 2 && sig[0] == 'P' && sig[1] == '6') return LoadPpm(path);
  throw FormatError("unsupported image format '" + path.string() + "'");
}

void SavePng(const Image& image, const std::filesystem::path& path) {
  std::vector<uint8_t> buffer(image.size());
  for (size_t i = 0; i < buffer.size(); ++i) buffer[i] = To8Bit(image.data()[i]);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

void SavePpm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "P6\n" << image.width() << " " << image.height() << "\n255\n";
  for (double v : image.data()) out.put(static_cast<char>(To8Bit(v)));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<std::filesystem::path> ListImages(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("not a directory '" + dir.string() + "'");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png" || ext == ".ppm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

Image QuantizeTo8Bit(const Image& image) {
  Image out = image;
  for (double& v : out.data()) v = To8Bit(v) / 255.0;
  return out;
}

}  // namespace qpress
