#include "qpress/patch_codec.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "qpress/errors.h"

namespace qpress {

bool IsSupportedPatchSize(int patch_size) {
  return patch_size == 8 || patch_size == 16 || patch_size == 32;
}

Matrix Patchify(const Image& image, int patch_size) {
  if (!IsSupportedPatchSize(patch_size)) {
    throw ConfigError("unsupported patch size " + std::to_string(patch_size));
  }
  if (image.height() % patch_size != 0 || image.width() % patch_size != 0 ||
      image.empty()) {
    throw InputError("image " + std::to_string(image.height()) + "x" +
                     std::to_string(image.width()) +
                     " not divisible by patch size " +
                     std::to_string(patch_size));
  }
  const int grid_h = image.height() / patch_size;
  const int grid_w = image.width() / patch_size;
  const int row_len = patch_size * Image::kChannels;
  Matrix tokens(grid_h * grid_w, patch_size * row_len);
  for (int py = 0; py < grid_h; ++py) {
    for (int px = 0; px < grid_w; ++px) {
      double* dst = tokens.row(py * grid_w + px).data();
      for (int y = 0; y < patch_size; ++y) {
        const size_t offset =
            (static_cast<size_t>(py * patch_size + y) * image.width() +
             px * patch_size) * Image::kChannels;
        const double* src = image.data().data() + offset;
        std::copy(src, src + row_len, dst + y * row_len);
      }
    }
  }
  return tokens;
}

Image UnpatchifyRaw(const Matrix& tokens, int patch_size) {
  if (!IsSupportedPatchSize(patch_size)) {
    throw ConfigError("unsupported patch size " + std::to_string(patch_size));
  }
  const int row_len = patch_size * Image::kChannels;
  if (tokens.cols() != patch_size * row_len) {
    throw ShapeError("token dimension " + std::to_string(tokens.cols()) +
                     " != " + std::to_string(patch_size * row_len));
  }
  const int grid = static_cast<int>(std::lround(std::sqrt(tokens.rows())));
  if (grid * grid != tokens.rows() || grid == 0) {
    throw ShapeError("token count " + std::to_string(tokens.rows()) +
                     " is not a square patch grid");
  }
  Image image(grid * patch_size, grid * patch_size);
  for (int py = 0; py < grid; ++py) {
    for (int px = 0; px < grid; ++px) {
      const double* src = tokens.row(py * grid + px).data();
      for (int y = 0; y < patch_size; ++y) {
        std::copy(src + y * row_len, src + (y + 1) * row_len,
                  &image.at(py * patch_size + y, px * patch_size, 0));
      }
    }
  }
  return image;
}

Image Unpatchify(const Matrix& tokens, int patch_size) {
  Image image = UnpatchifyRaw(tokens, patch_size);
  image.Clamp01();
  return image;
}

Matrix AddPositionalEncoding(const Matrix& tokens, const Matrix& table) {
  if (table.rows() < tokens.rows() || table.cols() != tokens.cols()) {
    throw ConfigError("positional table " + std::to_string(table.rows()) + "x" +
                      std::to_string(table.cols()) + " cannot cover tokens " +
                      std::to_string(tokens.rows()) + "x" +
                      std::to_string(tokens.cols()));
  }
  return tokens + table.topRows(tokens.rows());
}

TileGrid ComputeTileGrid(int height, int width, int tile_size) {
  if (height < tile_size || width < tile_size) {
    throw InputError("image " + std::to_string(height) + "x" +
                     std::to_string(width) + " is smaller than one " +
                     std::to_string(tile_size) + "x" +
                     std::to_string(tile_size) + " tile");
  }
  TileGrid grid;
  grid.tile_size = tile_size;
  grid.rows = height / tile_size;
  grid.cols = width / tile_size;
  grid.crop_y = (height - grid.cropped_height()) / 2;
  grid.crop_x = (width - grid.cropped_width()) / 2;
  return grid;
}

Image CenterCrop(const Image& image, const TileGrid& grid) {
  return image.Crop(grid.crop_y, grid.crop_x, grid.cropped_height(),
                    grid.cropped_width());
}

TiledImage TileImage(const Image& image, int tile_size) {
  TiledImage out;
  out.grid = ComputeTileGrid(image.height(), image.width(), tile_size);
  out.tiles.reserve(out.grid.tile_count());
  for (int r = 0; r < out.grid.rows; ++r) {
    for (int c = 0; c < out.grid.cols; ++c) {
      out.tiles.push_back(image.Crop(out.grid.crop_y + r * tile_size,
                                     out.grid.crop_x + c * tile_size,
                                     tile_size, tile_size));
    }
  }
  return out;
}

Image ReassembleTiles(const TileGrid& grid, const std::vector<Image>& tiles) {
  if (static_cast<int>(tiles.size()) != grid.tile_count()) {
    throw ShapeError("expected " + std::to_string(grid.tile_count()) +
                     " tiles, got " + std::to_string(tiles.size()));
  }
  Image out(grid.cropped_height(), grid.cropped_width());
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const Image& tile = tiles[r * grid.cols + c];
      if (tile.height() != grid.tile_size || tile.width() != grid.tile_size) {
        throw ShapeError("tile has wrong size");
      }
      out.Paste(tile, r * grid.tile_size, c * grid.tile_size);
    }
  }
  return out;
}

}  // namespace qpress
