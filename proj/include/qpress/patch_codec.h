#ifndef QPRESS_PATCH_CODEC_H_
#define QPRESS_PATCH_CODEC_H_

#include <vector>

#include "qpress/image.h"
#include "qpress/tensor.h"

namespace qpress {

// Image <-> token conversion.
//
// Token i is patch i in raster order over the patch grid. Within a token the
// components are the patch pixels in row-major order with the RGB channel
// innermost, so a 16×16 patch yields 16·16·3 = 768 components. This layout is
// frozen: bitstreams and checkpoints depend on it.

// Patch sizes accepted by configuration.
bool IsSupportedPatchSize(int patch_size);

Matrix Patchify(const Image& image, int patch_size = 16);

// Inverse of Patchify for a square image of side grid·patch_size. Values are
// clamped to [0, 1].
Image Unpatchify(const Matrix& tokens, int patch_size = 16);

// Same layout as Unpatchify without clamping; used where the raw synthesis
// output is needed (training, gradient checks).
Image UnpatchifyRaw(const Matrix& tokens, int patch_size = 16);

// tokens + table[0:L]. The table must have at least L rows of width d.
Matrix AddPositionalEncoding(const Matrix& tokens, const Matrix& table);

// Center-crop tiling into tile_size × tile_size segments.
struct TileGrid {
  int tile_size = 256;
  int rows = 0;
  int cols = 0;
  int crop_y = 0;
  int crop_x = 0;

  int cropped_height() const { return rows * tile_size; }
  int cropped_width() const { return cols * tile_size; }
  int tile_count() const { return rows * cols; }
  bool operator==(const TileGrid&) const = default;
};

// Grid for an H×W image: ⌊H/t⌋×⌊W/t⌋ tiles from the maximal centered crop.
TileGrid ComputeTileGrid(int height, int width, int tile_size = 256);

Image CenterCrop(const Image& image, const TileGrid& grid);

struct TiledImage {
  TileGrid grid;
  std::vector<Image> tiles;  // raster order
};

TiledImage TileImage(const Image& image, int tile_size = 256);

// Reassembles tiles (raster order) into the cropped region.
Image ReassembleTiles(const TileGrid& grid, const std::vector<Image>& tiles);

}  // namespace qpress

#endif  // QPRESS_PATCH_CODEC_H_
