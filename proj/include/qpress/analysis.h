#ifndef QPRESS_ANALYSIS_H_
#define QPRESS_ANALYSIS_H_

#include <vector>

#include "qpress/attention.h"
#include "qpress/image.h"
#include "qpress/model.h"
#include "qpress/tensor.h"

namespace qpress {

// ------------------------------------------------------ Attention heatmaps

enum class HeatmapReduction {
  kMax,           // max over queries, layers and heads
  kMeanPerQuery,  // one query, mean over layers and heads
};

struct HeatmapSpec {
  HeatmapReduction reduction = HeatmapReduction::kMax;
  int query = 0;  // kMeanPerQuery only
  double alpha = 0.5;
};

struct Heatmap {
  Matrix grid;  // patch grid of raw reduced scores
  Matrix map;   // tile-sized, nearest-upsampled, normalized to [0, 1]
  double raw_min = 0.0;
  double raw_max = 0.0;
};

// Reduces the cross-attention records of an encoder pass over the key
// (patch) axis. A constant grid normalizes to zero. Throws InputError when
// there are no cross-attention records or the query is out of range.
Heatmap AttentionHeatmap(const std::vector<AttentionRecord>& records,
                         const HeatmapSpec& spec, int patches_per_side,
                         int tile_size);

// Scalar map in [0, 1] through a blue-to-yellow colormap.
Image ColorizeMap(const Matrix& map);
// tile·(1 − alpha) + colormap(map)·alpha.
Image RenderHeatmapOverlay(const Image& tile, const Heatmap& heatmap, double alpha);

// Each grid cell repeated factor × factor times.
Matrix UpsampleNearest(const Matrix& grid, int factor);

// -------------------------------------------------------- Query ablation

// Per-pixel mean over channels of |a − b|.
Matrix AbsoluteErrorMap(const Image& a, const Image& b);

struct AblationStudy {
  int query = 0;
  // Tile-sized mean of the per-tile error maps over every tile of every
  // image.
  Matrix mean_error;
  std::vector<Image> full;     // per image, reassembled
  std::vector<Image> ablated;  // per image, reassembled
};

// Decodes every tile of every image with and without latent query
// `query` (round-quantized latents) and averages the error maps.
AblationStudy QueryAblationStudy(const std::vector<Image>& images,
                                 const Model& model, int query);

// ------------------------------------------------------------ Meta-queries

struct MetaQueries {
  Matrix projected;           // rows × 3
  Matrix components;          // 3 × d, orthonormal rows
  RowVector mean;             // 1 × d
  Vector explained_variance;  // every component, nonincreasing
};

// PCA of the latent rows: center, take the top three principal directions,
// project. Each component's largest-magnitude coordinate is made positive.
// Throws InputError for fewer than three rows or rank below three.
MetaQueries PcaMetaQueries(const Matrix& latent);
// One shared fit over the rows of several latents (stacked in order).
MetaQueries PcaMetaQueries(const std::vector<Matrix>& latents);

// (1/heads) Σ_h A_h Q for the decoder cross-attention of one layer
// (0-based), where Q is the N × 3 meta-query block. Throws InputError when
// the layer has no captured records.
Matrix ProjectDecoderAttention(const std::vector<AttentionRecord>& records,
                               const Matrix& meta, int layer);

// Interprets the three columns as Y, Cb, Cr, each affinely rescaled to its
// valid range using the min/max of the corresponding column of `reference`,
// and converts to RGB (full-range BT.601). Rows are patches in raster
// order; the result is nearest-upsampled by patch_size.
Image RenderYCbCr(const Matrix& projection, const Matrix& reference,
                  int patches_per_side, int patch_size);

}  // namespace qpress

#endif  // QPRESS_ANALYSIS_H_
