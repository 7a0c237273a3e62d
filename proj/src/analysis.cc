#include "qpress/analysis.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "qpress/entropy_model.h"
#include "qpress/errors.h"
#include "qpress/patch_codec.h"

namespace qpress {

namespace {

Matrix Normalize01(const Matrix& m, double lo, double hi) {
  if (hi - lo <= 0.0) return Matrix::Zero(m.rows(), m.cols());
  return (m.array() - lo) / (hi - lo);
}

}  // namespace

Matrix UpsampleNearest(const Matrix& grid, int factor) {
  Matrix out(grid.rows() * factor, grid.cols() * factor);
  for (Eigen::Index y = 0; y < out.rows(); ++y) {
    for (Eigen::Index x = 0; x < out.cols(); ++x) out(y, x) = grid(y / factor, x / factor);
  }
  return out;
}

Heatmap AttentionHeatmap(const std::vector<AttentionRecord>& records,
                         const HeatmapSpec& spec, int patches_per_side,
                         int tile_size) {
  const int patches = patches_per_side * patches_per_side;
  Vector reduced;
  int used = 0;
  for (const auto& r : records) {
    if (r.role != AttentionRole::kCross) continue;
    if (r.weights.cols() != patches) {
      throw ShapeError("attention record has " + std::to_string(r.weights.cols()) +
                       " keys, expected " + std::to_string(patches));
    }
    if (spec.reduction == HeatmapReduction::kMax) {
      const Vector col_max = r.weights.colwise().maxCoeff().transpose();
      reduced = used == 0 ? col_max : reduced.cwiseMax(col_max);
    } else {
      if (spec.query < 0 || spec.query >= r.weights.rows()) {
        throw InputError("query " + std::to_string(spec.query) + " outside [0, " +
                         std::to_string(r.weights.rows()) + ")");
      }
      const Vector row = r.weights.row(spec.query).transpose();
      reduced = used == 0 ? row : Vector(reduced + row);
    }
    ++used;
  }
  if (used == 0) throw InputError("no cross-attention records to reduce");
  if (spec.reduction == HeatmapReduction::kMeanPerQuery) reduced /= used;

  Heatmap h;
  h.grid.resize(patches_per_side, patches_per_side);
  for (int i = 0; i < patches; ++i) h.grid(i / patches_per_side, i % patches_per_side) = reduced(i);
  h.raw_min = h.grid.minCoeff();
  h.raw_max = h.grid.maxCoeff();
  h.map = UpsampleNearest(Normalize01(h.grid, h.raw_min, h.raw_max),
                          tile_size / patches_per_side);
  return h;
}

Image ColorizeMap(const Matrix& map) {
  // Piecewise-linear ramp: dark blue, teal, yellow.
  static constexpr std::array<std::array<double, 3>, 3> kStops = {{
      {0.10, 0.05, 0.35}, {0.10, 0.60, 0.55}, {0.99, 0.90, 0.15}}};
  Image out(static_cast<int>(map.rows()), static_cast<int>(map.cols()));
  for (Eigen::Index y = 0; y < map.rows(); ++y) {
    for (Eigen::Index x = 0; x < map.cols(); ++x) {
      const double t = std::clamp(map(y, x), 0.0, 1.0) * 2.0;
      const int i = std::min(1, static_cast<int>(t));
      const double f = t - i;
      for (int c = 0; c < 3; ++c) {
        out.at(static_cast<int>(y), static_cast<int>(x), c) =
            (1.0 - f) * kStops[i][c] + f * kStops[i + 1][c];
      }
    }
  }
  return out;
}

Image RenderHeatmapOverlay(const Image& tile, const Heatmap& heatmap, double alpha) {
  if (tile.height() != heatmap.map.rows() || tile.width() != heatmap.map.cols()) {
    throw ShapeError("heatmap and tile sizes differ");
  }
  const Image colors = ColorizeMap(heatmap.map);
  Image out = tile;
  for (size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = (1.0 - alpha) * tile.data()[i] + alpha * colors.data()[i];
  }
  return out;
}

Matrix AbsoluteErrorMap(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("error map needs images of equal shape");
  }
  Matrix m(a.height(), a.width());
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      double s = 0.0;
      for (int c = 0; c < Image::kChannels; ++c) s += std::abs(a.at(y, x, c) - b.at(y, x, c));
      m(y, x) = s / Image::kChannels;
    }
  }
  return m;
}

AblationStudy QueryAblationStudy(const std::vector<Image>& images,
                                 const Model& model, int query) {
  if (images.empty()) throw InputError("ablation study needs at least one image");
  const ModelConfig& c = model.config();
  if (query < 0 || query >= c.num_queries) {
    throw InputError("query " + std::to_string(query) + " outside [0, " +
                     std::to_string(c.num_queries) + ")");
  }
  AblationStudy study;
  study.query = query;
  study.mean_error = Matrix::Zero(c.tile_size, c.tile_size);
  int tiles = 0;
  Rng unused(0);
  for (const Image& image : images) {
    const TiledImage tiled = TileImage(image, c.tile_size);
    std::vector<Image> full;
    std::vector<Image> ablated;
    for (const Image& tile : tiled.tiles) {
      const LatentCode latent =
          Quantize(Encode(tile, model.encoder).latent, QuantizerMode::kRound, unused);
      full.push_back(Decode(latent, model.decoder).image);
      ablated.push_back(DecodeAblated(latent, query, model.decoder));
      study.mean_error += AbsoluteErrorMap(full.back(), ablated.back());
      ++tiles;
    }
    study.full.push_back(ReassembleTiles(tiled.grid, full));
    study.ablated.push_back(ReassembleTiles(tiled.grid, ablated));
  }
  study.mean_error /= tiles;
  return study;
}

MetaQueries PcaMetaQueries(const Matrix& latent) {
  const Eigen::Index n = latent.rows();
  if (n < 3) {
    throw InputError("PCA needs at least 3 latent rows, got " + std::to_string(n));
  }
  MetaQueries meta;
  meta.mean = latent.colwise().mean();
  const Matrix centered = latent.rowwise() - meta.mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double tol = 1e-10 * std::max(1.0, sv.size() > 0 ? sv(0) : 0.0);
  if (sv.size() < 3 || sv(2) <= tol) {
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) rank += sv(i) > tol ? 1 : 0;
    throw InputError("centered latent has rank " + std::to_string(rank) +
                     ", PCA needs rank >= 3");
  }
  meta.explained_variance = sv.array().square() / static_cast<double>(n - 1);
  meta.components.resize(3, latent.cols());
  for (int k = 0; k < 3; ++k) {
    RowVector comp = svd.matrixV().col(k).transpose();
    Eigen::Index arg = 0;
    comp.cwiseAbs().maxCoeff(&arg);
    if (comp(arg) < 0.0) comp = -comp;
    meta.components.row(k) = comp;
  }
  meta.projected = centered * meta.components.transpose();
  return meta;
}

MetaQueries PcaMetaQueries(const std::vector<Matrix>& latents) {
  if (latents.empty()) throw InputError("PCA needs at least one latent");
  Eigen::Index rows = 0;
  for (const auto& l : latents) rows += l.rows();
  Matrix stacked(rows, latents.front().cols());
  Eigen::Index r = 0;
  for (const auto& l : latents) {
    if (l.cols() != stacked.cols()) throw ShapeError("latents differ in width");
    stacked.middleRows(r, l.rows()) = l;
    r += l.rows();
  }
  return PcaMetaQueries(stacked);
}

Matrix ProjectDecoderAttention(const std::vector<AttentionRecord>& records,
                               const Matrix& meta, int layer) {
  Matrix sum;
  int heads = 0;
  for (const auto& r : records) {
    if (r.role != AttentionRole::kCross || r.layer != layer) continue;
    if (r.weights.cols() != meta.rows()) {
      throw ShapeError("attention keys (" + std::to_string(r.weights.cols()) +
                       ") do not match meta-query rows (" +
                       std::to_string(meta.rows()) + ")");
    }
    if (heads == 0) {
      sum = r.weights * meta;
    } else {
      sum.noalias() += r.weights * meta;
    }
    ++heads;
  }
  if (heads == 0) {
    throw InputError("no decoder cross-attention captured for layer " +
                     std::to_string(layer));
  }
  return sum / heads;
}

Image RenderYCbCr(const Matrix& projection, const Matrix& reference,
                  int patches_per_side, int patch_size) {
  if (projection.cols() != 3 || reference.cols() != 3) {
    throw ShapeError("YCbCr rendering needs three components");
  }
  if (projection.rows() != static_cast<Eigen::Index>(patches_per_side) * patches_per_side) {
    throw ShapeError("projection rows do not match the patch grid");
  }
  const RowVector lo = reference.colwise().minCoeff();
  const RowVector hi = reference.colwise().maxCoeff();
  auto unit = [&](double v, int k) {
    const double span = hi(k) - lo(k);
    return span > 0.0 ? std::clamp((v - lo(k)) / span, 0.0, 1.0) : 0.5;
  };
  const int side = patches_per_side * patch_size;
  Image out(side, side);
  for (int p = 0; p < projection.rows(); ++p) {
    const double Y = unit(projection(p, 0), 0);
    const double cb = unit(projection(p, 1), 1) - 0.5;
    const double cr = unit(projection(p, 2), 2) - 0.5;
    const std::array<double, 3> rgb = {Y + 1.402 * cr,
                                       Y - 0.344136 * cb - 0.714136 * cr,
                                       Y + 1.772 * cb};
    const int py = (p / patches_per_side) * patch_size;
    const int px = (p % patches_per_side) * patch_size;
    for (int y = 0; y < patch_size; ++y) {
      for (int x = 0; x < patch_size; ++x) {
        for (int c = 0; c < 3; ++c) out.at(py + y, px + x, c) = std::clamp(rgb[c], 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace qpress
