#include "qpress/analysis.h"

#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "qpress/errors.h"
#include "qpress/patch_codec.h"
#include "qpress/transforms.h"
#include "test_util.h"

namespace qpress {
namespace {

using testing::JacobiEigen;
using testing::SyntheticImage;

AttentionRecord Cross(int layer, int head, Matrix weights) {
  AttentionRecord r;
  r.layer = layer;
  r.head = head;
  r.role = AttentionRole::kCross;
  r.weights = std::move(weights);
  return r;
}

Matrix RandomStochastic(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.Uniform() + 1e-3;
  for (int r = 0; r < rows; ++r) m.row(r) /= m.row(r).sum();
  return m;
}

TEST(HeatmapTest, UniformAttentionNormalizesToZero) {
  const Matrix w = Matrix::Constant(4, 16, 1.0 / 16);
  const Heatmap h = AttentionHeatmap({Cross(0, 0, w), Cross(0, 1, w)}, {}, 4, 32);
  EXPECT_EQ(h.map.rows(), 32);
  EXPECT_EQ(h.map.cols(), 32);
  EXPECT_DOUBLE_EQ(h.raw_min, 1.0 / 16);
  EXPECT_DOUBLE_EQ(h.raw_max, 1.0 / 16);
  EXPECT_EQ(h.map.cwiseAbs().maxCoeff(), 0.0);
}

TEST(HeatmapTest, OneHotAttentionMarksOnePatch) {
  Matrix w = Matrix::Zero(2, 16);
  w(0, 5) = 1.0;  // patch (1, 1)
  w(1, 5) = 1.0;
  const Heatmap h = AttentionHeatmap({Cross(0, 0, w)}, {}, 4, 32);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const bool inside = y / 8 == 1 && x / 8 == 1;
      EXPECT_EQ(h.map(y, x), inside ? 1.0 : 0.0);
    }
  }
}

TEST(HeatmapTest, MaxAndMeanReductions) {
  Matrix a = Matrix::Zero(2, 4);
  a(0, 0) = 0.75;
  a(0, 1) = 0.25;
  a(1, 3) = 1.0;
  Matrix b = Matrix::Constant(2, 4, 0.25);
  std::vector<AttentionRecord> records = {Cross(0, 0, a), Cross(1, 0, b)};
  AttentionRecord self = Cross(0, 0, Matrix::Constant(2, 2, 0.5));
  self.role = AttentionRole::kSelf;
  records.push_back(self);  // ignored

  const Heatmap max = AttentionHeatmap(records, {}, 2, 4);
  EXPECT_DOUBLE_EQ(max.grid(0, 0), 0.75);
  EXPECT_DOUBLE_EQ(max.grid(0, 1), 0.25);
  EXPECT_DOUBLE_EQ(max.grid(1, 0), 0.25);
  EXPECT_DOUBLE_EQ(max.grid(1, 1), 1.0);

  HeatmapSpec spec;
  spec.reduction = HeatmapReduction::kMeanPerQuery;
  spec.query = 0;
  const Heatmap mean = AttentionHeatmap(records, spec, 2, 4);
  EXPECT_DOUBLE_EQ(mean.grid(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(mean.grid(0, 1), 0.25);
  EXPECT_DOUBLE_EQ(mean.grid(1, 0), 0.125);
  EXPECT_DOUBLE_EQ(mean.map(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(mean.map(3, 0), 0.0);

  spec.query = 2;
  EXPECT_THROW(AttentionHeatmap(records, spec, 2, 4), InputError);
  EXPECT_THROW(AttentionHeatmap({self}, {}, 2, 4), InputError);
  EXPECT_THROW(AttentionHeatmap(records, {}, 3, 6), ShapeError);
}

TEST(HeatmapTest, OverlayBlendsWithTheColormap) {
  const Image tile(8, 8, 0.2);
  Heatmap h;
  h.map = Matrix::Zero(8, 8);
  const Image colors = ColorizeMap(h.map);
  const Image out = RenderHeatmapOverlay(tile, h, 0.25);
  for (size_t i = 0; i < out.size(); ++i) {
    EXPECT_NEAR(out.data()[i], 0.75 * 0.2 + 0.25 * colors.data()[i], 1e-15);
  }
  EXPECT_EQ(RenderHeatmapOverlay(tile, h, 0.0), tile);
  h.map = Matrix::Zero(4, 4);
  EXPECT_THROW(RenderHeatmapOverlay(tile, h, 0.5), ShapeError);
}

TEST(ProjectionTest, OneHotAttentionCopiesTheMetaQuery) {
  Rng rng(1);
  const Matrix meta = GaussianMatrix(5, 3, 1.0, rng);
  Matrix w = Matrix::Zero(7, 5);
  for (int i = 0; i < 7; ++i) w(i, (3 * i) % 5) = 1.0;
  const Matrix out = ProjectDecoderAttention({Cross(2, 0, w), Cross(2, 1, w)}, meta, 2);
  for (int i = 0; i < 7; ++i) EXPECT_EQ(out.row(i), meta.row((3 * i) % 5));
}

TEST(ProjectionTest, UniformAttentionGivesTheMeanMetaQuery) {
  Rng rng(2);
  const Matrix meta = GaussianMatrix(4, 3, 1.0, rng);
  const Matrix w = Matrix::Constant(6, 4, 0.25);
  const Matrix out = ProjectDecoderAttention({Cross(0, 0, w)}, meta, 0);
  const RowVector mean = meta.colwise().mean();
  for (int i = 0; i < 6; ++i) EXPECT_LT((out.row(i) - mean).norm(), 1e-15);
}

TEST(ProjectionTest, AveragesHeadsOfTheRequestedLayerOnly) {
  Rng rng(3);
  const Matrix meta = GaussianMatrix(4, 3, 1.0, rng);
  const Matrix a = RandomStochastic(6, 4, rng);
  const Matrix b = RandomStochastic(6, 4, rng);
  const Matrix other = RandomStochastic(6, 4, rng);
  const Matrix out = ProjectDecoderAttention(
      {Cross(0, 0, other), Cross(1, 0, a), Cross(1, 1, b)}, meta, 1);
  EXPECT_LT((out - 0.5 * (a + b) * meta).norm(), 1e-14);
  EXPECT_THROW(ProjectDecoderAttention({Cross(0, 0, a)}, meta, 1), InputError);
  EXPECT_THROW(ProjectDecoderAttention({Cross(0, 0, a)}, Matrix::Zero(5, 3), 0),
               ShapeError);
}

TEST(PcaTest, AgreesWithABruteForceEigensolver) {
  Rng rng(4);
  const Matrix x = GaussianMatrix(8, 5, 1.0, rng) *
                   Vector::LinSpaced(5, 3.0, 0.5).asDiagonal();
  const MetaQueries meta = PcaMetaQueries(x);
  const Matrix centered = x.rowwise() - x.colwise().mean();
  const Matrix cov = centered.transpose() * centered / 7.0;
  Vector values;
  Matrix vectors;
  JacobiEigen(cov, &values, &vectors);
  ASSERT_EQ(meta.explained_variance.size(), 5);
  for (int k = 0; k < 5; ++k) {
    EXPECT_NEAR(meta.explained_variance(k), values(k), 1e-10) << k;
    if (k > 0) EXPECT_GE(meta.explained_variance(k - 1), meta.explained_variance(k));
  }
  for (int k = 0; k < 3; ++k) {
    const double dot = meta.components.row(k).dot(vectors.col(k));
    EXPECT_NEAR(std::abs(dot), 1.0, 1e-9) << k;
  }
  EXPECT_LT((meta.components * meta.components.transpose() -
             Matrix::Identity(3, 3)).norm(), 1e-12);
  EXPECT_LT((meta.projected - centered * meta.components.transpose()).norm(), 1e-12);
}

TEST(PcaTest, SignConventionAndShiftInvariance) {
  Rng rng(5);
  const Matrix x = GaussianMatrix(10, 6, 1.0, rng);
  const MetaQueries a = PcaMetaQueries(x);
  for (int k = 0; k < 3; ++k) {
    Eigen::Index arg;
    a.components.row(k).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(a.components(k, arg), 0.0);
  }
  const RowVector shift = RowVector::Constant(6, 7.5);
  const MetaQueries b = PcaMetaQueries(Matrix(x.rowwise() + shift));
  EXPECT_LT((a.components - b.components).norm(), 1e-9);
  EXPECT_LT((a.projected - b.projected).norm(), 1e-9);
}

TEST(PcaTest, RecoversAPlantedSubspace) {
  Rng rng(6);
  const Matrix basis = GaussianMatrix(3, 12, 1.0, rng);
  const Matrix coeffs = GaussianMatrix(20, 3, 1.0, rng);
  const Matrix x = coeffs * basis;
  const MetaQueries meta = PcaMetaQueries(x);
  const Matrix centered = x.rowwise() - x.colwise().mean();
  EXPECT_LT((meta.projected * meta.components - centered).norm(), 1e-9);
  for (Eigen::Index k = 3; k < meta.explained_variance.size(); ++k) {
    EXPECT_LT(meta.explained_variance(k), 1e-20);
  }
}

TEST(PcaTest, RejectsDegenerateInputs) {
  Rng rng(7);
  EXPECT_THROW(PcaMetaQueries(GaussianMatrix(2, 5, 1.0, rng)), InputError);
  const Matrix rank2 = GaussianMatrix(6, 2, 1.0, rng) * GaussianMatrix(2, 5, 1.0, rng);
  EXPECT_THROW(PcaMetaQueries(rank2), InputError);
  EXPECT_THROW(PcaMetaQueries(Matrix::Ones(6, 5)), InputError);
  EXPECT_THROW(PcaMetaQueries(std::vector<Matrix>{}), InputError);
}

TEST(PcaTest, SharedFitStacksTheLatents) {
  Rng rng(8);
  const Matrix a = GaussianMatrix(4, 6, 1.0, rng);
  const Matrix b = GaussianMatrix(4, 6, 1.0, rng);
  Matrix stacked(8, 6);
  stacked << a, b;
  EXPECT_EQ(PcaMetaQueries(std::vector<Matrix>{a, b}).projected, PcaMetaQueries(stacked).projected);
}

TEST(YCbCrTest, ExtremesAndNeutralChroma) {
  Matrix reference(2, 3);
  reference << 0, -1, -1,
               4, 1, 1;
  Matrix projection(4, 3);
  projection << 0, 0, 0,     // black
                4, 0, 0,     // white
                2, 0, 0,     // mid gray
                2, 0, 1;     // reddish
  const Image img = RenderYCbCr(projection, reference, 2, 3);
  EXPECT_EQ(img.height(), 6);
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(img.at(0, 0, c), 0.0, 1e-12);
    EXPECT_NEAR(img.at(2, 5, c), 1.0, 1e-12);
    EXPECT_NEAR(img.at(3, 0, c), 0.5, 1e-12);
  }
  EXPECT_NEAR(img.at(5, 5, 0), std::min(1.0, 0.5 + 1.402 * 0.5), 1e-12);
  EXPECT_NEAR(img.at(5, 5, 1), 0.5 - 0.714136 * 0.5, 1e-12);
  EXPECT_NEAR(img.at(5, 5, 2), 0.5, 1e-12);
  EXPECT_THROW(RenderYCbCr(projection, reference, 3, 3), ShapeError);
}

TEST(AblationTest, ZeroWeightModelShowsNoError) {
  const Model model(ModelConfig::Toy());  // every weight zero
  const AblationStudy s = QueryAblationStudy({SyntheticImage(256, 300)}, model, 1);
  EXPECT_EQ(s.mean_error.rows(), 256);
  EXPECT_EQ(s.mean_error.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(s.full.size(), 1u);
  EXPECT_EQ(s.full[0], s.ablated[0]);
}

TEST(AblationTest, InitializedModelDependsOnEveryQuery) {
  Model model(testing::TinyConfig());
  model.Init();
  const std::vector<Image> images = {SyntheticImage(32, 32), SyntheticImage(32, 64, 0.5)};
  for (int q = 0; q < 3; ++q) {
    const AblationStudy s = QueryAblationStudy(images, model, q);
    EXPECT_GT(s.mean_error.maxCoeff(), 0.0) << q;
    ASSERT_EQ(s.full.size(), 2u);
    EXPECT_EQ(s.full[1].width(), 64);
    // The mean covers three tiles.
    Matrix expected = AbsoluteErrorMap(s.full[0], s.ablated[0]);
    for (int t = 0; t < 2; ++t) {
      expected += AbsoluteErrorMap(s.full[1].Crop(0, 32 * t, 32, 32),
                                   s.ablated[1].Crop(0, 32 * t, 32, 32));
    }
    EXPECT_LT((s.mean_error - expected / 3.0).norm(), 1e-12);
  }
  EXPECT_THROW(QueryAblationStudy(images, model, 3), InputError);
  EXPECT_THROW(QueryAblationStudy({}, model, 0), InputError);
}

TEST(AnalysisTest, UpsampleAndErrorMap) {
  Matrix g(2, 2);
  g << 1, 2, 3, 4;
  const Matrix up = UpsampleNearest(g, 3);
  EXPECT_EQ(up(2, 2), 1);
  EXPECT_EQ(up(2, 3), 2);
  EXPECT_EQ(up(5, 0), 3);
  Image a(2, 2, 0.5);
  Image b = a;
  b.at(1, 0, 0) = 0.8;
  b.at(1, 0, 2) = 0.2;
  const Matrix e = AbsoluteErrorMap(a, b);
  EXPECT_NEAR(e(1, 0), 0.2, 1e-15);
  EXPECT_EQ(e(0, 0), 0.0);
  EXPECT_THROW(AbsoluteErrorMap(a, Image(2, 3)), ShapeError);
}

}  // namespace
}  // namespace qpress
