#ifndef QPRESS_METRICS_H_
#define QPRESS_METRICS_H_

#include "qpress/image.h"

namespace qpress {

constexpr int kMsSsimMinSide = 161;

// Reported for identical images, where PSNR is unbounded.
constexpr double kPsnrIdentical = 100.0;

// Mean squared error over all pixels and channels. Throws ShapeError on
// mismatched shapes.
double Mse(const Image& a, const Image& b);

// 10·log10(1 / MSE) for images normalized to [0, 1].
double Psnr(const Image& a, const Image& b);

// Five-scale MS-SSIM with an 11-tap Gaussian window (σ = 1.5), valid
// filtering and 2×2 average downsampling between scales. Computed per
// channel and averaged. Both sides must be at least kMsSsimMinSide pixels.
double MsSsim(const Image& a, const Image& b);

// Bilinear resampling with half-pixel centers (align_corners = false).
Image ResizeBilinear(const Image& image, int height, int width);
// Transpose of ResizeBilinear: maps a gradient on the resized image back to
// the source grid of size height × width.
Image ResizeBilinearAdjoint(const Image& grad, int height, int width);

}  // namespace qpress

#endif  // QPRESS_METRICS_H_
