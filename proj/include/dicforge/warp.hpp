#pragma once

#include "dicforge/bspline.hpp"
#include "dicforge/common.hpp"

namespace dicforge::warp {

/// Separable Catmull-Rom (a = -0.5) sample of img at real coordinates
/// (x, y), clamp-to-edge indexing. Exact at integer coordinates and exact
/// on linear ramps.
float bicubic_sample(const Image& img, double x, double y);

/// Backward warping: out(x,y) = bicubic(img, x - u(x,y), y - v(x,y)),
/// clipped to [0,1]. Image and field must share the same size.
Image warp_image(const Image& img, const bspline::DisplacementField& field);

/// Center 256x256 window of a 512x512 image (rows/cols [128, 384)).
Image center_crop(const Image& img);

/// Center crop to an arbitrary size (used for training-time crops).
Grid<float> center_crop_to(const Grid<float>& g, int size);

}  // namespace dicforge::warp
