#pragma once

// Geometric primitives for view building and part extraction. Sampling ops
// are differentiable w.r.t. image values and sampling coordinates; view
// builders (crop_resize, hflip) are pure pixel transforms.

#include "lafs/tensor.hpp"

namespace lafs {

// Grayscale or RGB raster, values in [0, 1], layout [C, H, W].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  Tensor data;
};

Image make_image(Tensor data);

// R landmark rows [x, y] in normalized units [0, 1].
struct LandmarkSet {
  Tensor coords;  // [R, 2]
  int count() const { return coords.defined() ? coords.dim(0) : 0; }
};

// Patches around landmark centers, one row per landmark.
struct PatchStack {
  Tensor patches;  // [R, C, P, P]
  std::vector<int> source;
};

// Axis-aligned box in normalized units, corners (x0, y0) to (x1, y1).
struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
};

// Bilinear interpolation at continuous pixel coordinates [N, 2] rows (x, y).
// Out-of-bounds neighbors contribute zero. Returns [N, C].
Tensor bilinear_sample(Tape* tape, const Image& img, Tensor points);

// P x P patch per landmark on a unit-spaced grid centered at the landmark.
// Normalized coords map to pixels corner-aligned: x_px = x * (W - 1).
// Returns [R, C, P, P]; gradients reach both the image and the coords.
Tensor extract_patches(Tape* tape, const Image& img, Tensor coords, int P);

// Bilinear resample of a normalized box to out x out pixels.
Image crop_resize(const Image& img, const Rect& box, int out);

// Mirror columns; an involution.
Image hflip(const Image& img);

}  // namespace lafs
