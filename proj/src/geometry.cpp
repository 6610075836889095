#include "lafs/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace lafs {

Image make_image(Tensor data) {
  if (data.ndim() != 3)
    throw std::invalid_argument("make_image: expected [C,H,W], got " + shape_str(data.shape()));
  Image img;
  img.channels = data.dim(0);
  img.height = data.dim(1);
  img.width = data.dim(2);
  img.data = std::move(data);
  return img;
}

// One bilinear tap: value and the four neighbor weights. Out-of-bounds
// neighbors read as zero.
struct Tap {
  int x0, y0;
  float wx, wy;
};

static inline Tap make_tap(float x, float y) {
  const float fx = std::floor(x), fy = std::floor(y);
  return {static_cast<int>(fx), static_cast<int>(fy), x - fx, y - fy};
}

static inline float read_px(const float* ch, int h, int w, int y, int x) {
  return (x >= 0 && x < w && y >= 0 && y < h) ? ch[static_cast<int64_t>(y) * w + x] : 0.0f;
}

static inline float tap_value(const float* ch, int h, int w, const Tap& t) {
  const float v00 = read_px(ch, h, w, t.y0, t.x0);
  const float v01 = read_px(ch, h, w, t.y0, t.x0 + 1);
  const float v10 = read_px(ch, h, w, t.y0 + 1, t.x0);
  const float v11 = read_px(ch, h, w, t.y0 + 1, t.x0 + 1);
  return (1.0f - t.wy) * ((1.0f - t.wx) * v00 + t.wx * v01) +
         t.wy * ((1.0f - t.wx) * v10 + t.wx * v11);
}

static inline void scatter_px(float* gch, int h, int w, int y, int x, float g) {
  if (x >= 0 && x < w && y >= 0 && y < h) gch[static_cast<int64_t>(y) * w + x] += g;
}

Tensor bilinear_sample(Tape* tape, const Image& img, Tensor points) {
  if (points.ndim() != 2 || points.dim(1) != 2)
    throw std::invalid_argument("bilinear_sample: points must be [N,2], got " +
                                shape_str(points.shape()));
  const int n = points.dim(0), c = img.channels, h = img.height, w = img.width;
  Tensor data = img.data;
  Tensor out({n, c});
  const float* pp = points.data();
  const float* pi = data.data();
  float* po = out.data();
  for (int i = 0; i < n; ++i) {
    const Tap t = make_tap(pp[i * 2], pp[i * 2 + 1]);
    for (int ch = 0; ch < c; ++ch)
      po[static_cast<int64_t>(i) * c + ch] =
          tap_value(pi + static_cast<int64_t>(ch) * h * w, h, w, t);
  }
  if (tape && (data.requires_grad() || points.requires_grad())) {
    out.set_requires_grad(true);
    tape->record("bilinear_sample", [data, points, out, n, c, h, w]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      const float* pp2 = points.data();
      const float* pi2 = data.data();
      std::vector<float> gi;
      if (data.requires_grad()) gi.assign(static_cast<size_t>(c) * h * w, 0.0f);
      std::vector<float> gp;
      if (points.requires_grad()) gp.assign(static_cast<size_t>(n) * 2, 0.0f);
      for (int i = 0; i < n; ++i) {
        const Tap t = make_tap(pp2[i * 2], pp2[i * 2 + 1]);
        for (int ch = 0; ch < c; ++ch) {
          const float g = go[static_cast<int64_t>(i) * c + ch];
          if (g == 0.0f) continue;
          if (data.requires_grad()) {
            float* gch = gi.data() + static_cast<size_t>(ch) * h * w;
            scatter_px(gch, h, w, t.y0, t.x0, g * (1.0f - t.wy) * (1.0f - t.wx));
            scatter_px(gch, h, w, t.y0, t.x0 + 1, g * (1.0f - t.wy) * t.wx);
            scatter_px(gch, h, w, t.y0 + 1, t.x0, g * t.wy * (1.0f - t.wx));
            scatter_px(gch, h, w, t.y0 + 1, t.x0 + 1, g * t.wy * t.wx);
          }
          if (points.requires_grad()) {
            const float* chp = pi2 + static_cast<int64_t>(ch) * h * w;
            const float v00 = read_px(chp, h, w, t.y0, t.x0);
            const float v01 = read_px(chp, h, w, t.y0, t.x0 + 1);
            const float v10 = read_px(chp, h, w, t.y0 + 1, t.x0);
            const float v11 = read_px(chp, h, w, t.y0 + 1, t.x0 + 1);
            gp[i * 2] += g * ((1.0f - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
            gp[i * 2 + 1] += g * ((1.0f - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
          }
        }
      }
      if (data.requires_grad()) data.accumulate_grad(gi.data(), static_cast<int64_t>(c) * h * w);
      if (points.requires_grad()) points.accumulate_grad(gp.data(), static_cast<int64_t>(n) * 2);
    });
  }
  return out;
}

Tensor extract_patches(Tape* tape, const Image& img, Tensor coords, int P) {
  if (P < 1) throw std::invalid_argument("extract_patches: P must be >= 1");
  if (coords.ndim() != 2 || coords.dim(1) != 2)
    throw std::invalid_argument("extract_patches: coords must be [R,2], got " +
                                shape_str(coords.shape()));
  const int r = coords.dim(0), c = img.channels, h = img.height, w = img.width;
  const float half = (P - 1) * 0.5f;
  Tensor data = img.data;
  Tensor out({r, c, P, P});
  const float* pc = coords.data();
  const float* pi = data.data();
  float* po = out.data();
  for (int i = 0; i < r; ++i) {
    const float cx = pc[i * 2] * (w - 1);
    const float cy = pc[i * 2 + 1] * (h - 1);
    for (int py = 0; py < P; ++py)
      for (int px = 0; px < P; ++px) {
        const Tap t = make_tap(cx + (px - half), cy + (py - half));
        for (int ch = 0; ch < c; ++ch)
          po[((static_cast<int64_t>(i) * c + ch) * P + py) * P + px] =
              tap_value(pi + static_cast<int64_t>(ch) * h * w, h, w, t);
      }
  }
  if (tape && (data.requires_grad() || coords.requires_grad())) {
    out.set_requires_grad(true);
    tape->record("extract_patches", [data, coords, out, r, c, h, w, P, half]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      const float* pc2 = coords.data();
      const float* pi2 = data.data();
      std::vector<float> gi;
      if (data.requires_grad()) gi.assign(static_cast<size_t>(c) * h * w, 0.0f);
      std::vector<float> gc;
      if (coords.requires_grad()) gc.assign(static_cast<size_t>(r) * 2, 0.0f);
      for (int i = 0; i < r; ++i) {
        const float cx = pc2[i * 2] * (w - 1);
        const float cy = pc2[i * 2 + 1] * (h - 1);
        float dx = 0.0f, dy = 0.0f;
        for (int py = 0; py < P; ++py)
          for (int px = 0; px < P; ++px) {
            const Tap t = make_tap(cx + (px - half), cy + (py - half));
            for (int ch = 0; ch < c; ++ch) {
              const float g = go[((static_cast<int64_t>(i) * c + ch) * P + py) * P + px];
              if (g == 0.0f) continue;
              if (data.requires_grad()) {
                float* gch = gi.data() + static_cast<size_t>(ch) * h * w;
                scatter_px(gch, h, w, t.y0, t.x0, g * (1.0f - t.wy) * (1.0f - t.wx));
                scatter_px(gch, h, w, t.y0, t.x0 + 1, g * (1.0f - t.wy) * t.wx);
                scatter_px(gch, h, w, t.y0 + 1, t.x0, g * t.wy * (1.0f - t.wx));
                scatter_px(gch, h, w, t.y0 + 1, t.x0 + 1, g * t.wy * t.wx);
              }
              if (coords.requires_grad()) {
                const float* chp = pi2 + static_cast<int64_t>(ch) * h * w;
                const float v00 = read_px(chp, h, w, t.y0, t.x0);
                const float v01 = read_px(chp, h, w, t.y0, t.x0 + 1);
                const float v10 = read_px(chp, h, w, t.y0 + 1, t.x0);
                const float v11 = read_px(chp, h, w, t.y0 + 1, t.x0 + 1);
                dx += g * ((1.0f - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
                dy += g * ((1.0f - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
              }
            }
          }
        if (coords.requires_grad()) {
          gc[i * 2] = dx * (w - 1);
          gc[i * 2 + 1] = dy * (h - 1);
        }
      }
      if (data.requires_grad()) data.accumulate_grad(gi.data(), static_cast<int64_t>(c) * h * w);
      if (coords.requires_grad()) coords.accumulate_grad(gc.data(), static_cast<int64_t>(r) * 2);
    });
  }
  return out;
}

Image crop_resize(const Image& img, const Rect& box, int out) {
  if (out < 2) throw std::invalid_argument("crop_resize: output size must be >= 2");
  if (!(box.x1 > box.x0) || !(box.y1 > box.y0))
    throw std::invalid_argument("crop_resize: degenerate box");
  const int c = img.channels, h = img.height, w = img.width;
  Tensor dst({c, out, out});
  const float* pi = img.data.data();
  float* po = dst.data();
  const double step = 1.0 / (out - 1);
  for (int j = 0; j < out; ++j)
    for (int i = 0; i < out; ++i) {
      const double nx = box.x0 + (box.x1 - box.x0) * (i * step);
      const double ny = box.y0 + (box.y1 - box.y0) * (j * step);
      const Tap t = make_tap(static_cast<float>(nx * (w - 1)), static_cast<float>(ny * (h - 1)));
      for (int ch = 0; ch < c; ++ch)
        po[(static_cast<int64_t>(ch) * out + j) * out + i] =
            tap_value(pi + static_cast<int64_t>(ch) * h * w, h, w, t);
    }
  return make_image(std::move(dst));
}

Image hflip(const Image& img) {
  const int c = img.channels, h = img.height, w = img.width;
  Tensor dst({c, h, w});
  const float* pi = img.data.data();
  float* po = dst.data();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        po[(static_cast<int64_t>(ch) * h + y) * w + x] =
            pi[(static_cast<int64_t>(ch) * h + y) * w + (w - 1 - x)];
  return make_image(std::move(dst));
}

}  // namespace lafs
