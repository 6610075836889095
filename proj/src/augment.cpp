#include "lafs/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lafs/rng.hpp"

namespace lafs {

static void jitter_inplace(Image& img, double contrast, double brightness) {
  float* p = img.data.data();
  for (int64_t i = 0; i < img.data.numel(); ++i) {
    const double v = (p[i] - 0.5) * contrast + 0.5 + brightness;
    p[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
}

// 3x3 box blur with replicated edges
static void blur_inplace(Image& img) {
  const int c = img.channels, h = img.height, w = img.width;
  Tensor src = img.data.clone();
  const float* ps = src.data();
  float* pd = img.data.data();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = std::clamp(y + dy, 0, h - 1);
            const int xx = std::clamp(x + dx, 0, w - 1);
            s += ps[(static_cast<int64_t>(ch) * h + yy) * w + xx];
          }
        pd[(static_cast<int64_t>(ch) * h + y) * w + x] = static_cast<float>(s / 9.0);
      }
}

static void solarize_inplace(Image& img) {
  float* p = img.data.data();
  for (int64_t i = 0; i < img.data.numel(); ++i)
    if (p[i] > 0.5f) p[i] = 1.0f - p[i];
}

ViewBatch generate_views(const Image& img, const ViewConfig& cfg, uint64_t seed) {
  if (cfg.n_global < 1 || cfg.n_local < 0)
    throw std::invalid_argument("generate_views: need at least one global view");
  ViewBatch batch;
  batch.n_global = cfg.n_global;
  const int total = cfg.n_global + cfg.n_local;
  for (int vi = 0; vi < total; ++vi) {
    const bool global = vi < cfg.n_global;
    const int size = global ? cfg.global_size : cfg.local_size;
    const double lo = global ? cfg.global_scale_lo : cfg.local_scale_lo;
    const double hi = global ? cfg.global_scale_hi : cfg.local_scale_hi;
    Rng rng(derive_key(seed, 0xA6000 + static_cast<uint64_t>(vi)));
    const double side = std::sqrt(rng.uniform_in(lo, hi));
    const double x0 = rng.uniform_in(0.0, 1.0 - side);
    const double y0 = rng.uniform_in(0.0, 1.0 - side);
    View v;
    v.global = global;
    v.box = Rect{x0, y0, x0 + side, y0 + side};
    v.flipped = rng.uniform() < cfg.flip_prob;
    Image crop = crop_resize(img, v.box, size);
    if (v.flipped) crop = hflip(crop);
    v.plain = crop;
    v.image.channels = crop.channels;
    v.image.height = crop.height;
    v.image.width = crop.width;
    v.image.data = crop.data.clone();
    if (cfg.jitter)
      jitter_inplace(v.image, rng.uniform_in(0.8, 1.2), rng.uniform_in(-0.2, 0.2));
    if (cfg.blur && rng.uniform() < 0.5) blur_inplace(v.image);
    // second global view only, mirroring the usual multi-crop recipe
    if (cfg.solarize && vi == 1 && global && rng.uniform() < 0.2) solarize_inplace(v.image);
    batch.views.push_back(std::move(v));
  }
  return batch;
}

LandmarkSet landmark_shuffle(const LandmarkSet& lm, uint64_t seed) {
  const int r = lm.count();
  std::vector<int> perm(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) perm[i] = i;
  Rng rng(derive_key(seed, 0x5f));
  rng.shuffle(perm);
  Tensor out({r, 2});
  for (int i = 0; i < r; ++i) {
    out.data()[i * 2] = lm.coords.data()[perm[i] * 2];
    out.data()[i * 2 + 1] = lm.coords.data()[perm[i] * 2 + 1];
  }
  return LandmarkSet{std::move(out)};
}

LandmarkSet landmark_perturb(const LandmarkSet& lm, const PerturbConfig& cfg, int view_size,
                             uint64_t seed) {
  if (cfg.alpha < 0.0) throw std::invalid_argument("landmark_perturb: alpha must be >= 0");
  if (view_size < 2) throw std::invalid_argument("landmark_perturb: view size must be >= 2");
  const int r = lm.count();
  const double unit = cfg.alpha / (view_size - 1);
  Rng rng(derive_key(derive_key(seed, cfg.stream_id), 0x9e));
  Tensor out({r, 2});
  for (int i = 0; i < 2 * r; ++i) {
    const double v = lm.coords.data()[i] + unit * rng.gaussian();
    out.data()[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return LandmarkSet{std::move(out)};
}

LandmarkSet subsample_landmarks(const LandmarkSet& lm, int k, uint64_t seed) {
  const int r = lm.count();
  if (k < 1 || k > r)
    throw std::invalid_argument("subsample_landmarks: k=" + std::to_string(k) +
                                " out of range for R=" + std::to_string(r));
  Rng rng(derive_key(seed, 0x5b));
  std::vector<int> idx = rng.sample_without_replacement(r, k);
  Tensor out({k, 2});
  for (int i = 0; i < k; ++i) {
    out.data()[i * 2] = lm.coords.data()[idx[i] * 2];
    out.data()[i * 2 + 1] = lm.coords.data()[idx[i] * 2 + 1];
  }
  return LandmarkSet{std::move(out)};
}

}  // namespace lafs
