#pragma once

// View generation (multi-crop with photometric jitter) and landmark
// augmentations (shuffle, coordinate perturbation, subsampling). Every
// operation is a pure function of (input, seed).

#include <cstdint>

#include "lafs/geometry.hpp"

namespace lafs {

struct ViewConfig {
  int n_global = 2;
  int n_local = 8;
  int global_size = 112;
  int local_size = 48;
  // area fractions of the source image; local matches global by default
  double global_scale_lo = 0.4, global_scale_hi = 1.0;
  double local_scale_lo = 0.4, local_scale_hi = 1.0;
  bool blur = true;
  bool jitter = true;
  bool solarize = true;
  double flip_prob = 0.5;
};

struct PerturbConfig {
  double alpha = 2.0;     // noise std in view-canvas pixel units
  uint64_t stream_id = 0;
};

// One augmented crop. plain is the geometric-only twin (crop + flip, no
// photometric ops); the landmark CNN reads plain, the backbone reads image.
struct View {
  Image image;
  Image plain;
  Rect box;
  bool flipped = false;
  bool global = false;
};

struct ViewBatch {
  std::vector<View> views;  // globals first
  int n_global = 0;
};

ViewBatch generate_views(const Image& img, const ViewConfig& cfg, uint64_t seed);

// Rows permuted by a uniform random permutation; the coordinate multiset is
// unchanged.
LandmarkSet landmark_shuffle(const LandmarkSet& lm, uint64_t seed);

// Adds i.i.d. Gaussian noise with std alpha pixels on a view_size canvas,
// i.e. alpha / (view_size - 1) in normalized units, then clamps to [0,1].
LandmarkSet landmark_perturb(const LandmarkSet& lm, const PerturbConfig& cfg, int view_size,
                             uint64_t seed);

// k distinct indices drawn uniformly without replacement, in draw order.
LandmarkSet subsample_landmarks(const LandmarkSet& lm, int k, uint64_t seed);

}  // namespace lafs
