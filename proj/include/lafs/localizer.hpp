#pragma once

// The landmark CNN: a small strided conv stack with a linear head emitting
// 2R raw coordinates, min-max scaled per axis to [0,1]. Frozen localizers
// never put entries on a tape.

#include <cstdint>

#include "lafs/geometry.hpp"
#include "lafs/tensor.hpp"

namespace lafs {

struct ConvBlock {
  Tensor w;  // [Cout, Cin, 3, 3]
  Tensor b;  // [Cout]
};

struct LocalizerParams {
  int input_size = 0;
  int landmark_count = 0;
  std::vector<ConvBlock> blocks;
  Tensor head_w;  // [F, 2R]
  Tensor head_b;  // [2R]
  bool frozen = false;

  ParamRefs param_refs();
  std::vector<NamedTensor> named_params();
  void set_tracking(bool on);
};

// Conv channels step 8 -> 16 -> 32 -> 32 with stride-2 blocks applied while
// the spatial size admits a 3x3 window, at most four blocks.
LocalizerParams make_localizer(int input_size, int landmark_count, uint64_t seed);

// Requires a square image at the configured input size.
LandmarkSet predict_landmarks(Tape* tape, const Image& img, const LocalizerParams& p);

// Resizes the input to the configured size first; normalized coordinates
// transfer to the original canvas unchanged.
LandmarkSet predict_landmarks_any_size(Tape* tape, const Image& img, const LocalizerParams& p);

// Idempotent; afterwards predictions record nothing on any tape.
void freeze(LocalizerParams& p);

}  // namespace lafs
