#pragma once

// Patch transformer: linear patch projection, class token, slot-bound
// positional embeddings, pre-norm encoder blocks. Consumes landmark patches
// or a regular non-overlapping grid; emits the class-token embedding.

#include <cstdint>

#include "lafs/geometry.hpp"
#include "lafs/tensor.hpp"

namespace lafs {

struct ViTConfig {
  int dim = 64;
  int heads = 4;
  int depth = 4;
  int mlp_hidden = 128;
  int r_max = 196;     // largest landmark count; pos_emb holds r_max + 1 rows
  int patch = 8;
  int channels = 1;
};

struct EncoderBlock {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor w1, b1;  // [d, hidden], [hidden]
  Tensor w2, b2;  // [hidden, d], [d]
};

struct ViTParams {
  ViTConfig cfg;
  Tensor patch_proj;  // [C*P*P, d]
  Tensor proj_bias;   // [d]
  Tensor class_token; // [1, d]
  Tensor pos_emb;     // [r_max + 1, d]; row 0 belongs to the class token
  std::vector<EncoderBlock> blocks;
  Tensor final_ln_g, final_ln_b;

  ParamRefs param_refs();
  std::vector<NamedTensor> named_params();
  void set_tracking(bool on);
};

ViTParams make_vit(const ViTConfig& cfg, uint64_t seed);

// Flatten patches [R,C,P,P], project by patch_proj, prepend the class token,
// add pos_emb rows 0..R by sequence slot. Returns [R+1, d].
Tensor tokenize(Tape* tape, Tensor patches, const ViTParams& p);

// Pre-norm transformer over the token sequence; class-token output [d].
Tensor encode(Tape* tape, Tensor tokens, const ViTParams& p);

// extract_patches then tokenize then encode; differentiable end to end,
// including the landmark coordinates.
Tensor forward_part_fvit(Tape* tape, const Image& img, const LandmarkSet& lm, const ViTParams& p);

// Non-overlapping grid split at the configured patch size; the baseline path.
Tensor forward_fvit(Tape* tape, const Image& img, const ViTParams& p);

// Grid split helpers shared with the baseline path.
Tensor grid_patches(const Image& img, int P);            // [G, C, P, P]
Tensor grid_centers(int size, int P);                    // [G, 2] normalized

}  // namespace lafs
