#include <cmath>
#include <vector>

#include "doctest.h"
#include "lafs/rng.hpp"
#include "lafs/vit.hpp"

using namespace lafs;

static ViTConfig small_cfg() {
  ViTConfig cfg;
  cfg.dim = 32;
  cfg.heads = 4;
  cfg.depth = 2;
  cfg.mlp_hidden = 64;
  cfg.r_max = 40;
  cfg.patch = 4;
  cfg.channels = 1;
  return cfg;
}

static Tensor random_patches(Rng& rng, int r, int c, int p) {
  Tensor t({r, c, p, p});
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<float>(rng.uniform());
  return t;
}

static Tensor permute_patch_rows(const Tensor& patches, const std::vector<int>& perm) {
  Tensor out(patches.shape());
  const int64_t row = patches.numel() / patches.dim(0);
  for (size_t i = 0; i < perm.size(); ++i)
    std::copy(patches.data() + perm[i] * row, patches.data() + (perm[i] + 1) * row,
              out.data() + static_cast<int64_t>(i) * row);
  return out;
}

static float max_abs_diff(const Tensor& a, const Tensor& b) {
  float m = 0.0f;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

TEST_CASE("tokenize prepends the class token") {
  Rng rng(51);
  ViTParams p = make_vit(small_cfg(), 1);
  Tensor patches = random_patches(rng, 7, 1, 4);
  Tensor tokens = tokenize(nullptr, patches, p);
  CHECK(tokens.shape() == std::vector<int>{8, 32});
}

TEST_CASE("zero patches and zero positions leave only the class token") {
  ViTParams p = make_vit(small_cfg(), 2);
  for (int64_t i = 0; i < p.pos_emb.numel(); ++i) p.pos_emb.data()[i] = 0.0f;
  Tensor patches({3, 1, 4, 4}, 0.0f);
  Tensor tokens = tokenize(nullptr, patches, p);
  for (int j = 0; j < 32; ++j) CHECK(tokens.data()[j] == p.class_token.data()[j]);
  for (int i = 1; i < 4; ++i)
    for (int j = 0; j < 32; ++j) CHECK(tokens.data()[i * 32 + j] == 0.0f);
}

TEST_CASE("with zero positions a patch-row swap swaps token rows exactly") {
  Rng rng(52);
  ViTParams p = make_vit(small_cfg(), 3);
  for (int64_t i = 0; i < p.pos_emb.numel(); ++i) p.pos_emb.data()[i] = 0.0f;
  Tensor patches = random_patches(rng, 5, 1, 4);
  Tensor swapped = permute_patch_rows(patches, {0, 3, 2, 1, 4});
  Tensor ta = tokenize(nullptr, patches, p);
  Tensor tb = tokenize(nullptr, swapped, p);
  for (int j = 0; j < 32; ++j) {
    CHECK(tb.data()[2 * 32 + j] == ta.data()[4 * 32 + j]);  // token row = patch row + 1
    CHECK(tb.data()[4 * 32 + j] == ta.data()[2 * 32 + j]);
    CHECK(tb.data()[1 * 32 + j] == ta.data()[1 * 32 + j]);
  }
}

TEST_CASE("class-only encoding is finite and deterministic") {
  Rng rng(53);
  ViTParams p = make_vit(small_cfg(), 4);
  Tensor tokens({1, 32});
  for (int i = 0; i < 32; ++i) tokens.data()[i] = static_cast<float>(rng.uniform_in(-1, 1));
  Tensor a = encode(nullptr, tokens, p);
  Tensor b = encode(nullptr, tokens, p);
  CHECK(a.shape() == std::vector<int>{32});
  for (int i = 0; i < 32; ++i) {
    CHECK(std::isfinite(a.data()[i]));
    CHECK(a.data()[i] == b.data()[i]);
  }
}

TEST_CASE("zero positional embedding makes the class embedding permutation-invariant") {
  Rng rng(54);
  ViTParams p = make_vit(small_cfg(), 5);
  for (int64_t i = 0; i < p.pos_emb.numel(); ++i) p.pos_emb.data()[i] = 0.0f;
  Tensor patches = random_patches(rng, 10, 1, 4);
  Tensor base = encode(nullptr, tokenize(nullptr, patches, p), p);
  Rng pr(55);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<int> perm(10);
    for (int i = 0; i < 10; ++i) perm[i] = i;
    pr.shuffle(perm);
    Tensor emb = encode(nullptr, tokenize(nullptr, permute_patch_rows(patches, perm), p), p);
    CHECK(max_abs_diff(base, emb) < 1e-5f);
  }
}

TEST_CASE("nonzero positional embedding breaks permutation invariance") {
  Rng rng(56);
  ViTParams p = make_vit(small_cfg(), 6);
  Tensor patches = random_patches(rng, 10, 1, 4);
  Tensor base = encode(nullptr, tokenize(nullptr, patches, p), p);
  Rng pr(57);
  int changed = 0;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<int> perm(10);
    for (int i = 0; i < 10; ++i) perm[i] = i;
    pr.shuffle(perm);
    bool identity = true;
    for (int i = 0; i < 10; ++i) identity = identity && perm[i] == i;
    Tensor emb = encode(nullptr, tokenize(nullptr, permute_patch_rows(patches, perm), p), p);
    if (!identity && max_abs_diff(base, emb) > 1e-6f) ++changed;
  }
  CHECK(changed >= 19);
}

TEST_CASE("variable landmark counts produce embeddings from shared parameters") {
  Rng rng(58);
  ViTConfig cfg;
  cfg.dim = 32;
  cfg.heads = 4;
  cfg.depth = 2;
  cfg.mlp_hidden = 64;
  cfg.r_max = 196;
  cfg.patch = 8;
  cfg.channels = 1;
  ViTParams p = make_vit(cfg, 7);
  Tensor img112({1, 112, 112});
  for (int64_t i = 0; i < img112.numel(); ++i) img112.data()[i] = static_cast<float>(rng.uniform());
  Image big = make_image(std::move(img112));
  LandmarkSet full{Tensor({196, 2})};
  for (int i = 0; i < 392; ++i) full.coords.data()[i] = static_cast<float>(rng.uniform());
  LandmarkSet sub{Tensor({36, 2})};
  for (int i = 0; i < 72; ++i) sub.coords.data()[i] = static_cast<float>(rng.uniform());
  Tensor ef = forward_part_fvit(nullptr, big, full, p);
  Tensor es = forward_part_fvit(nullptr, big, sub, p);
  CHECK(ef.shape() == std::vector<int>{32});
  CHECK(es.shape() == std::vector<int>{32});
}

TEST_CASE("grid split counts for the two canonical view sizes") {
  Rng rng(59);
  Tensor a({1, 112, 112}, 0.3f);
  Tensor b({1, 48, 48}, 0.3f);
  CHECK(grid_patches(make_image(std::move(a)), 8).dim(0) == 196);
  CHECK(grid_patches(make_image(std::move(b)), 8).dim(0) == 36);
  Tensor c({1, 50, 50}, 0.3f);
  CHECK_THROWS_AS(grid_patches(make_image(std::move(c)), 8), std::invalid_argument);
}

TEST_CASE("grid patches tile the image exactly") {
  Rng rng(60);
  Tensor t({1, 16, 16});
  for (int i = 0; i < 256; ++i) t.data()[i] = static_cast<float>(rng.uniform());
  Image img = make_image(std::move(t));
  Tensor patches = grid_patches(img, 4);
  REQUIRE(patches.shape() == std::vector<int>{16, 1, 4, 4});
  Tensor rebuilt({1, 16, 16}, 0.0f);
  for (int ty = 0; ty < 4; ++ty)
    for (int tx = 0; tx < 4; ++tx)
      for (int py = 0; py < 4; ++py)
        for (int px = 0; px < 4; ++px)
          rebuilt.data()[(ty * 4 + py) * 16 + tx * 4 + px] =
              patches.data()[((ty * 4 + tx) * 16) + py * 4 + px];
  for (int i = 0; i < 256; ++i) CHECK(rebuilt.data()[i] == img.data.data()[i]);
}

TEST_CASE("landmarks on grid centers reproduce the grid path") {
  Rng rng(61);
  ViTConfig cfg;
  cfg.dim = 32;
  cfg.heads = 4;
  cfg.depth = 2;
  cfg.mlp_hidden = 64;
  cfg.r_max = 36;
  cfg.patch = 8;
  cfg.channels = 1;
  ViTParams p = make_vit(cfg, 8);
  Tensor t({1, 48, 48});
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<float>(rng.uniform());
  Image img = make_image(std::move(t));
  Tensor from_grid = forward_fvit(nullptr, img, p);
  LandmarkSet centers{grid_centers(48, 8)};
  Tensor from_sampler = forward_part_fvit(nullptr, img, centers, p);
  CHECK(max_abs_diff(from_grid, from_sampler) < 1e-5f);
}

TEST_CASE("gradcheck: gradients reach landmark coordinates through the sampler") {
  Rng rng(62);
  ViTConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.depth = 1;
  cfg.mlp_hidden = 16;
  cfg.r_max = 8;
  cfg.patch = 3;
  cfg.channels = 1;
  ViTParams p = make_vit(cfg, 9);
  Tensor imgdata({1, 9, 9});
  for (int i = 0; i < 81; ++i) imgdata.data()[i] = static_cast<float>(rng.uniform());
  Tensor coords({4, 2}, {0.29f, 0.45f, 0.61f, 0.3f, 0.44f, 0.7f, 0.56f, 0.52f});
  Tensor mask({8});
  for (int i = 0; i < 8; ++i) mask.data()[i] = static_cast<float>(rng.uniform_in(-1, 1));
  const double err = gradcheck(
      [p, mask](Tape* t, std::vector<Tensor>& in) {
        Image im;
        im.channels = 1;
        im.height = 9;
        im.width = 9;
        im.data = in[0];
        Tensor emb = forward_part_fvit(t, im, LandmarkSet{in[1]}, p);
        return sum_all(t, mul(t, emb, mask));
      },
      {imgdata, coords});
  CHECK(err < 1e-3);
}
