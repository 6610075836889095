#include "lafs/vit.hpp"

#include <cmath>
#include <stdexcept>

#include "lafs/rng.hpp"

namespace lafs {

ParamRefs ViTParams::param_refs() {
  ParamRefs refs = {&patch_proj, &proj_bias, &class_token, &pos_emb};
  for (auto& b : blocks) {
    for (Tensor* t : {&b.ln1_g, &b.ln1_b, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo,
                      &b.ln2_g, &b.ln2_b, &b.w1, &b.b1, &b.w2, &b.b2})
      refs.push_back(t);
  }
  refs.push_back(&final_ln_g);
  refs.push_back(&final_ln_b);
  return refs;
}

std::vector<NamedTensor> ViTParams::named_params() {
  std::vector<NamedTensor> named = {{"vit.patch_proj", patch_proj},
                                    {"vit.proj_bias", proj_bias},
                                    {"vit.class_token", class_token},
                                    {"vit.pos_emb", pos_emb}};
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string base = "vit.block" + std::to_string(i) + ".";
    auto& b = blocks[i];
    const std::pair<const char*, Tensor*> entries[] = {
        {"ln1.g", &b.ln1_g}, {"ln1.b", &b.ln1_b}, {"wq", &b.wq},     {"bq", &b.bq},
        {"wk", &b.wk},       {"bk", &b.bk},       {"wv", &b.wv},     {"bv", &b.bv},
        {"wo", &b.wo},       {"bo", &b.bo},       {"ln2.g", &b.ln2_g}, {"ln2.b", &b.ln2_b},
        {"mlp.w1", &b.w1},   {"mlp.b1", &b.b1},   {"mlp.w2", &b.w2}, {"mlp.b2", &b.b2}};
    for (const auto& [suffix, t] : entries) named.push_back({base + suffix, *t});
  }
  named.push_back({"vit.final_ln.g", final_ln_g});
  named.push_back({"vit.final_ln.b", final_ln_b});
  return named;
}

void ViTParams::set_tracking(bool on) {
  for (Tensor* t : param_refs()) t->set_requires_grad(on);
}

static Tensor gaussian_tensor(Rng& rng, std::vector<int> shape, double stddev) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<float>(rng.gaussian() * stddev);
  return t;
}

ViTParams make_vit(const ViTConfig& cfg, uint64_t seed) {
  if (cfg.dim % cfg.heads != 0)
    throw std::invalid_argument("make_vit: dim " + std::to_string(cfg.dim) +
                                " not divisible by heads " + std::to_string(cfg.heads));
  ViTParams p;
  p.cfg = cfg;
  const int flat = cfg.channels * cfg.patch * cfg.patch;
  Rng rng(derive_key(seed, 0x517));
  Rng r0 = rng.derived(0);
  p.patch_proj = gaussian_tensor(r0, {flat, cfg.dim}, std::sqrt(1.0 / flat));
  p.proj_bias = Tensor({cfg.dim}, 0.0f);
  Rng r1 = rng.derived(1);
  p.class_token = gaussian_tensor(r1, {1, cfg.dim}, 0.02);
  Rng r2 = rng.derived(2);
  p.pos_emb = gaussian_tensor(r2, {cfg.r_max + 1, cfg.dim}, 0.02);
  const double wstd = std::sqrt(1.0 / cfg.dim);
  for (int i = 0; i < cfg.depth; ++i) {
    Rng br = rng.derived(16 + static_cast<uint64_t>(i));
    EncoderBlock b;
    b.ln1_g = Tensor({cfg.dim}, 1.0f);
    b.ln1_b = Tensor({cfg.dim}, 0.0f);
    Rng rq = br.derived(0), rk = br.derived(1), rv = br.derived(2), ro = br.derived(3);
    b.wq = gaussian_tensor(rq, {cfg.dim, cfg.dim}, wstd);
    b.bq = Tensor({cfg.dim}, 0.0f);
    b.wk = gaussian_tensor(rk, {cfg.dim, cfg.dim}, wstd);
    b.bk = Tensor({cfg.dim}, 0.0f);
    b.wv = gaussian_tensor(rv, {cfg.dim, cfg.dim}, wstd);
    b.bv = Tensor({cfg.dim}, 0.0f);
    b.wo = gaussian_tensor(ro, {cfg.dim, cfg.dim}, wstd);
    b.bo = Tensor({cfg.dim}, 0.0f);
    b.ln2_g = Tensor({cfg.dim}, 1.0f);
    b.ln2_b = Tensor({cfg.dim}, 0.0f);
    Rng rm1 = br.derived(4), rm2 = br.derived(5);
    b.w1 = gaussian_tensor(rm1, {cfg.dim, cfg.mlp_hidden}, wstd);
    b.b1 = Tensor({cfg.mlp_hidden}, 0.0f);
    b.w2 = gaussian_tensor(rm2, {cfg.mlp_hidden, cfg.dim}, std::sqrt(1.0 / cfg.mlp_hidden));
    b.b2 = Tensor({cfg.dim}, 0.0f);
    p.blocks.push_back(std::move(b));
  }
  p.final_ln_g = Tensor({cfg.dim}, 1.0f);
  p.final_ln_b = Tensor({cfg.dim}, 0.0f);
  return p;
}

Tensor tokenize(Tape* tape, Tensor patches, const ViTParams& p) {
  if (patches.ndim() != 4)
    throw std::invalid_argument("tokenize: expected [R,C,P,P], got " + shape_str(patches.shape()));
  const int r = patches.dim(0);
  const int flat = patches.dim(1) * patches.dim(2) * patches.dim(3);
  if (flat != p.patch_proj.dim(0))
    throw std::invalid_argument("tokenize: patch elements " + std::to_string(flat) +
                                " do not match projection " + shape_str(p.patch_proj.shape()));
  if (r > p.cfg.r_max)
    throw std::invalid_argument("tokenize: " + std::to_string(r) + " patches exceed r_max " +
                                std::to_string(p.cfg.r_max));
  Tensor proj = add_rowvec(tape, matmul(tape, reshape(tape, patches, {r, flat}), p.patch_proj),
                           p.proj_bias);
  Tensor tokens = concat_rows(tape, {p.class_token, proj});
  return add(tape, tokens, slice_rows(tape, p.pos_emb, 0, r + 1));
}

static Tensor attention(Tape* tape, Tensor x, const EncoderBlock& b, int heads) {
  const int d = x.dim(1);
  const int dh = d / heads;
  Tensor q = add_rowvec(tape, matmul(tape, x, b.wq), b.bq);
  Tensor k = add_rowvec(tape, matmul(tape, x, b.wk), b.bk);
  Tensor v = add_rowvec(tape, matmul(tape, x, b.wv), b.bv);
  std::vector<Tensor> ctx;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(tape, q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(tape, k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(tape, v, h * dh, (h + 1) * dh);
    Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
    Tensor attn = softmax_t(tape, scores, 1.0f);
    ctx.push_back(matmul(tape, attn, vh));
  }
  return add_rowvec(tape, matmul(tape, concat_cols(tape, ctx), b.wo), b.bo);
}

Tensor encode(Tape* tape, Tensor tokens, const ViTParams& p) {
  if (tokens.ndim() != 2 || tokens.dim(1) != p.cfg.dim)
    throw std::invalid_argument("encode: expected [N," + std::to_string(p.cfg.dim) + "], got " +
                                shape_str(tokens.shape()));
  Tensor x = tokens;
  for (const auto& b : p.blocks) {
    x = add(tape, x, attention(tape, layer_norm(tape, x, b.ln1_g, b.ln1_b), b, p.cfg.heads));
    Tensor h = gelu(tape, add_rowvec(tape, matmul(tape, layer_norm(tape, x, b.ln2_g, b.ln2_b), b.w1), b.b1));
    x = add(tape, x, add_rowvec(tape, matmul(tape, h, b.w2), b.b2));
  }
  Tensor normed = layer_norm(tape, x, p.final_ln_g, p.final_ln_b);
  return take_row(tape, normed, 0);
}

Tensor forward_part_fvit(Tape* tape, const Image& img, const LandmarkSet& lm, const ViTParams& p) {
  Tensor patches = extract_patches(tape, img, lm.coords, p.cfg.patch);
  return encode(tape, tokenize(tape, patches, p), p);
}

Tensor grid_patches(const Image& img, int P) {
  if (img.height % P != 0 || img.width % P != 0)
    throw std::invalid_argument("grid_patches: image " + std::to_string(img.width) + "x" +
                                std::to_string(img.height) + " not divisible by patch " +
                                std::to_string(P));
  const int gy = img.height / P, gx = img.width / P, c = img.channels;
  Tensor out({gy * gx, c, P, P});
  const float* pi = img.data.data();
  float* po = out.data();
  for (int ty = 0; ty < gy; ++ty)
    for (int tx = 0; tx < gx; ++tx)
      for (int ch = 0; ch < c; ++ch)
        for (int py = 0; py < P; ++py)
          for (int px = 0; px < P; ++px)
            po[(((static_cast<int64_t>(ty) * gx + tx) * c + ch) * P + py) * P + px] =
                pi[(static_cast<int64_t>(ch) * img.height + ty * P + py) * img.width + tx * P + px];
  return out;
}

Tensor grid_centers(int size, int P) {
  if (size % P != 0)
    throw std::invalid_argument("grid_centers: size not divisible by patch");
  const int g = size / P;
  Tensor out({g * g, 2});
  const float half = (P - 1) * 0.5f;
  for (int ty = 0; ty < g; ++ty)
    for (int tx = 0; tx < g; ++tx) {
      out.data()[(ty * g + tx) * 2] = (tx * P + half) / (size - 1);
      out.data()[(ty * g + tx) * 2 + 1] = (ty * P + half) / (size - 1);
    }
  return out;
}

Tensor forward_fvit(Tape* tape, const Image& img, const ViTParams& p) {
  Tensor patches = grid_patches(img, p.cfg.patch);
  return encode(tape, tokenize(tape, patches, p), p);
}

}  // namespace lafs
