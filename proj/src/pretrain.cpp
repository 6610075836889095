#include "lafs/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "lafs/rng.hpp"

namespace lafs {

// -------------------------------------------------------------------------
// projection head

static Tensor gaussian_tensor(Rng& rng, std::vector<int> shape, double stddev) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<float>(rng.gaussian() * stddev);
  return t;
}

DinoHeadParams make_head(const HeadConfig& cfg, uint64_t seed) {
  if (cfg.in_dim < 1 || cfg.hidden < 1 || cfg.bottleneck < 1 || cfg.out_dim < 2)
    throw std::invalid_argument("make_head: dims must be positive and out_dim >= 2");
  DinoHeadParams p;
  p.cfg = cfg;
  Rng rng(derive_key(seed, 0x4ead));
  Rng r1 = rng.derived(1);
  p.w1 = gaussian_tensor(r1, {cfg.in_dim, cfg.hidden}, std::sqrt(1.0 / cfg.in_dim));
  p.b1 = Tensor::zeros({cfg.hidden});
  Rng r2 = rng.derived(2);
  p.w2 = gaussian_tensor(r2, {cfg.hidden, cfg.hidden}, std::sqrt(1.0 / cfg.hidden));
  p.b2 = Tensor::zeros({cfg.hidden});
  Rng r3 = rng.derived(3);
  p.w3 = gaussian_tensor(r3, {cfg.hidden, cfg.bottleneck}, std::sqrt(1.0 / cfg.hidden));
  p.b3 = Tensor::zeros({cfg.bottleneck});
  Rng r4 = rng.derived(4);
  p.protos = gaussian_tensor(r4, {cfg.out_dim, cfg.bottleneck}, 1.0);
  renormalize_prototypes(p);
  return p;
}

ParamRefs DinoHeadParams::param_refs() {
  return {&w1, &b1, &w2, &b2, &w3, &b3, &protos};
}

std::vector<NamedTensor> DinoHeadParams::named_params(const std::string& prefix) {
  return {{prefix + ".w1", w1}, {prefix + ".b1", b1}, {prefix + ".w2", w2},
          {prefix + ".b2", b2}, {prefix + ".w3", w3}, {prefix + ".b3", b3},
          {prefix + ".protos", protos}};
}

void DinoHeadParams::set_tracking(bool on) {
  for (Tensor* t : param_refs()) t->set_requires_grad(on);
}

Tensor head_mlp(Tape* tape, Tensor emb, const DinoHeadParams& p) {
  Tensor x = emb;
  if (x.ndim() == 1) x = reshape(tape, x, {1, static_cast<int>(x.numel())});
  if (x.ndim() != 2 || x.dim(1) != p.cfg.in_dim)
    throw std::invalid_argument("head_mlp: input " + shape_str(emb.shape()) + " vs in_dim " +
                                std::to_string(p.cfg.in_dim));
  x = gelu(tape, add_rowvec(tape, matmul(tape, x, p.w1), p.b1));
  x = gelu(tape, add_rowvec(tape, matmul(tape, x, p.w2), p.b2));
  return add_rowvec(tape, matmul(tape, x, p.w3), p.b3);
}

Tensor head_logits_from_bottleneck(Tape* tape, Tensor z, const DinoHeadParams& p) {
  if (z.ndim() == 1) z = reshape(tape, z, {1, static_cast<int>(z.numel())});
  if (z.ndim() != 2 || z.dim(1) != p.cfg.bottleneck)
    throw std::invalid_argument("head_logits_from_bottleneck: input " + shape_str(z.shape()) +
                                " vs bottleneck " + std::to_string(p.cfg.bottleneck));
  Tensor zn = l2_normalize_rows(tape, z);
  Tensor logits = matmul(tape, zn, transpose(tape, p.protos));
  return reshape(tape, logits, {p.cfg.out_dim * z.dim(0)});
}

Tensor head_forward(Tape* tape, Tensor emb, const DinoHeadParams& p) {
  return head_logits_from_bottleneck(tape, head_mlp(tape, emb, p), p);
}

void renormalize_prototypes(DinoHeadParams& p) {
  const int k = p.protos.dim(0), d = p.protos.dim(1);
  float* w = p.protos.data();
  for (int i = 0; i < k; ++i) {
    double ss = 0.0;
    for (int j = 0; j < d; ++j) ss += static_cast<double>(w[i * d + j]) * w[i * d + j];
    const double norm = std::sqrt(ss);
    if (norm < 1e-12) continue;
    for (int j = 0; j < d; ++j) w[i * d + j] = static_cast<float>(w[i * d + j] / norm);
  }
}

// -------------------------------------------------------------------------
// centering and the distillation loss

std::vector<float> teacher_probs(const Tensor& logits, const Center& center, float t_t) {
  if (!(t_t > 0.0f)) throw std::invalid_argument("teacher_probs: temperature must be > 0");
  const int k = static_cast<int>(logits.numel());
  if (static_cast<int>(center.c.numel()) != k)
    throw std::invalid_argument("teacher_probs: logits " + shape_str(logits.shape()) +
                                " vs center " + shape_str(center.c.shape()));
  const float* l = logits.data();
  const float* c = center.c.data();
  std::vector<double> a(k);
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < k; ++j) {
    a[j] = (static_cast<double>(l[j]) - c[j]) / t_t;
    mx = std::max(mx, a[j]);
  }
  double sum = 0.0;
  for (int j = 0; j < k; ++j) {
    a[j] = std::exp(a[j] - mx);
    sum += a[j];
  }
  std::vector<float> out(k);
  for (int j = 0; j < k; ++j) out[j] = static_cast<float>(a[j] / sum);
  return out;
}

void center_update(Center& center, const std::vector<Tensor>& teacher_logits) {
  if (teacher_logits.empty())
    throw std::invalid_argument("center_update: no teacher logits");
  const int k = static_cast<int>(center.c.numel());
  std::vector<double> mean(k, 0.0);
  for (const Tensor& t : teacher_logits) {
    if (static_cast<int>(t.numel()) != k)
      throw std::invalid_argument("center_update: logits " + shape_str(t.shape()) +
                                  " vs center " + shape_str(center.c.shape()));
    const float* p = t.data();
    for (int j = 0; j < k; ++j) mean[j] += p[j];
  }
  const double m = center.momentum;
  float* c = center.c.data();
  for (int j = 0; j < k; ++j) {
    const double batch_mean = mean[j] / static_cast<double>(teacher_logits.size());
    c[j] = static_cast<float>(m * c[j] + (1.0 - m) * batch_mean);
  }
}

int distill_pair_count(int n_teacher_views, int n_total_views) {
  if (n_teacher_views < 1)
    throw std::invalid_argument("distill_pair_count: need at least one teacher view");
  if (n_total_views < 2)
    throw std::invalid_argument("distill_pair_count: need at least two views");
  return n_teacher_views * (n_total_views - 1);
}

Tensor distill_loss(Tape* tape, const std::vector<std::vector<float>>& teacher_probs_per_view,
                    const std::vector<int>& teacher_view_ids,
                    const std::vector<Tensor>& student_logits, float t_s) {
  const int nt = static_cast<int>(teacher_probs_per_view.size());
  const int nv = static_cast<int>(student_logits.size());
  if (teacher_view_ids.size() != teacher_probs_per_view.size())
    throw std::invalid_argument("distill_loss: teacher probs and view ids differ in length");
  const int pairs = distill_pair_count(nt, nv);
  Tensor total;
  for (int ti = 0; ti < nt; ++ti) {
    const int own = teacher_view_ids[ti];
    if (own < 0 || own >= nv)
      throw std::invalid_argument("distill_loss: teacher view id " + std::to_string(own) +
                                  " outside [0, " + std::to_string(nv) + ")");
    for (int s = 0; s < nv; ++s) {
      if (s == own) continue;
      Tensor ce = cross_entropy_soft(tape, student_logits[s], teacher_probs_per_view[ti], t_s);
      total = total.defined() ? add(tape, total, ce) : ce;
    }
  }
  return scale(tape, total, 1.0f / static_cast<float>(pairs));
}

// -------------------------------------------------------------------------
// teacher-student assembly

TeacherStudent make_teacher_student(const ViTConfig& vit_cfg, const HeadConfig& head_cfg,
                                    LocalizerParams localizer, const PretrainConfig& cfg,
                                    uint64_t seed) {
  if (head_cfg.in_dim != vit_cfg.dim)
    throw std::invalid_argument("make_teacher_student: head in_dim " +
                                std::to_string(head_cfg.in_dim) + " vs vit dim " +
                                std::to_string(vit_cfg.dim));
  TeacherStudent ts;
  const uint64_t vit_seed = derive_key(seed, 0x1a1);
  const uint64_t head_seed = derive_key(seed, 0x1a2);
  ts.s_vit = make_vit(vit_cfg, vit_seed);
  ts.t_vit = make_vit(vit_cfg, vit_seed);
  ts.s_head = make_head(head_cfg, head_seed);
  ts.t_head = make_head(head_cfg, head_seed);
  ts.s_vit.set_tracking(true);
  ts.s_head.set_tracking(true);
  ts.localizer = std::move(localizer);
  freeze(ts.localizer);
  ts.center.c = Tensor::zeros({head_cfg.out_dim});
  ts.center.momentum = cfg.center_momentum;
  ts.opt.lr = cfg.lr;
  ts.opt.weight_decay = cfg.weight_decay;
  ts.ema_l = cfg.ema_l;
  ts.t_t = cfg.t_t;
  ts.t_s = cfg.t_s;
  return ts;
}

static ParamRefs student_params(TeacherStudent& ts) {
  ParamRefs out = ts.s_vit.param_refs();
  for (Tensor* t : ts.s_head.param_refs()) out.push_back(t);
  return out;
}

static ParamRefs teacher_params(TeacherStudent& ts) {
  ParamRefs out = ts.t_vit.param_refs();
  for (Tensor* t : ts.t_head.param_refs()) out.push_back(t);
  return out;
}

void ema_update(TeacherStudent& ts) {
  const float l = ts.ema_l;
  if (!(l >= 0.0f && l <= 1.0f))
    throw std::invalid_argument("ema_update: momentum must lie in [0, 1]");
  if (l == 1.0f) return;
  ParamRefs tp = teacher_params(ts);
  ParamRefs sp = student_params(ts);
  if (tp.size() != sp.size())
    throw std::invalid_argument("ema_update: teacher and student parameter lists differ");
  for (size_t i = 0; i < tp.size(); ++i) {
    if (tp[i]->numel() != sp[i]->numel())
      throw std::invalid_argument("ema_update: parameter " + std::to_string(i) +
                                  " shape mismatch");
    float* t = tp[i]->data();
    const float* s = sp[i]->data();
    const int64_t n = tp[i]->numel();
    if (l == 0.0f) {
      std::memcpy(t, s, static_cast<size_t>(n) * sizeof(float));
      continue;
    }
    for (int64_t j = 0; j < n; ++j)
      t[j] = static_cast<float>(static_cast<double>(l) * t[j] +
                                (1.0 - static_cast<double>(l)) * s[j]);
  }
}

// -------------------------------------------------------------------------
// training step

static Tensor permute_patch_rows(const Tensor& patches, uint64_t seed) {
  const int g = patches.dim(0);
  const int64_t row = patches.numel() / g;
  std::vector<int> perm(g);
  for (int i = 0; i < g; ++i) perm[i] = i;
  Rng rng(derive_key(seed, 0x6d));
  rng.shuffle(perm);
  Tensor out = Tensor::zeros(patches.shape());
  for (int i = 0; i < g; ++i)
    std::memcpy(out.data() + i * row, patches.data() + perm[i] * row,
                static_cast<size_t>(row) * sizeof(float));
  return out;
}

static StepResult train_step_impl(TeacherStudent& ts, const std::vector<Image>& batch,
                                  const PretrainConfig& cfg, uint64_t seed,
                                  TeacherViewMode mode, bool grid_backbone) {
  if (batch.empty()) throw std::invalid_argument("train step: empty batch");
  if (grid_backbone && mode != TeacherViewMode::grid)
    throw std::invalid_argument("train step: grid backbone supports only grid teacher views");
  if (!grid_backbone) {
    const int r = ts.localizer.landmark_count;
    if (cfg.subset_k < 1 || cfg.subset_k > r)
      throw std::invalid_argument("train step: subset_k " + std::to_string(cfg.subset_k) +
                                  " outside [1, " + std::to_string(r) + "]");
  }

  Tape tape;
  std::vector<Tensor> per_image_losses;
  std::vector<Tensor> all_teacher_logits;
  int pairs = 0;

  for (size_t b = 0; b < batch.size(); ++b) {
    const uint64_t img_seed = derive_key(seed, 0xB000 + static_cast<uint64_t>(b));
    ViewBatch vb = generate_views(batch[b], cfg.views, derive_key(img_seed, 0x11e));
    const int nv = static_cast<int>(vb.views.size());

    std::vector<LandmarkSet> full_lms(nv);
    if (!grid_backbone)
      for (int v = 0; v < nv; ++v)
        full_lms[v] = predict_landmarks_any_size(nullptr, vb.views[v].plain, ts.localizer);

    // teacher branch: global views only, never on the tape
    std::vector<std::vector<float>> tprobs;
    std::vector<int> tids;
    for (int v = 0; v < vb.n_global; ++v) {
      const View& view = vb.views[v];
      if (mode == TeacherViewMode::grid || mode == TeacherViewMode::mixed) {
        Tensor emb = forward_fvit(nullptr, view.image, ts.t_vit);
        Tensor lg = head_forward(nullptr, emb, ts.t_head);
        all_teacher_logits.push_back(lg);
        tprobs.push_back(teacher_probs(lg, ts.center, ts.t_t));
        tids.push_back(v);
      }
      if (mode == TeacherViewMode::landmark || mode == TeacherViewMode::mixed) {
        LandmarkSet lt = landmark_perturb(full_lms[v], PerturbConfig{cfg.alpha, 0},
                                          view.image.width,
                                          derive_key(img_seed, 0x7e0 + static_cast<uint64_t>(v)));
        if (cfg.shuffle)
          lt = landmark_shuffle(lt, derive_key(img_seed, 0x5e0 + static_cast<uint64_t>(v)));
        Tensor emb = forward_part_fvit(nullptr, view.image, lt, ts.t_vit);
        Tensor lg = head_forward(nullptr, emb, ts.t_head);
        all_teacher_logits.push_back(lg);
        tprobs.push_back(teacher_probs(lg, ts.center, ts.t_t));
        tids.push_back(v);
      }
    }

    // student branch: every view, landmark subsets, on the tape
    std::vector<Tensor> slogits(nv);
    for (int v = 0; v < nv; ++v) {
      const View& view = vb.views[v];
      Tensor emb;
      if (grid_backbone) {
        Tensor patches = grid_patches(view.image, ts.s_vit.cfg.patch);
        if (cfg.shuffle)
          patches = permute_patch_rows(patches,
                                       derive_key(img_seed, 0x5e8 + static_cast<uint64_t>(v)));
        emb = encode(&tape, tokenize(&tape, patches, ts.s_vit), ts.s_vit);
      } else {
        LandmarkSet ls = subsample_landmarks(full_lms[v], cfg.subset_k,
                                             derive_key(img_seed, 0x5ab + static_cast<uint64_t>(v)));
        ls = landmark_perturb(ls, PerturbConfig{cfg.alpha, 0}, view.image.width,
                              derive_key(img_seed, 0x7f0 + static_cast<uint64_t>(v)));
        if (cfg.shuffle)
          ls = landmark_shuffle(ls, derive_key(img_seed, 0x5f0 + static_cast<uint64_t>(v)));
        emb = forward_part_fvit(&tape, view.image, ls, ts.s_vit);
      }
      slogits[v] = head_forward(&tape, emb, ts.s_head);
    }

    per_image_losses.push_back(distill_loss(&tape, tprobs, tids, slogits, ts.t_s));
    pairs = distill_pair_count(static_cast<int>(tprobs.size()), nv);
  }

  Tensor loss = per_image_losses[0];
  for (size_t i = 1; i < per_image_losses.size(); ++i)
    loss = add(&tape, loss, per_image_losses[i]);
  loss = scale(&tape, loss, 1.0f / static_cast<float>(per_image_losses.size()));

  StepResult r;
  r.pairs = pairs;
  r.loss = loss.item();
  if (!std::isfinite(r.loss)) {
    r.message = "non-finite loss; step aborted before any update";
    return r;
  }

  ParamRefs sp = student_params(ts);
  zero_grads(sp);
  tape.backward(loss);
  std::string diag;
  if (!ts.opt.step(sp, &diag)) {
    r.message = diag;
    return r;
  }
  renormalize_prototypes(ts.s_head);
  ema_update(ts);
  center_update(ts.center, all_teacher_logits);
  ++ts.step;
  r.ok = true;
  return r;
}

StepResult lafs_train_step(TeacherStudent& ts, const std::vector<Image>& batch,
                           const PretrainConfig& cfg, uint64_t seed) {
  return train_step_impl(ts, batch, cfg, seed, TeacherViewMode::landmark, false);
}

StepResult dino_train_step(TeacherStudent& ts, const std::vector<Image>& batch,
                           const PretrainConfig& cfg, uint64_t seed) {
  return train_step_impl(ts, batch, cfg, seed, cfg.teacher_mode, cfg.grid_backbone);
}

}  // namespace lafs
