#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "lafs/pretrain.hpp"
#include "lafs/rng.hpp"

using namespace lafs;

namespace {

Image random_image(int size, uint64_t seed) {
  Tensor t = Tensor::zeros({1, size, size});
  Rng rng(seed);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<float>(rng.uniform());
  return make_image(t);
}

std::vector<std::vector<float>> snapshot(const ParamRefs& ps) {
  std::vector<std::vector<float>> out;
  for (Tensor* t : ps) out.emplace_back(t->data(), t->data() + t->numel());
  return out;
}

bool bits_equal(const std::vector<std::vector<float>>& a, const ParamRefs& ps) {
  for (size_t i = 0; i < ps.size(); ++i)
    if (std::memcmp(a[i].data(), ps[i]->data(), a[i].size() * sizeof(float)) != 0) return false;
  return true;
}

// small end-to-end setup shared by the train-step tests
struct Rig {
  ViTConfig vit;
  HeadConfig head;
  PretrainConfig cfg;
  std::vector<Image> batch;

  Rig() {
    vit.dim = 16;
    vit.heads = 2;
    vit.depth = 1;
    vit.mlp_hidden = 32;
    vit.r_max = 16;
    vit.patch = 4;
    head.in_dim = 16;
    head.hidden = 32;
    head.bottleneck = 128;
    head.out_dim = 32;
    cfg.views.global_size = 16;
    cfg.views.local_size = 8;
    cfg.views.n_local = 2;
    cfg.subset_k = 4;
    batch = {random_image(24, 101), random_image(24, 202)};
  }

  TeacherStudent make(uint64_t seed) const {
    return make_teacher_student(vit, head, make_localizer(16, 8, derive_key(seed, 1)), cfg, seed);
  }
};

}  // namespace

TEST_CASE("projection head shapes, determinism, and unit prototypes") {
  HeadConfig hc{6, 8, 8, 5};
  DinoHeadParams p = make_head(hc, 99);
  DinoHeadParams q = make_head(hc, 99);
  CHECK(std::memcmp(p.protos.data(), q.protos.data(),
                    p.protos.numel() * sizeof(float)) == 0);
  for (int i = 0; i < 5; ++i) {
    double ss = 0.0;
    for (int j = 0; j < 8; ++j) {
      float w = p.protos.data()[i * 8 + j];
      ss += static_cast<double>(w) * w;
    }
    CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-5));
  }

  Tensor emb = Tensor::zeros({6});
  Tensor logits = head_forward(nullptr, emb, p);
  REQUIRE(logits.numel() == 5);
  for (int j = 0; j < 5; ++j) CHECK(std::isfinite(logits.data()[j]));
}

TEST_CASE("head logits are cosine similarities, bounded by one") {
  HeadConfig hc{6, 8, 8, 5};
  DinoHeadParams p = make_head(hc, 7);
  Rng rng(3);
  Tensor emb = Tensor::zeros({6});
  for (int j = 0; j < 6; ++j) emb.data()[j] = static_cast<float>(rng.gaussian());
  Tensor logits = head_forward(nullptr, emb, p);
  for (int j = 0; j < 5; ++j) CHECK(std::fabs(logits.data()[j]) <= 1.0f + 1e-4f);
}

TEST_CASE("bottleneck normalization cancels input scale") {
  HeadConfig hc{6, 8, 8, 5};
  DinoHeadParams p = make_head(hc, 11);
  Rng rng(5);
  Tensor z = Tensor::zeros({1, 8});
  for (int j = 0; j < 8; ++j) z.data()[j] = static_cast<float>(rng.gaussian());
  Tensor a = head_logits_from_bottleneck(nullptr, z, p);
  Tensor b = head_logits_from_bottleneck(nullptr, scale(nullptr, z, 10.0f), p);
  for (int j = 0; j < 5; ++j)
    CHECK(std::fabs(a.data()[j] - b.data()[j]) < 1e-5f);
}

TEST_CASE("renormalization restores unit rows after a perturbation") {
  HeadConfig hc{6, 8, 8, 5};
  DinoHeadParams p = make_head(hc, 13);
  for (int64_t i = 0; i < p.protos.numel(); ++i) p.protos.data()[i] *= 3.7f;
  renormalize_prototypes(p);
  for (int i = 0; i < 5; ++i) {
    double ss = 0.0;
    for (int j = 0; j < 8; ++j) {
      float w = p.protos.data()[i * 8 + j];
      ss += static_cast<double>(w) * w;
    }
    CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("head gradients agree with finite differences") {
  HeadConfig hc{6, 8, 8, 5};
  DinoHeadParams p = make_head(hc, 17);
  p.set_tracking(true);
  Rng rng(9);
  Tensor emb = Tensor::zeros({6});
  for (int j = 0; j < 6; ++j) emb.data()[j] = static_cast<float>(rng.gaussian());
  emb.set_requires_grad(true);
  auto f = [&](Tape* tape, std::vector<Tensor>& in) {
    return sum_all(tape, head_forward(tape, in[0], p));
  };
  CHECK(gradcheck(f, {emb}) < 1e-3);
}

TEST_CASE("teacher probabilities: centering, sharpening, frozen oracle") {
  Center c;
  c.c = Tensor::zeros({2});
  c.c.data()[0] = 1.0f;
  c.c.data()[1] = 1.0f;
  Tensor logits = Tensor::zeros({2});
  logits.data()[0] = 2.0f;
  // (logits - c) / 1 = [1, -1]; softmax gives [0.880797, 0.119203]
  std::vector<float> q = teacher_probs(logits, c, 1.0f);
  CHECK(q[0] == doctest::Approx(0.880797).epsilon(1e-5));
  CHECK(q[1] == doctest::Approx(0.119203).epsilon(1e-5));
  CHECK(q[0] + q[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("logits equal to the center give the uniform distribution") {
  Center c;
  c.c = Tensor::zeros({8});
  Tensor logits = Tensor::zeros({8});
  for (int j = 0; j < 8; ++j) {
    c.c.data()[j] = 0.3f * j;
    logits.data()[j] = 0.3f * j;
  }
  std::vector<float> q = teacher_probs(logits, c, 0.04f);
  for (int j = 0; j < 8; ++j) CHECK(q[j] == doctest::Approx(0.125).epsilon(1e-6));
}

TEST_CASE("low teacher temperature sharpens toward the argmax") {
  Center c;
  c.c = Tensor::zeros({4});
  Tensor logits = Tensor::zeros({4});
  logits.data()[2] = 0.5f;
  std::vector<float> q = teacher_probs(logits, c, 0.04f);
  CHECK(q[2] > 0.999f);
  std::vector<float> soft = teacher_probs(logits, c, 10.0f);
  CHECK(soft[2] < 0.3f);
}

TEST_CASE("center update: frozen value, identity momentum, convergence") {
  Center c;
  c.c = Tensor::zeros({2});
  Tensor ones = Tensor::full({2}, 1.0f);
  center_update(c, {ones});
  CHECK(c.c.data()[0] == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(c.c.data()[1] == doctest::Approx(0.1).epsilon(1e-6));

  Center frozen;
  frozen.c = Tensor::full({2}, 0.37f);
  frozen.momentum = 1.0f;
  center_update(frozen, {ones});
  CHECK(frozen.c.data()[0] == 0.37f);

  for (int i = 0; i < 80; ++i) center_update(c, {ones});
  CHECK(c.c.data()[0] == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("pair counting excludes each teacher view pairing with itself") {
  CHECK(distill_pair_count(2, 10) == 18);
  CHECK(distill_pair_count(4, 10) == 36);
  CHECK(distill_pair_count(2, 2) == 2);
  CHECK_THROWS_AS(distill_pair_count(0, 5), std::invalid_argument);
  CHECK_THROWS_AS(distill_pair_count(2, 1), std::invalid_argument);
}

TEST_CASE("loss equals target entropy when student matches the teacher") {
  const float t_s = 0.1f;
  Tensor l = Tensor::zeros({3});
  l.data()[0] = 0.1f;
  l.data()[1] = 0.2f;
  l.data()[2] = 0.3f;
  double mx = 3.0, sum = 0.0;
  std::vector<double> qd(3);
  for (int j = 0; j < 3; ++j) {
    qd[j] = std::exp(l.data()[j] / t_s - mx);
    sum += qd[j];
  }
  double entropy = 0.0;
  std::vector<float> q(3);
  for (int j = 0; j < 3; ++j) {
    qd[j] /= sum;
    q[j] = static_cast<float>(qd[j]);
    entropy -= qd[j] * std::log(qd[j]);
  }
  Tensor loss = distill_loss(nullptr, {q}, {0}, {l, l}, t_s);
  CHECK(loss.item() == doctest::Approx(entropy).epsilon(1e-5));
}

TEST_CASE("one-hot teacher with a confident matching student drives loss to zero") {
  std::vector<float> q = {0.0f, 0.0f, 1.0f};
  Tensor peaked = Tensor::zeros({3});
  peaked.data()[2] = 5.0f;
  Tensor other = Tensor::zeros({3});
  Tensor loss = distill_loss(nullptr, {q}, {0}, {other, peaked}, 0.1f);
  CHECK(loss.item() < 1e-3f);
}

TEST_CASE("mismatched prototype counts raise a dimension error") {
  std::vector<float> q(4, 0.25f);
  Tensor l = Tensor::zeros({3});
  CHECK_THROWS_AS(distill_loss(nullptr, {q}, {0}, {l, l}, 0.1f), std::invalid_argument);
  CHECK_THROWS_AS(distill_loss(nullptr, {std::vector<float>(3, 1.0f / 3)}, {5}, {l, l}, 0.1f),
                  std::invalid_argument);
}

TEST_CASE("ema endpoints are bit-exact and interior values match a recomputation") {
  Rig rig;
  TeacherStudent ts = rig.make(500);

  ts.ema_l = 1.0f;
  auto before = snapshot(ts.t_vit.param_refs());
  // drift the student so the update would be visible
  ts.s_vit.patch_proj.data()[0] += 1.0f;
  ema_update(ts);
  CHECK(bits_equal(before, ts.t_vit.param_refs()));

  ts.ema_l = 0.0f;
  ema_update(ts);
  CHECK(std::memcmp(ts.t_vit.patch_proj.data(), ts.s_vit.patch_proj.data(),
                    ts.t_vit.patch_proj.numel() * sizeof(float)) == 0);

  ts.ema_l = 0.9f;
  ts.s_vit.patch_proj.data()[0] += 0.5f;
  float old0 = ts.t_vit.patch_proj.data()[0];
  float new0 = ts.s_vit.patch_proj.data()[0];
  ema_update(ts);
  CHECK(ts.t_vit.patch_proj.data()[0] ==
        doctest::Approx(0.9 * old0 + 0.1 * new0).epsilon(1e-7));
}

TEST_CASE("first training step: bounded loss, updates flow, frozen parts stay put") {
  Rig rig;
  TeacherStudent ts = rig.make(42);
  ts.ema_l = 0.9f;

  auto loc_before = snapshot(ts.localizer.param_refs());
  auto teacher_before = snapshot(ts.t_vit.param_refs());
  auto student_before = snapshot(ts.s_vit.param_refs());

  StepResult r = lafs_train_step(ts, rig.batch, rig.cfg, 1000);
  REQUIRE(r.ok);
  CHECK(std::isfinite(r.loss));
  // near-uniform predictions at initialization keep the loss near log K
  CHECK(r.loss <= std::log(32.0f) + 1.0f);
  CHECK(r.pairs == distill_pair_count(2, 4));
  CHECK(ts.step == 1);

  CHECK(bits_equal(loc_before, ts.localizer.param_refs()));
  CHECK_FALSE(bits_equal(student_before, ts.s_vit.param_refs()));

  // teacher followed the exact convex combination of old teacher and new student
  ParamRefs tp = ts.t_vit.param_refs();
  ParamRefs sp = ts.s_vit.param_refs();
  double max_err = 0.0;
  for (size_t i = 0; i < tp.size(); ++i)
    for (int64_t j = 0; j < tp[i]->numel(); ++j) {
      double want = 0.9 * teacher_before[i][j] + 0.1 * sp[i]->data()[j];
      max_err = std::max(max_err, std::fabs(want - tp[i]->data()[j]));
    }
  CHECK(max_err < 1e-6);

  // the teacher branch never accumulates gradients
  for (Tensor* t : tp) CHECK_FALSE(t->has_grad());
  for (Tensor* t : ts.t_head.param_refs()) CHECK_FALSE(t->has_grad());

  // centering tracked the teacher logits
  float csum = 0.0f;
  for (int j = 0; j < 32; ++j) csum += std::fabs(ts.center.c.data()[j]);
  CHECK(csum > 0.0f);
}

TEST_CASE("training is a pure function of seeds") {
  Rig rig;
  std::vector<float> a, b;
  for (int run = 0; run < 2; ++run) {
    TeacherStudent ts = rig.make(42);
    std::vector<float>& out = run == 0 ? a : b;
    for (int s = 0; s < 3; ++s) {
      StepResult r = lafs_train_step(ts, rig.batch, rig.cfg, 2000 + s);
      REQUIRE(r.ok);
      out.push_back(r.loss);
    }
  }
  CHECK(a == b);
}

TEST_CASE("landmark teacher mode reproduces the canonical step exactly") {
  Rig rig;
  TeacherStudent ts1 = rig.make(7);
  TeacherStudent ts2 = rig.make(7);
  StepResult r1 = lafs_train_step(ts1, rig.batch, rig.cfg, 31);
  PretrainConfig cfg = rig.cfg;
  cfg.teacher_mode = TeacherViewMode::landmark;
  StepResult r2 = dino_train_step(ts2, rig.batch, cfg, 31);
  CHECK(r1.loss == r2.loss);
  CHECK(bits_equal(snapshot(ts1.s_vit.param_refs()), ts2.s_vit.param_refs()));
}

TEST_CASE("grid backbone trains on patch grids and honors shuffling") {
  Rig rig;
  PretrainConfig cfg = rig.cfg;
  cfg.teacher_mode = TeacherViewMode::grid;
  cfg.grid_backbone = true;
  TeacherStudent ts = rig.make(55);
  StepResult r = dino_train_step(ts, rig.batch, cfg, 77);
  REQUIRE(r.ok);
  CHECK(std::isfinite(r.loss));
  CHECK(r.pairs == distill_pair_count(2, 4));
}

TEST_CASE("mixed teacher views double the distillation pairs") {
  Rig rig;
  PretrainConfig cfg = rig.cfg;
  cfg.teacher_mode = TeacherViewMode::mixed;
  TeacherStudent ts = rig.make(66);
  StepResult r = dino_train_step(ts, rig.batch, cfg, 88);
  REQUIRE(r.ok);
  CHECK(r.pairs == distill_pair_count(4, 4));
}

TEST_CASE("invalid configurations are rejected up front") {
  Rig rig;
  TeacherStudent ts = rig.make(1);
  PretrainConfig bad = rig.cfg;
  bad.subset_k = 99;
  CHECK_THROWS_AS(lafs_train_step(ts, rig.batch, bad, 5), std::invalid_argument);

  PretrainConfig combo = rig.cfg;
  combo.grid_backbone = true;
  combo.teacher_mode = TeacherViewMode::landmark;
  CHECK_THROWS_AS(dino_train_step(ts, rig.batch, combo, 5), std::invalid_argument);

  HeadConfig wrong = rig.head;
  wrong.in_dim = 7;
  CHECK_THROWS_AS(
      make_teacher_student(rig.vit, wrong, make_localizer(16, 8, 2), rig.cfg, 3),
      std::invalid_argument);
}

TEST_CASE("a poisoned forward aborts the step without touching any state") {
  Rig rig;
  TeacherStudent ts = rig.make(9);
  StepResult warm = lafs_train_step(ts, rig.batch, rig.cfg, 11);
  REQUIRE(warm.ok);

  ts.s_vit.patch_proj.data()[0] = std::numeric_limits<float>::quiet_NaN();
  auto student_before = snapshot(ts.s_head.param_refs());
  auto teacher_before = snapshot(ts.t_vit.param_refs());
  int64_t step_before = ts.step;

  StepResult r = lafs_train_step(ts, rig.batch, rig.cfg, 12);
  CHECK_FALSE(r.ok);
  CHECK_FALSE(r.message.empty());
  CHECK(bits_equal(student_before, ts.s_head.param_refs()));
  CHECK(bits_equal(teacher_before, ts.t_vit.param_refs()));
  CHECK(ts.step == step_before);
}
