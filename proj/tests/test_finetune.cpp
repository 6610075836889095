#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "lafs/finetune.hpp"
#include "lafs/rng.hpp"

using namespace lafs;

namespace {

// synthetic identities: a per-identity interference pattern with per-sample
// phase jitter, enough structure for losses to move
Image identity_image(int id, int sample, int size = 20) {
  Rng genotype(1000 + static_cast<uint64_t>(id));
  const double ax = genotype.uniform_in(0.5, 2.0);
  const double ay = genotype.uniform_in(0.5, 2.0);
  const double phase = genotype.uniform_in(0.0, 6.28318);
  Rng jitter(derive_key(77, static_cast<uint64_t>(id) * 100 + sample));
  const double dx = jitter.uniform_in(-0.08, 0.08);
  const double dy = jitter.uniform_in(-0.08, 0.08);
  Tensor t = Tensor::zeros({1, size, size});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u = static_cast<double>(x) / size + dx;
      const double v = static_cast<double>(y) / size + dy;
      const double val = 0.5 + 0.45 * std::sin(ax * u * 6.28318 + phase) *
                                   std::cos(ay * v * 6.28318);
      t.data()[y * size + x] = static_cast<float>(val);
    }
  return make_image(t);
}

CosFaceHead axis_head(float s, float m) {
  CosFaceHead head = make_cosface(2, 2, s, m, 1);
  head.w.data()[0] = 1.0f;
  head.w.data()[1] = 0.0f;
  head.w.data()[2] = 0.0f;
  head.w.data()[3] = 1.0f;
  return head;
}

Tensor unit_emb() {
  Tensor emb = Tensor::zeros({2});
  emb.data()[0] = 0.5f;
  emb.data()[1] = 0.8660254f;
  return emb;
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

struct Rig {
  ViTConfig vit;
  FinetuneConfig cfg;
  std::vector<Image> images;
  std::vector<int> labels;

  Rig() {
    vit.dim = 16;
    vit.heads = 2;
    vit.depth = 1;
    vit.mlp_hidden = 32;
    vit.r_max = 16;
    vit.patch = 4;
    cfg.batch_size = 4;
    cfg.base_lr = 1e-3f;
    for (int id = 0; id < 4; ++id)
      for (int s = 0; s < 3; ++s) {
        images.push_back(identity_image(id, s));
        labels.push_back(id);
      }
  }

  FinetuneModel make(uint64_t seed, std::optional<LocalizerParams> ref = std::nullopt) const {
    return make_finetune_model(make_localizer(16, 8, derive_key(seed, 2)),
                               make_vit(vit, derive_key(seed, 3)), 4, cfg, seed, std::move(ref));
  }
};

}  // namespace

TEST_CASE("margin shifts only the target logit by s times m") {
  CosFaceHead head = axis_head(64.0f, 0.35f);
  // cos theta = [0.5, 0.866]; target logit 64 * (0.5 - 0.35) = 9.6
  Tensor logits = cosface_logits(nullptr, unit_emb(), head, 0);
  CHECK(logits.data()[0] == doctest::Approx(9.6).epsilon(1e-4));
  CHECK(logits.data()[1] == doctest::Approx(64.0 * 0.8660254).epsilon(1e-4));

  CosFaceHead plain = axis_head(64.0f, 0.0f);
  Tensor unmargined = cosface_logits(nullptr, unit_emb(), plain, 0);
  CHECK(logits.data()[1] == unmargined.data()[1]);
  CHECK(unmargined.data()[0] == doctest::Approx(32.0).epsilon(1e-4));
}

TEST_CASE("zero margin reduces to scaled softmax cross-entropy") {
  CosFaceHead head = axis_head(4.0f, 0.0f);
  Tensor loss = cosface_loss(nullptr, unit_emb(), 0, head);
  const double l0 = 4.0 * 0.5, l1 = 4.0 * 0.8660254;
  const double want = -(l0 - std::log(std::exp(l0) + std::exp(l1)));
  CHECK(loss.item() == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("one gradient step pulls the embedding toward its class weight") {
  CosFaceHead head = axis_head(16.0f, 0.2f);
  Tensor emb = Tensor::zeros({2});
  emb.data()[0] = 0.3f;
  emb.data()[1] = 0.9f;
  emb.set_requires_grad(true);
  auto cos0 = [&](const Tensor& e) {
    const double n = std::sqrt(static_cast<double>(e.data()[0]) * e.data()[0] +
                               static_cast<double>(e.data()[1]) * e.data()[1]);
    return e.data()[0] / n;
  };
  const double before = cos0(emb);
  Tape tape;
  Tensor loss = cosface_loss(&tape, emb, 0, head);
  tape.backward(loss);
  const float* g = emb.grad_data();
  REQUIRE(g != nullptr);
  Tensor stepped = Tensor::zeros({2});
  stepped.data()[0] = emb.data()[0] - 0.01f * g[0];
  stepped.data()[1] = emb.data()[1] - 0.01f * g[1];
  CHECK(cos0(stepped) > before);
}

TEST_CASE("degenerate embeddings are guarded and reported") {
  CosFaceHead head = axis_head(16.0f, 0.2f);
  std::string warning;
  Tensor loss = cosface_loss(nullptr, Tensor::zeros({2}), 0, head, &warning);
  CHECK(std::isfinite(loss.item()));
  CHECK_FALSE(warning.empty());
}

TEST_CASE("labels outside the class range are rejected") {
  CosFaceHead head = axis_head(16.0f, 0.2f);
  CHECK_THROWS_AS(cosface_loss(nullptr, unit_emb(), 2, head), std::invalid_argument);
  CHECK_THROWS_AS(cosface_loss(nullptr, unit_emb(), -1, head), std::invalid_argument);
}

TEST_CASE("landmark regularizer: zero at identity, euclidean mean, one-sided gradient") {
  LandmarkSet a, b;
  a.coords = Tensor::zeros({2, 2});
  b.coords = Tensor::zeros({2, 2});
  CHECK(landmark_reg(nullptr, a, b).item() == 0.0f);

  LandmarkSet shifted;
  shifted.coords = Tensor::zeros({2, 2});
  shifted.coords.data()[0] = 0.3f;
  shifted.coords.data()[1] = 0.4f;
  // one landmark moved by (0.3, 0.4), the other fixed: mean distance 0.25
  CHECK(landmark_reg(nullptr, a, shifted).item() == doctest::Approx(0.25).epsilon(1e-6));

  LandmarkSet single_ref, single_pred;
  single_ref.coords = Tensor::zeros({1, 2});
  single_pred.coords = Tensor::zeros({1, 2});
  single_pred.coords.data()[0] = 0.3f;
  single_pred.coords.data()[1] = 0.4f;
  CHECK(landmark_reg(nullptr, single_ref, single_pred).item() ==
        doctest::Approx(0.5).epsilon(1e-6));

  single_ref.coords.set_requires_grad(true);
  single_pred.coords.set_requires_grad(true);
  Tape tape;
  Tensor r = landmark_reg(&tape, single_ref, single_pred);
  tape.backward(r);
  CHECK(single_pred.coords.has_grad());
  CHECK_FALSE(single_ref.coords.has_grad());

  LandmarkSet three;
  three.coords = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(landmark_reg(nullptr, a, three), std::invalid_argument);
}

TEST_CASE("layer-wise decay follows the closed-form power table") {
  CHECK(layerwise_lr(1.0f, 1.0f, 0, 4) == 1.0f);
  CHECK(layerwise_lr(1.0f, 1.0f, 4, 4) == 1.0f);
  CHECK(layerwise_lr(1.0f, 0.58f, 0, 4) == doctest::Approx(0.11316496).epsilon(1e-5));
  CHECK(layerwise_lr(1.0f, 0.58f, 4, 4) == 1.0f);
  float prev = 0.0f;
  for (int d = 0; d <= 4; ++d) {
    float lr = layerwise_lr(1.0f, 0.58f, d, 4);
    CHECK(lr > prev);
    prev = lr;
  }
  CHECK_THROWS_AS(layerwise_lr(1.0f, 0.0f, 0, 4), std::invalid_argument);
  CHECK_THROWS_AS(layerwise_lr(1.0f, 0.58f, 5, 4), std::invalid_argument);
}

TEST_CASE("warmup ramps linearly and the cosine tail decays monotonically") {
  CHECK(scheduled_lr(1.0f, 0, 10, 5) == doctest::Approx(0.2));
  CHECK(scheduled_lr(1.0f, 4, 10, 5) == doctest::Approx(1.0));
  CHECK(scheduled_lr(1.0f, 5, 10, 5) == doctest::Approx(1.0));
  CHECK(scheduled_lr(1.0f, 9, 10, 5) == doctest::Approx(0.09549).epsilon(1e-3));
  float prev = 2.0f;
  for (int e = 5; e < 10; ++e) {
    float lr = scheduled_lr(1.0f, e, 10, 5);
    CHECK(lr < prev);
    prev = lr;
  }
  CHECK_THROWS_AS(scheduled_lr(1.0f, 10, 10, 5), std::invalid_argument);
  CHECK_THROWS_AS(scheduled_lr(1.0f, 0, 10, 11), std::invalid_argument);
}

TEST_CASE("fixed-landmark mode trains the backbone and leaves the localizer bits alone") {
  Rig rig;
  FinetuneModel m = rig.make(11);
  auto loc_before = snapshot(m.localizer.param_refs());
  auto vit_before = snapshot(m.vit.param_refs());
  for (int s = 0; s < 3; ++s) {
    std::vector<Image> bi(rig.images.begin(), rig.images.begin() + 4);
    std::vector<int> bl(rig.labels.begin(), rig.labels.begin() + 4);
    FinetuneStepResult r = finetune_step(m, bi, bl, rig.cfg, 100 + s);
    REQUIRE(r.ok);
    CHECK(std::isfinite(r.total));
    CHECK(r.total == r.id);
    CHECK(r.reg == 0.0f);
  }
  CHECK(bits_equal(loc_before, m.localizer.param_refs()));
  CHECK_FALSE(bits_equal(vit_before, m.vit.param_refs()));
  CHECK(m.step == 3);
}

TEST_CASE("trainable-landmark mode moves the localizer") {
  Rig rig;
  FinetuneConfig cfg = rig.cfg;
  cfg.mode = FinetuneMode::trainable_landmark;
  FinetuneModel m = make_finetune_model(make_localizer(16, 8, 5), make_vit(rig.vit, 6), 4, cfg, 7);
  auto loc_before = snapshot(m.localizer.param_refs());
  std::vector<Image> bi(rig.images.begin(), rig.images.begin() + 4);
  std::vector<int> bl(rig.labels.begin(), rig.labels.begin() + 4);
  FinetuneStepResult r = finetune_step(m, bi, bl, cfg, 1);
  REQUIRE(r.ok);
  CHECK_FALSE(bits_equal(loc_before, m.localizer.param_refs()));
}

TEST_CASE("soft-label mode without a reference localizer is a configuration error") {
  Rig rig;
  FinetuneConfig cfg = rig.cfg;
  cfg.mode = FinetuneMode::soft_label;
  CHECK_THROWS_AS(
      make_finetune_model(make_localizer(16, 8, 5), make_vit(rig.vit, 6), 4, cfg, 7),
      std::invalid_argument);
}

TEST_CASE("soft-label with zero beta reproduces whole-backbone finetuning bit for bit") {
  Rig rig;
  FinetuneConfig b_cfg = rig.cfg;
  b_cfg.mode = FinetuneMode::trainable_landmark;
  FinetuneConfig c_cfg = rig.cfg;
  c_cfg.mode = FinetuneMode::soft_label;
  c_cfg.beta = 0.0f;

  FinetuneModel mb = rig.make(21);
  mb.mode = FinetuneMode::trainable_landmark;
  mb.localizer.frozen = false;
  mb.localizer.set_tracking(true);
  FinetuneModel mc = rig.make(21, make_localizer(16, 8, 999));
  mc.mode = FinetuneMode::soft_label;
  mc.localizer.frozen = false;
  mc.localizer.set_tracking(true);

  for (int s = 0; s < 5; ++s) {
    std::vector<Image> bi(rig.images.begin(), rig.images.begin() + 4);
    std::vector<int> bl(rig.labels.begin(), rig.labels.begin() + 4);
    FinetuneStepResult rb = finetune_step(mb, bi, bl, b_cfg, 300 + s);
    FinetuneStepResult rc = finetune_step(mc, bi, bl, c_cfg, 300 + s);
    REQUIRE(rb.ok);
    REQUIRE(rc.ok);
    CHECK(rb.total == rc.total);
  }
  CHECK(bits_equal(snapshot(mb.vit.param_refs()), mc.vit.param_refs()));
  CHECK(bits_equal(snapshot(mb.localizer.param_refs()), mc.localizer.param_refs()));
}

TEST_CASE("the regularizer routes gradient into the localizer") {
  Rig rig;
  FinetuneConfig c0 = rig.cfg;
  c0.mode = FinetuneMode::soft_label;
  c0.beta = 0.0f;
  FinetuneConfig c1 = c0;
  c1.beta = 10.0f;

  FinetuneModel m0 = rig.make(31, make_localizer(16, 8, 998));
  m0.mode = FinetuneMode::soft_label;
  m0.localizer.frozen = false;
  m0.localizer.set_tracking(true);
  FinetuneModel m1 = rig.make(31, make_localizer(16, 8, 998));
  m1.mode = FinetuneMode::soft_label;
  m1.localizer.frozen = false;
  m1.localizer.set_tracking(true);

  std::vector<Image> bi(rig.images.begin(), rig.images.begin() + 4);
  std::vector<int> bl(rig.labels.begin(), rig.labels.begin() + 4);
  REQUIRE(finetune_step(m0, bi, bl, c0, 9).ok);
  FinetuneStepResult r1 = finetune_step(m1, bi, bl, c1, 9);
  REQUIRE(r1.ok);
  CHECK(r1.reg > 0.0f);
  CHECK_FALSE(bits_equal(snapshot(m0.localizer.param_refs()), m1.localizer.param_refs()));
}

TEST_CASE("a strong regularizer pulls landmarks toward the reference") {
  Rig rig;
  FinetuneConfig cfg = rig.cfg;
  cfg.mode = FinetuneMode::soft_label;
  cfg.beta = 100.0f;
  cfg.base_lr = 3e-4f;
  cfg.layer_decay = 1.0f;

  LocalizerParams reference = make_localizer(16, 8, 777);
  FinetuneModel m = rig.make(41, std::move(reference));
  m.mode = FinetuneMode::soft_label;
  m.localizer.frozen = false;
  m.localizer.set_tracking(true);

  std::vector<Image> bi(rig.images.begin(), rig.images.begin() + 2);
  std::vector<int> bl(rig.labels.begin(), rig.labels.begin() + 2);
  auto mean_gap = [&]() {
    double sum = 0.0;
    for (const Image& img : bi) {
      LandmarkSet pred = predict_landmarks_any_size(nullptr, img, m.localizer);
      LandmarkSet ref = predict_landmarks_any_size(nullptr, img, *m.reference);
      sum += landmark_reg(nullptr, ref, pred).item();
    }
    return sum / bi.size();
  };
  const double before = mean_gap();
  for (int s = 0; s < 200; ++s) REQUIRE(finetune_step(m, bi, bl, cfg, 50 + s).ok);
  CHECK(mean_gap() < before);
}

TEST_CASE("grid mode matches scratch transformer shapes and trains") {
  Rig rig;
  FinetuneConfig cfg = rig.cfg;
  cfg.mode = FinetuneMode::landmark_to_grid;
  FinetuneModel m = make_finetune_model(make_localizer(16, 8, 5), make_vit(rig.vit, 6), 4, cfg, 7);

  ViTParams scratch = make_vit(rig.vit, 12345);
  auto got = m.vit.named_params();
  auto want = scratch.named_params();
  REQUIRE(got.size() == want.size());
  for (size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].name == want[i].name);
    CHECK(got[i].tensor.shape() == want[i].tensor.shape());
  }

  std::vector<Image> bi;
  std::vector<int> bl;
  for (int id = 0; id < 4; ++id) {
    bi.push_back(identity_image(id, 0, 16));
    bl.push_back(id);
  }
  FinetuneStepResult r = finetune_step(m, bi, bl, cfg, 3);
  REQUIRE(r.ok);
  CHECK(std::isfinite(r.total));
}

TEST_CASE("a poisoned forward aborts the finetune step without updates") {
  Rig rig;
  FinetuneModel m = rig.make(51);
  std::vector<Image> bi(rig.images.begin(), rig.images.begin() + 4);
  std::vector<int> bl(rig.labels.begin(), rig.labels.begin() + 4);
  REQUIRE(finetune_step(m, bi, bl, rig.cfg, 1).ok);

  m.vit.patch_proj.data()[0] = std::numeric_limits<float>::quiet_NaN();
  auto head_before = snapshot(m.head.param_refs());
  int64_t step_before = m.step;
  FinetuneStepResult r = finetune_step(m, bi, bl, rig.cfg, 2);
  CHECK_FALSE(r.ok);
  CHECK_FALSE(r.message.empty());
  CHECK(bits_equal(head_before, m.head.param_refs()));
  CHECK(m.step == step_before);
}

TEST_CASE("supervised bootstrap reduces the loss and spreads landmarks") {
  std::vector<Image> images;
  std::vector<int> labels;
  for (int id = 0; id < 6; ++id)
    for (int s = 0; s < 4; ++s) {
      images.push_back(identity_image(id, s));
      labels.push_back(id);
    }
  BootstrapConfig cfg;
  cfg.localizer_input = 16;
  cfg.landmark_count = 8;
  cfg.vit.dim = 16;
  cfg.vit.heads = 2;
  cfg.vit.depth = 1;
  cfg.vit.mlp_hidden = 32;
  cfg.vit.r_max = 16;
  cfg.vit.patch = 4;
  cfg.lr = 5e-4f;
  cfg.epochs = 6;
  cfg.batch_size = 8;

  BootstrapResult r = bootstrap_supervised(images, labels, cfg, 404);
  REQUIRE(r.ok);
  CHECK(r.final_loss < r.initial_loss);
  LandmarkSet lm = predict_landmarks_any_size(nullptr, images[0], r.localizer);
  CHECK(landmark_spread(lm) > 0.01f);

  CHECK_THROWS_AS(bootstrap_supervised({images[0]}, {0}, cfg, 1), std::invalid_argument);
}
