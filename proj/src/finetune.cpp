#include "lafs/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lafs/rng.hpp"

namespace lafs {

// -------------------------------------------------------------------------
// margin classifier

ParamRefs CosFaceHead::param_refs() { return {&w}; }

std::vector<NamedTensor> CosFaceHead::named_params(const std::string& prefix) {
  return {{prefix + ".w", w}};
}

void CosFaceHead::set_tracking(bool on) { w.set_requires_grad(on); }

CosFaceHead make_cosface(int num_classes, int dim, float s, float m, uint64_t seed) {
  if (num_classes < 2)
    throw std::invalid_argument("make_cosface: need at least 2 classes, got " +
                                std::to_string(num_classes));
  if (dim < 1) throw std::invalid_argument("make_cosface: dim must be positive");
  if (!(s > 0.0f)) throw std::invalid_argument("make_cosface: scale must be > 0");
  if (!(m >= 0.0f && m < 1.0f))
    throw std::invalid_argument("make_cosface: margin must lie in [0, 1)");
  CosFaceHead head;
  head.s = s;
  head.m = m;
  head.w = Tensor::zeros({num_classes, dim});
  Rng rng(derive_key(seed, 0xc05f));
  const double stddev = std::sqrt(1.0 / dim);
  for (int64_t i = 0; i < head.w.numel(); ++i)
    head.w.data()[i] = static_cast<float>(rng.gaussian() * stddev);
  return head;
}

Tensor cosface_logits(Tape* tape, Tensor emb, const CosFaceHead& head, int label,
                      std::string* warning) {
  const int c = head.w.dim(0);
  Tensor x = emb;
  if (x.ndim() == 1) x = reshape(tape, x, {1, static_cast<int>(x.numel())});
  if (x.ndim() != 2 || x.dim(0) != 1 || x.dim(1) != head.w.dim(1))
    throw std::invalid_argument("cosface_logits: embedding " + shape_str(emb.shape()) +
                                " vs weights " + shape_str(head.w.shape()));
  if (label < -1 || label >= c)
    throw std::invalid_argument("cosface_logits: label " + std::to_string(label) +
                                " outside [0, " + std::to_string(c) + ")");
  double ss = 0.0;
  for (int64_t j = 0; j < x.numel(); ++j)
    ss += static_cast<double>(x.data()[j]) * x.data()[j];
  if (std::sqrt(ss) < 1e-6 && warning)
    *warning = "near-zero embedding norm; normalization is epsilon-guarded";

  Tensor cos = matmul(tape, l2_normalize_rows(tape, x),
                      transpose(tape, l2_normalize_rows(tape, head.w)));
  Tensor logits = reshape(tape, scale(tape, cos, head.s), {c});
  if (label >= 0 && head.m != 0.0f) {
    Tensor margin = Tensor::zeros({c});
    margin.data()[label] = head.s * head.m;
    logits = sub(tape, logits, margin);
  }
  return logits;
}

Tensor cosface_loss(Tape* tape, Tensor emb, int label, const CosFaceHead& head,
                    std::string* warning) {
  if (label < 0)
    throw std::invalid_argument("cosface_loss: label must be non-negative");
  return cross_entropy_hard(tape, cosface_logits(tape, emb, head, label, warning), label);
}

// -------------------------------------------------------------------------
// landmark regularization

Tensor landmark_reg(Tape* tape, const LandmarkSet& reference, const LandmarkSet& predicted) {
  if (reference.count() != predicted.count())
    throw std::invalid_argument("landmark_reg: reference count " +
                                std::to_string(reference.count()) + " vs predicted " +
                                std::to_string(predicted.count()));
  return mean_rowwise_l2(tape, predicted.coords, reference.coords.detached());
}

float landmark_spread(const LandmarkSet& lm) {
  const int r = lm.count();
  if (r < 2) return 0.0f;
  const float* p = lm.coords.data();
  double sum = 0.0;
  int pairs = 0;
  for (int i = 0; i < r; ++i)
    for (int j = i + 1; j < r; ++j) {
      const double dx = static_cast<double>(p[i * 2]) - p[j * 2];
      const double dy = static_cast<double>(p[i * 2 + 1]) - p[j * 2 + 1];
      sum += std::sqrt(dx * dx + dy * dy);
      ++pairs;
    }
  return static_cast<float>(sum / pairs);
}

// -------------------------------------------------------------------------
// schedules

float layerwise_lr(float base_lr, float decay, int depth_index, int total_depth) {
  if (!(decay > 0.0f && decay <= 1.0f))
    throw std::invalid_argument("layerwise_lr: decay must lie in (0, 1]");
  if (depth_index < 0 || depth_index > total_depth)
    throw std::invalid_argument("layerwise_lr: depth index " + std::to_string(depth_index) +
                                " outside [0, " + std::to_string(total_depth) + "]");
  return base_lr * static_cast<float>(std::pow(decay, total_depth - depth_index));
}

float scheduled_lr(float base_lr, int epoch, int total_epochs, int warmup_epochs) {
  if (total_epochs < 1) throw std::invalid_argument("scheduled_lr: total epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs > total_epochs)
    throw std::invalid_argument("scheduled_lr: warmup outside [0, total]");
  if (epoch < 0 || epoch >= total_epochs)
    throw std::invalid_argument("scheduled_lr: epoch " + std::to_string(epoch) +
                                " outside [0, " + std::to_string(total_epochs) + ")");
  if (epoch < warmup_epochs)
    return base_lr * static_cast<float>(epoch + 1) / static_cast<float>(warmup_epochs);
  const int span = total_epochs - warmup_epochs;
  if (span <= 1) return base_lr;
  const double t = static_cast<double>(epoch - warmup_epochs) / span;
  return base_lr * static_cast<float>(0.5 * (1.0 + std::cos(t * 3.14159265358979323846)));
}

// -------------------------------------------------------------------------
// model assembly

static bool trains_localizer(FinetuneMode mode) {
  return mode == FinetuneMode::trainable_landmark || mode == FinetuneMode::soft_label;
}

FinetuneModel make_finetune_model(LocalizerParams localizer, ViTParams vit, int num_classes,
                                  const FinetuneConfig& cfg, uint64_t seed,
                                  std::optional<LocalizerParams> reference) {
  if (!(cfg.beta >= 0.0f)) throw std::invalid_argument("make_finetune_model: beta must be >= 0");
  if (cfg.mode == FinetuneMode::soft_label && !reference.has_value())
    throw std::invalid_argument("make_finetune_model: soft_label mode requires a reference localizer");
  FinetuneModel m;
  m.mode = cfg.mode;
  m.localizer = std::move(localizer);
  m.vit = std::move(vit);
  m.head = make_cosface(num_classes, m.vit.cfg.dim, cfg.s, cfg.m, derive_key(seed, 0xf17e));
  if (trains_localizer(cfg.mode)) {
    m.localizer.frozen = false;
    m.localizer.set_tracking(true);
  } else {
    freeze(m.localizer);
  }
  m.vit.set_tracking(true);
  m.head.set_tracking(true);
  if (reference.has_value()) {
    m.reference = std::move(reference);
    freeze(*m.reference);
  }
  m.opt.lr = cfg.base_lr;
  m.opt.weight_decay = cfg.weight_decay;
  return m;
}

static ParamRefs trainable_params(FinetuneModel& m) {
  ParamRefs out;
  if (trains_localizer(m.mode))
    for (Tensor* t : m.localizer.param_refs()) out.push_back(t);
  for (Tensor* t : m.vit.param_refs()) out.push_back(t);
  for (Tensor* t : m.head.param_refs()) out.push_back(t);
  return out;
}

// Depth groups: localizer and token-level parameters at 0, encoder block i
// at i+1, the final norm and classifier at full depth.
static std::vector<float> lr_scale_vector(FinetuneModel& m, float decay) {
  const int depth = m.vit.cfg.depth;
  const int total = depth + 1;
  std::vector<float> scales;
  auto push_depth = [&](int depth_index, size_t n) {
    const float s = layerwise_lr(1.0f, decay, depth_index, total);
    for (size_t i = 0; i < n; ++i) scales.push_back(s);
  };
  if (trains_localizer(m.mode)) push_depth(0, m.localizer.param_refs().size());
  const size_t vit_n = m.vit.param_refs().size();
  const size_t per_block = depth > 0 ? (vit_n - 6) / depth : 0;
  push_depth(0, 4);  // patch projection, bias, class token, positional table
  for (int i = 0; i < depth; ++i) push_depth(i + 1, per_block);
  push_depth(total, 2);  // final norm
  push_depth(total, m.head.param_refs().size());
  return scales;
}

// -------------------------------------------------------------------------
// training steps

FinetuneStepResult finetune_step(FinetuneModel& model, const std::vector<Image>& images,
                                 const std::vector<int>& labels, const FinetuneConfig& cfg,
                                 uint64_t seed) {
  (void)seed;
  if (images.empty() || images.size() != labels.size())
    throw std::invalid_argument("finetune_step: batch of " + std::to_string(images.size()) +
                                " images vs " + std::to_string(labels.size()) + " labels");
  if (model.mode == FinetuneMode::soft_label && !model.reference.has_value())
    throw std::invalid_argument("finetune_step: soft_label mode requires a reference localizer");
  const bool use_reg = model.mode == FinetuneMode::soft_label && cfg.beta != 0.0f;

  Tape tape;
  Tensor id_total, reg_total;
  for (size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    Tensor emb;
    if (model.mode == FinetuneMode::landmark_to_grid) {
      Tensor patches = grid_patches(img, model.vit.cfg.patch);
      emb = encode(&tape, tokenize(&tape, patches, model.vit), model.vit);
    } else {
      LandmarkSet lm = predict_landmarks_any_size(&tape, img, model.localizer);
      emb = forward_part_fvit(&tape, img, lm, model.vit);
      if (use_reg) {
        LandmarkSet ref = predict_landmarks_any_size(nullptr, img, *model.reference);
        Tensor r = landmark_reg(&tape, ref, lm);
        reg_total = reg_total.defined() ? add(&tape, reg_total, r) : r;
      }
    }
    Tensor li = cosface_loss(&tape, emb, labels[i], model.head);
    id_total = id_total.defined() ? add(&tape, id_total, li) : li;
  }
  const float inv_n = 1.0f / static_cast<float>(images.size());
  Tensor id_loss = scale(&tape, id_total, inv_n);
  Tensor total = id_loss;
  FinetuneStepResult r;
  if (use_reg) {
    Tensor reg_loss = scale(&tape, reg_total, inv_n);
    r.reg = reg_loss.item();
    total = add(&tape, total, scale(&tape, reg_loss, cfg.beta));
  }
  r.id = id_loss.item();
  r.total = total.item();
  if (!std::isfinite(r.total)) {
    r.message = "non-finite loss; step aborted before any update";
    return r;
  }

  ParamRefs params = trainable_params(model);
  zero_grads(params);
  tape.backward(total);
  std::vector<float> scales = lr_scale_vector(model, cfg.layer_decay);
  std::string diag;
  if (!model.opt.step(params, &diag, &scales)) {
    r.message = diag;
    return r;
  }
  ++model.step;
  r.ok = true;
  return r;
}

EpochRunResult finetune_epochs(FinetuneModel& model, const std::vector<Image>& images,
                               const std::vector<int>& labels, const FinetuneConfig& cfg,
                               uint64_t seed) {
  if (images.empty() || images.size() != labels.size())
    throw std::invalid_argument("finetune_epochs: dataset of " + std::to_string(images.size()) +
                                " images vs " + std::to_string(labels.size()) + " labels");
  if (cfg.batch_size < 1) throw std::invalid_argument("finetune_epochs: batch size must be >= 1");
  EpochRunResult out;
  const int n = static_cast<int>(images.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    model.opt.lr = scheduled_lr(cfg.base_lr, epoch, cfg.epochs, cfg.warmup_epochs);
    Rng rng(derive_key(seed, 0xe90c + static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    double epoch_sum = 0.0;
    int steps = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int stop = std::min(n, start + cfg.batch_size);
      std::vector<Image> bi;
      std::vector<int> bl;
      for (int i = start; i < stop; ++i) {
        bi.push_back(images[order[i]]);
        bl.push_back(labels[order[i]]);
      }
      FinetuneStepResult r = finetune_step(model, bi, bl, cfg,
                                           derive_key(seed, (static_cast<uint64_t>(epoch) << 16) + static_cast<uint64_t>(start)));
      if (!r.ok) {
        out.message = "epoch " + std::to_string(epoch) + ": " + r.message;
        return out;
      }
      epoch_sum += r.total;
      ++steps;
    }
    out.epoch_losses.push_back(static_cast<float>(epoch_sum / steps));
  }
  out.ok = true;
  return out;
}

// -------------------------------------------------------------------------
// supervised bootstrap

BootstrapResult bootstrap_supervised(const std::vector<Image>& images,
                                     const std::vector<int>& labels,
                                     const BootstrapConfig& cfg, uint64_t seed) {
  if (images.size() != labels.size() || images.empty())
    throw std::invalid_argument("bootstrap_supervised: dataset of " +
                                std::to_string(images.size()) + " images vs " +
                                std::to_string(labels.size()) + " labels");
  int num_classes = 0;
  for (int l : labels) num_classes = std::max(num_classes, l + 1);
  if (num_classes < 2)
    throw std::invalid_argument("bootstrap_supervised: need at least 2 classes");

  LocalizerParams loc = make_localizer(cfg.localizer_input, cfg.landmark_count,
                                       derive_key(seed, 0xb001));
  ViTParams vit = make_vit(cfg.vit, derive_key(seed, 0xb002));

  FinetuneConfig fcfg;
  fcfg.mode = FinetuneMode::trainable_landmark;
  fcfg.base_lr = cfg.lr;
  fcfg.layer_decay = 1.0f;  // uniform: the whole stack is fresh
  fcfg.epochs = cfg.epochs;
  fcfg.warmup_epochs = std::min(cfg.epochs / 4, 5);
  fcfg.batch_size = cfg.batch_size;
  fcfg.s = cfg.s;
  fcfg.m = cfg.m;
  fcfg.weight_decay = cfg.weight_decay;

  FinetuneModel model = make_finetune_model(std::move(loc), std::move(vit), num_classes, fcfg,
                                            derive_key(seed, 0xb003));
  EpochRunResult run = finetune_epochs(model, images, labels, fcfg, derive_key(seed, 0xb004));

  BootstrapResult out;
  out.localizer = std::move(model.localizer);
  out.vit = std::move(model.vit);
  if (!run.ok) {
    out.message = run.message;
    return out;
  }
  out.initial_loss = run.epoch_losses.front();
  out.final_loss = run.epoch_losses.back();
  out.ok = true;
  return out;
}

}  // namespace lafs
