#pragma once

// Self-distillation engine: projection head, teacher centering and
// sharpening, the full-to-subset landmark distillation loss, EMA teacher
// updates, and the per-batch training step. The teacher branch runs with no
// tape at all, which is stronger than detaching individual tensors.

#include <cstdint>
#include <string>

#include "lafs/augment.hpp"
#include "lafs/localizer.hpp"
#include "lafs/vit.hpp"

namespace lafs {

struct HeadConfig {
  int in_dim = 64;
  int hidden = 256;
  int bottleneck = 256;
  int out_dim = 1024;  // K prototypes
};

// 3-layer MLP, L2-normalized bottleneck, unit-row prototype matrix.
struct DinoHeadParams {
  HeadConfig cfg;
  Tensor w1, b1;  // [d, h]
  Tensor w2, b2;  // [h, h]
  Tensor w3, b3;  // [h, bottleneck]
  Tensor protos;  // [K, bottleneck], rows kept unit-norm between steps

  ParamRefs param_refs();
  std::vector<NamedTensor> named_params(const std::string& prefix);
  void set_tracking(bool on);
};

DinoHeadParams make_head(const HeadConfig& cfg, uint64_t seed);

Tensor head_mlp(Tape* tape, Tensor emb, const DinoHeadParams& p);  // [1, bottleneck]
Tensor head_logits_from_bottleneck(Tape* tape, Tensor z, const DinoHeadParams& p);  // [K]
Tensor head_forward(Tape* tape, Tensor emb, const DinoHeadParams& p);               // [K]

// Restores unit prototype rows after an optimizer step.
void renormalize_prototypes(DinoHeadParams& p);

struct Center {
  Tensor c;            // [K]
  float momentum = 0.9f;
};

// softmax((logits - c) / t_t), computed off-tape by construction.
std::vector<float> teacher_probs(const Tensor& logits, const Center& center, float t_t);

// c <- m * c + (1 - m) * mean(batch logits)
void center_update(Center& center, const std::vector<Tensor>& teacher_logits);

int distill_pair_count(int n_teacher_views, int n_total_views);

// Sum of H(q_t, softmax(student/t_s)) over teacher views t and student views
// s with s != t (matching view indices excluded), divided by the pair count.
Tensor distill_loss(Tape* tape, const std::vector<std::vector<float>>& teacher_probs_per_view,
                    const std::vector<int>& teacher_view_ids,
                    const std::vector<Tensor>& student_logits, float t_s);

enum class TeacherViewMode { landmark, grid, mixed };

struct PretrainConfig {
  ViewConfig views;
  double alpha = 2.0;        // landmark perturbation strength, canvas pixels
  bool shuffle = true;
  int subset_k = 36;
  TeacherViewMode teacher_mode = TeacherViewMode::landmark;
  bool grid_backbone = false;  // baseline: both branches consume grid patches
  float t_t = 0.04f;
  float t_s = 0.1f;
  float center_momentum = 0.9f;
  float ema_l = 0.996f;
  float lr = 5e-4f;
  float weight_decay = 0.04f;
};

struct TeacherStudent {
  ViTParams t_vit, s_vit;
  DinoHeadParams t_head, s_head;
  LocalizerParams localizer;  // frozen during pretraining
  Center center;
  AdamW opt;
  float ema_l = 0.996f;
  float t_t = 0.04f;
  float t_s = 0.1f;
  int64_t step = 0;
};

// Teacher starts as a bit-identical copy of the student.
TeacherStudent make_teacher_student(const ViTConfig& vit_cfg, const HeadConfig& head_cfg,
                                    LocalizerParams localizer, const PretrainConfig& cfg,
                                    uint64_t seed);

// theta_t <- l * theta_t + (1 - l) * theta_s over ViT + head parameters.
void ema_update(TeacherStudent& ts);

struct StepResult {
  bool ok = false;
  float loss = 0.0f;
  int pairs = 0;
  std::string message;
};

// One Algorithm-style step: views, landmark prediction on plain twins,
// student subsets, landmark augmentation on both branches, teacher forward
// off-tape, student forward on-tape, loss, AdamW, EMA, center update.
StepResult lafs_train_step(TeacherStudent& ts, const std::vector<Image>& batch,
                           const PretrainConfig& cfg, uint64_t seed);

// Same engine with a selectable teacher view mode and optional grid backbone.
StepResult dino_train_step(TeacherStudent& ts, const std::vector<Image>& batch,
                           const PretrainConfig& cfg, uint64_t seed);

}  // namespace lafs
