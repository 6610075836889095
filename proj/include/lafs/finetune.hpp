#pragma once

// Supervised adaptation: margin classifier, landmark regularization toward a
// fixed reference localizer, the four finetune modes, layer-wise learning
// rate decay, and the supervised bootstrap that produces the localizer in
// the first place.

#include <cstdint>
#include <optional>
#include <string>

#include "lafs/localizer.hpp"
#include "lafs/vit.hpp"

namespace lafs {

// Class weights for s * (cos theta - margin-on-target) logits. Rows and the
// input embedding are L2-normalized inside the loss.
struct CosFaceHead {
  Tensor w;  // [num_classes, d]
  float s = 16.0f;
  float m = 0.2f;

  ParamRefs param_refs();
  std::vector<NamedTensor> named_params(const std::string& prefix);
  void set_tracking(bool on);
};

CosFaceHead make_cosface(int num_classes, int dim, float s, float m, uint64_t seed);

// s * cos theta_j with the margin subtracted from the target row only;
// label -1 applies no margin anywhere.
Tensor cosface_logits(Tape* tape, Tensor emb, const CosFaceHead& head, int label,
                      std::string* warning = nullptr);

Tensor cosface_loss(Tape* tape, Tensor emb, int label, const CosFaceHead& head,
                    std::string* warning = nullptr);

// Mean per-landmark euclidean distance; reference receives no gradient.
Tensor landmark_reg(Tape* tape, const LandmarkSet& reference, const LandmarkSet& predicted);

// Mean pairwise distance between landmarks, a degeneracy diagnostic.
float landmark_spread(const LandmarkSet& lm);

enum class FinetuneMode { fixed_landmark, trainable_landmark, soft_label, landmark_to_grid };

struct FinetuneConfig {
  FinetuneMode mode = FinetuneMode::fixed_landmark;
  float beta = 0.1f;
  float base_lr = 1e-4f;
  float layer_decay = 0.58f;
  int epochs = 10;
  int warmup_epochs = 5;
  int batch_size = 8;
  float s = 16.0f;
  float m = 0.2f;
  float weight_decay = 0.05f;
};

struct FinetuneModel {
  FinetuneMode mode = FinetuneMode::fixed_landmark;
  LocalizerParams localizer;
  ViTParams vit;
  CosFaceHead head;
  std::optional<LocalizerParams> reference;  // fixed, soft_label mode only
  AdamW opt;
  int64_t step = 0;
};

// Wires tracking and freezing for the chosen mode. soft_label requires a
// reference localizer and rejects its absence.
FinetuneModel make_finetune_model(LocalizerParams localizer, ViTParams vit, int num_classes,
                                  const FinetuneConfig& cfg, uint64_t seed,
                                  std::optional<LocalizerParams> reference = std::nullopt);

// lr = base * decay^(total_depth - depth_index): the head sees base_lr, the
// earliest layers the smallest value.
float layerwise_lr(float base_lr, float decay, int depth_index, int total_depth);

// Linear warmup to base_lr, then cosine decay to zero over the remainder.
float scheduled_lr(float base_lr, int epoch, int total_epochs, int warmup_epochs);

struct FinetuneStepResult {
  bool ok = false;
  float total = 0.0f;
  float id = 0.0f;
  float reg = 0.0f;
  std::string message;
};

FinetuneStepResult finetune_step(FinetuneModel& model, const std::vector<Image>& images,
                                 const std::vector<int>& labels, const FinetuneConfig& cfg,
                                 uint64_t seed);

// Full schedule: warmup + cosine, shuffled minibatches; returns per-epoch
// mean total losses. Stops early and reports when a step aborts.
struct EpochRunResult {
  bool ok = false;
  std::vector<float> epoch_losses;
  std::string message;
};

EpochRunResult finetune_epochs(FinetuneModel& model, const std::vector<Image>& images,
                               const std::vector<int>& labels, const FinetuneConfig& cfg,
                               uint64_t seed);

// Joint supervised training of localizer + backbone + classifier from
// scratch; the resulting localizer is what the pretraining stage freezes.
struct BootstrapConfig {
  int localizer_input = 112;
  int landmark_count = 196;
  ViTConfig vit;
  float lr = 1e-3f;
  float weight_decay = 0.01f;
  int epochs = 20;
  int batch_size = 8;
  float s = 16.0f;
  float m = 0.2f;
};

struct BootstrapResult {
  bool ok = false;
  LocalizerParams localizer;
  ViTParams vit;
  float initial_loss = 0.0f;
  float final_loss = 0.0f;
  std::string message;
};

BootstrapResult bootstrap_supervised(const std::vector<Image>& images,
                                     const std::vector<int>& labels,
                                     const BootstrapConfig& cfg, uint64_t seed);

}  // namespace lafs
