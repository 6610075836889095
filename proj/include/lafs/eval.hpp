#pragma once

// Verification evaluation: embedding extraction, cosine pair scoring,
// k-fold accuracy with held-out threshold selection, TAR at fixed FAR, and
// few-shot protocol construction. Metric computations are pure and agree
// with exhaustive threshold sweeps by construction.

#include <cstdint>
#include <string>
#include <vector>

#include "lafs/localizer.hpp"
#include "lafs/vit.hpp"

namespace lafs {

// Read-only model snapshot used for embedding extraction.
struct Embedder {
  LocalizerParams localizer;
  ViTParams vit;
  bool grid = false;  // bypass the localizer and consume grid patches
};

// Unit-norm class-token embedding, computed without any tape.
Tensor embed_one(const Embedder& model, const Image& img);
std::vector<Tensor> embed_all(const Embedder& model, const std::vector<Image>& images);

float cosine_score(const Tensor& a, const Tensor& b);

struct PairList {
  struct Pair {
    int a = 0;
    int b = 0;
    bool genuine = false;
  };
  std::vector<Pair> pairs;
};

// Scores kept in pair order so folds can be formed deterministically.
struct ScoredPairs {
  std::vector<float> scores;
  std::vector<uint8_t> genuine;
};

struct ScoreSet {
  std::vector<float> genuine;
  std::vector<float> impostor;
};

ScoredPairs score_pairs(const std::vector<Tensor>& embeddings, const PairList& pairs);
ScoreSet split_scores(const ScoredPairs& sp);

// Fraction of pairs classified correctly when scores >= t predict genuine.
float accuracy_at(const std::vector<float>& scores, const std::vector<uint8_t>& genuine,
                  float threshold);

// Smallest threshold among distinct score values (and one above the
// maximum) maximizing accuracy_at.
float best_threshold(const std::vector<float>& scores, const std::vector<uint8_t>& genuine);

struct KfoldResult {
  float mean = 0.0f;
  float stddev = 0.0f;
  std::vector<float> fold_accuracy;
};

// Contiguous folds in pair order; each fold is scored with the threshold
// chosen on the remaining folds.
KfoldResult kfold_accuracy(const ScoredPairs& sp, int k);

// Smallest candidate threshold whose impostor acceptance fraction is at
// most far; returns the genuine acceptance fraction there. A far below
// 1/|impostor| forces the threshold above every impostor score and sets the
// warning instead of failing.
float tar_at_far(const ScoreSet& s, float far, std::string* warning = nullptr);

struct VerificationReport {
  float kfold_mean = 0.0f;
  float kfold_std = 0.0f;
  std::vector<std::pair<float, float>> tar_at_far;  // (far, tar), ascending far
  int shots = 0;        // -1 encodes "all"
  double label_fraction = 1.0;
  uint64_t seed = 0;
};

struct FewShotSelection {
  std::vector<int> indices;      // into the source dataset, grouped by label
  std::vector<int> labels_kept;  // ascending label ids
};

// Samples ceil(fraction * num_labels) labels, then per label a seeded
// shuffle prefix of min(shots, available) images; shots = -1 keeps all.
// Selections nest: the same seed with fewer shots yields a subset.
FewShotSelection build_few_shot(const std::vector<int>& labels, double label_fraction,
                                int shots, uint64_t seed);

}  // namespace lafs
