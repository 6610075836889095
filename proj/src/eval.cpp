#include "lafs/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "lafs/rng.hpp"

namespace lafs {

// -------------------------------------------------------------------------
// embeddings

Tensor embed_one(const Embedder& model, const Image& img) {
  Tensor emb;
  if (model.grid) {
    Tensor patches = grid_patches(img, model.vit.cfg.patch);
    emb = encode(nullptr, tokenize(nullptr, patches, model.vit), model.vit);
  } else {
    LandmarkSet lm = predict_landmarks_any_size(nullptr, img, model.localizer);
    emb = forward_part_fvit(nullptr, img, lm, model.vit);
  }
  Tensor row = reshape(nullptr, emb, {1, static_cast<int>(emb.numel())});
  return reshape(nullptr, l2_normalize_rows(nullptr, row), {static_cast<int>(emb.numel())});
}

std::vector<Tensor> embed_all(const Embedder& model, const std::vector<Image>& images) {
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (const Image& img : images) out.push_back(embed_one(model, img));
  return out;
}

float cosine_score(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel())
    throw std::invalid_argument("cosine_score: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  double dot = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    dot += static_cast<double>(a.data()[i]) * b.data()[i];
  return static_cast<float>(dot);
}

ScoredPairs score_pairs(const std::vector<Tensor>& embeddings, const PairList& pairs) {
  ScoredPairs out;
  const int n = static_cast<int>(embeddings.size());
  for (const PairList::Pair& p : pairs.pairs) {
    if (p.a < 0 || p.a >= n || p.b < 0 || p.b >= n)
      throw std::invalid_argument("score_pairs: pair (" + std::to_string(p.a) + ", " +
                                  std::to_string(p.b) + ") outside dataset of " +
                                  std::to_string(n));
    if (p.a == p.b)
      throw std::invalid_argument("score_pairs: pair compares image " + std::to_string(p.a) +
                                  " with itself");
    out.scores.push_back(cosine_score(embeddings[p.a], embeddings[p.b]));
    out.genuine.push_back(p.genuine ? 1 : 0);
  }
  return out;
}

ScoreSet split_scores(const ScoredPairs& sp) {
  ScoreSet s;
  for (size_t i = 0; i < sp.scores.size(); ++i)
    (sp.genuine[i] ? s.genuine : s.impostor).push_back(sp.scores[i]);
  return s;
}

// -------------------------------------------------------------------------
// threshold selection

float accuracy_at(const std::vector<float>& scores, const std::vector<uint8_t>& genuine,
                  float threshold) {
  if (scores.empty() || scores.size() != genuine.size())
    throw std::invalid_argument("accuracy_at: " + std::to_string(scores.size()) +
                                " scores vs " + std::to_string(genuine.size()) + " flags");
  int correct = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (predicted == static_cast<bool>(genuine[i])) ++correct;
  }
  return static_cast<float>(correct) / static_cast<float>(scores.size());
}

// Cut positions between consecutive distinct values, plus accept-all and
// reject-all sentinels. These induce every achievable score partition while
// keeping thresholds off the observed values, so a boundary example in a
// held-out fold still lands on the correct side.
std::vector<float> cut_candidates(std::vector<float> values) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<float> cuts;
  cuts.reserve(values.size() + 1);
  cuts.push_back(values.front() - 0.5f);
  for (size_t i = 0; i + 1 < values.size(); ++i)
    cuts.push_back((values[i] + values[i + 1]) * 0.5f);
  cuts.push_back(values.back() + 0.5f);
  return cuts;
}

float best_threshold(const std::vector<float>& scores, const std::vector<uint8_t>& genuine) {
  float best_t = 0.0f;
  float best_acc = -1.0f;
  for (float t : cut_candidates(scores)) {
    const float acc = accuracy_at(scores, genuine, t);
    if (acc > best_acc) {  // ties keep the smaller threshold
      best_acc = acc;
      best_t = t;
    }
  }
  return best_t;
}

KfoldResult kfold_accuracy(const ScoredPairs& sp, int k) {
  const int n = static_cast<int>(sp.scores.size());
  if (k < 2) throw std::invalid_argument("kfold_accuracy: k must be >= 2");
  if (n < k)
    throw std::invalid_argument("kfold_accuracy: " + std::to_string(n) +
                                " pairs cannot fill " + std::to_string(k) + " folds");
  if (sp.genuine.size() != sp.scores.size())
    throw std::invalid_argument("kfold_accuracy: scores and flags differ in length");

  KfoldResult out;
  int start = 0;
  for (int fold = 0; fold < k; ++fold) {
    const int size = n / k + (fold < n % k ? 1 : 0);
    const int stop = start + size;
    std::vector<float> train_scores, test_scores;
    std::vector<uint8_t> train_flags, test_flags;
    for (int i = 0; i < n; ++i) {
      const bool held_out = i >= start && i < stop;
      (held_out ? test_scores : train_scores).push_back(sp.scores[i]);
      (held_out ? test_flags : train_flags).push_back(sp.genuine[i]);
    }
    const float t = best_threshold(train_scores, train_flags);
    out.fold_accuracy.push_back(accuracy_at(test_scores, test_flags, t));
    start = stop;
  }
  double mean = 0.0;
  for (float a : out.fold_accuracy) mean += a;
  mean /= k;
  double var = 0.0;
  for (float a : out.fold_accuracy) var += (a - mean) * (a - mean);
  out.mean = static_cast<float>(mean);
  out.stddev = static_cast<float>(std::sqrt(var / k));
  return out;
}

float tar_at_far(const ScoreSet& s, float far, std::string* warning) {
  if (!(far > 0.0f && far <= 1.0f))
    throw std::invalid_argument("tar_at_far: far must lie in (0, 1]");
  if (s.impostor.empty()) throw std::invalid_argument("tar_at_far: no impostor scores");
  if (s.genuine.empty()) throw std::invalid_argument("tar_at_far: no genuine scores");

  const double n_imp = static_cast<double>(s.impostor.size());
  if (far < 1.0 / n_imp && warning)
    *warning = "far below 1/" + std::to_string(s.impostor.size()) +
               "; threshold sits above every impostor score";

  std::vector<float> all;
  all.reserve(s.genuine.size() + s.impostor.size());
  all.insert(all.end(), s.genuine.begin(), s.genuine.end());
  all.insert(all.end(), s.impostor.begin(), s.impostor.end());

  std::vector<float> imp_sorted(s.impostor);
  std::sort(imp_sorted.begin(), imp_sorted.end());
  auto impostor_fraction_at_least = [&](float t) {
    const auto it = std::lower_bound(imp_sorted.begin(), imp_sorted.end(), t);
    return static_cast<double>(imp_sorted.end() - it) / n_imp;
  };

  // the reject-all sentinel admits zero impostors, so a feasible cut exists
  for (float t : cut_candidates(std::move(all))) {
    if (impostor_fraction_at_least(t) <= static_cast<double>(far)) {
      int hits = 0;
      for (float g : s.genuine)
        if (g >= t) ++hits;
      return static_cast<float>(hits) / static_cast<float>(s.genuine.size());
    }
  }
  return 0.0f;  // unreachable
}

// -------------------------------------------------------------------------
// few-shot protocol

FewShotSelection build_few_shot(const std::vector<int>& labels, double label_fraction,
                                int shots, uint64_t seed) {
  if (labels.empty()) throw std::invalid_argument("build_few_shot: empty dataset");
  if (!(label_fraction > 0.0 && label_fraction <= 1.0))
    throw std::invalid_argument("build_few_shot: label fraction must lie in (0, 1]");
  if (shots < 1 && shots != -1)
    throw std::invalid_argument("build_few_shot: shots must be >= 1, or -1 for all");

  int num_labels = 0;
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("build_few_shot: negative label");
    num_labels = std::max(num_labels, l + 1);
  }
  std::vector<std::vector<int>> by_label(num_labels);
  for (size_t i = 0; i < labels.size(); ++i)
    by_label[labels[i]].push_back(static_cast<int>(i));

  const int keep = static_cast<int>(std::ceil(label_fraction * num_labels));
  Rng label_rng(derive_key(seed, 0xf5));
  std::vector<int> chosen = label_rng.sample_without_replacement(num_labels, keep);
  std::sort(chosen.begin(), chosen.end());

  FewShotSelection out;
  for (int label : chosen) {
    std::vector<int>& pool = by_label[label];
    if (pool.empty()) continue;
    Rng pool_rng(derive_key(seed, 0xf6000 + static_cast<uint64_t>(label)));
    pool_rng.shuffle(pool);
    const int take = shots == -1 ? static_cast<int>(pool.size())
                                 : std::min(shots, static_cast<int>(pool.size()));
    out.labels_kept.push_back(label);
    for (int i = 0; i < take; ++i) out.indices.push_back(pool[i]);
  }
  if (out.indices.empty()) throw std::invalid_argument("build_few_shot: empty selection");
  return out;
}

}  // namespace lafs
