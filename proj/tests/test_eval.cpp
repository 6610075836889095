#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <vector>

#include "doctest.h"
#include "lafs/eval.hpp"
#include "lafs/rng.hpp"

using namespace lafs;

namespace {

Embedder tiny_embedder(uint64_t seed) {
  Embedder e;
  e.localizer = make_localizer(16, 8, derive_key(seed, 1));
  ViTConfig vc;
  vc.dim = 16;
  vc.heads = 2;
  vc.depth = 1;
  vc.mlp_hidden = 32;
  vc.r_max = 16;
  vc.patch = 4;
  e.vit = make_vit(vc, derive_key(seed, 2));
  return e;
}

Image noise_image(uint64_t seed, int size = 20) {
  Tensor t = Tensor::zeros({1, size, size});
  Rng rng(seed);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<float>(rng.uniform());
  return make_image(t);
}

ScoreSet random_scores(uint64_t seed, int ng, int ni) {
  Rng rng(seed);
  ScoreSet s;
  for (int i = 0; i < ng; ++i) s.genuine.push_back(static_cast<float>(rng.uniform_in(-1, 1)));
  for (int i = 0; i < ni; ++i) s.impostor.push_back(static_cast<float>(rng.uniform_in(-1, 1)));
  return s;
}

// thresholds between adjacent distinct values plus open ends; the arithmetic
// must match the library expression bit for bit so agreement checks stay exact
std::vector<float> oracle_cuts(std::vector<float> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  std::vector<float> cuts = {v.front() - 0.5f};
  for (size_t i = 0; i + 1 < v.size(); ++i) cuts.push_back((v[i] + v[i + 1]) * 0.5f);
  cuts.push_back(v.back() + 0.5f);
  return cuts;
}

// independent exhaustive sweep, O(n^2), used as the agreement oracle
float oracle_tar(const ScoreSet& s, float far) {
  std::vector<float> all;
  all.insert(all.end(), s.genuine.begin(), s.genuine.end());
  all.insert(all.end(), s.impostor.begin(), s.impostor.end());
  for (float t : oracle_cuts(all)) {
    int fa = 0;
    for (float v : s.impostor)
      if (v >= t) ++fa;
    if (static_cast<double>(fa) / s.impostor.size() <= static_cast<double>(far)) {
      int hit = 0;
      for (float v : s.genuine)
        if (v >= t) ++hit;
      return static_cast<float>(hit) / s.genuine.size();
    }
  }
  return -1.0f;  // the top cut always qualifies
}

}  // namespace

TEST_CASE("embeddings are unit-norm, deterministic, and self-similar") {
  Embedder model = tiny_embedder(3);
  std::vector<Image> images = {noise_image(1), noise_image(2), noise_image(3)};
  std::vector<Tensor> embs = embed_all(model, images);
  REQUIRE(embs.size() == 3);
  for (const Tensor& e : embs) {
    double ss = 0.0;
    for (int64_t i = 0; i < e.numel(); ++i)
      ss += static_cast<double>(e.data()[i]) * e.data()[i];
    CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(cosine_score(e, e) == doctest::Approx(1.0).epsilon(1e-6));
  }
  Tensor again = embed_one(model, images[0]);
  CHECK(std::memcmp(again.data(), embs[0].data(), again.numel() * sizeof(float)) == 0);

  Embedder grid = model;
  grid.grid = true;
  Tensor ge = embed_one(grid, noise_image(9, 16));
  double ss = 0.0;
  for (int64_t i = 0; i < ge.numel(); ++i)
    ss += static_cast<double>(ge.data()[i]) * ge.data()[i];
  CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("pair scoring validates references and splits by flag") {
  Embedder model = tiny_embedder(5);
  std::vector<Tensor> embs = embed_all(model, {noise_image(1), noise_image(2)});
  PairList pl;
  pl.pairs.push_back({0, 1, true});
  pl.pairs.push_back({1, 0, false});
  ScoredPairs sp = score_pairs(embs, pl);
  REQUIRE(sp.scores.size() == 2);
  CHECK(sp.scores[0] == sp.scores[1]);  // symmetric score
  ScoreSet s = split_scores(sp);
  CHECK(s.genuine.size() == 1);
  CHECK(s.impostor.size() == 1);

  PairList self;
  self.pairs.push_back({1, 1, true});
  CHECK_THROWS_AS(score_pairs(embs, self), std::invalid_argument);
  PairList oob;
  oob.pairs.push_back({0, 2, false});
  CHECK_THROWS_AS(score_pairs(embs, oob), std::invalid_argument);
}

TEST_CASE("threshold sweep reproduces the 5-of-7 worked example") {
  std::vector<float> scores = {0.9f, 0.5f, 0.3f, 0.6f, 0.4f, 0.2f, 0.1f};
  std::vector<uint8_t> genuine = {1, 1, 1, 0, 0, 0, 0};
  const float t = best_threshold(scores, genuine);
  CHECK(accuracy_at(scores, genuine, t) == doctest::Approx(5.0 / 7).epsilon(1e-6));
  // the region above 0.4 up to 0.5 is equally optimal
  CHECK(accuracy_at(scores, genuine, 0.45f) == doctest::Approx(5.0 / 7).epsilon(1e-6));
  CHECK(accuracy_at(scores, genuine, 0.5f) == doctest::Approx(5.0 / 7).epsilon(1e-6));
}

TEST_CASE("separable scores give perfect accuracy in every fold") {
  ScoredPairs sp;
  Rng rng(11);
  for (int i = 0; i < 40; ++i) {
    const bool genuine = i % 2 == 0;
    sp.scores.push_back(static_cast<float>(genuine ? rng.uniform_in(0.6, 0.9)
                                                   : rng.uniform_in(-0.2, 0.3)));
    sp.genuine.push_back(genuine ? 1 : 0);
  }
  KfoldResult r = kfold_accuracy(sp, 10);
  CHECK(r.mean == 1.0f);
  CHECK(r.stddev == 0.0f);
  for (float a : r.fold_accuracy) CHECK(a == 1.0f);
}

TEST_CASE("random labels score near chance") {
  ScoredPairs sp;
  Rng rng(13);
  for (int i = 0; i < 400; ++i) {
    sp.scores.push_back(static_cast<float>(rng.uniform_in(-1, 1)));
    sp.genuine.push_back(rng.uniform() < 0.5 ? 1 : 0);
  }
  KfoldResult r = kfold_accuracy(sp, 10);
  CHECK(r.mean > 0.35f);
  CHECK(r.mean < 0.65f);
}

TEST_CASE("fold parameters are validated") {
  ScoredPairs sp;
  for (int i = 0; i < 5; ++i) {
    sp.scores.push_back(0.1f * i);
    sp.genuine.push_back(i % 2);
  }
  CHECK_THROWS_AS(kfold_accuracy(sp, 1), std::invalid_argument);
  CHECK_THROWS_AS(kfold_accuracy(sp, 10), std::invalid_argument);
}

TEST_CASE("tar at far reproduces the 2-of-3 worked example") {
  ScoreSet s;
  s.genuine = {0.9f, 0.5f, 0.3f};
  s.impostor = {0.6f, 0.4f, 0.2f, 0.1f};
  CHECK(tar_at_far(s, 0.25f) == doctest::Approx(2.0 / 3).epsilon(1e-6));
  CHECK(tar_at_far(s, 1.0f) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("unreachable far warns and accepts only above every impostor") {
  ScoreSet s;
  s.genuine = {0.9f, 0.5f, 0.3f};
  s.impostor = {0.6f, 0.4f, 0.2f, 0.1f};
  std::string warning;
  const float tar = tar_at_far(s, 0.05f, &warning);
  CHECK_FALSE(warning.empty());
  CHECK(tar == doctest::Approx(1.0 / 3).epsilon(1e-6));  // only 0.9 clears 0.6
}

TEST_CASE("far arguments are validated") {
  ScoreSet s;
  s.genuine = {0.5f};
  s.impostor = {0.1f};
  CHECK_THROWS_AS(tar_at_far(s, 0.0f), std::invalid_argument);
  CHECK_THROWS_AS(tar_at_far(s, 1.5f), std::invalid_argument);
  ScoreSet empty;
  empty.genuine = {0.5f};
  CHECK_THROWS_AS(tar_at_far(empty, 0.5f), std::invalid_argument);
}

TEST_CASE("tar is non-decreasing in far") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    ScoreSet s = random_scores(seed, 60, 80);
    float prev = -1.0f;
    for (float far : {0.01f, 0.05f, 0.1f, 0.25f, 0.5f, 0.75f, 1.0f}) {
      const float tar = tar_at_far(s, far);
      CHECK(tar >= prev);
      prev = tar;
    }
  }
}

TEST_CASE("tar is invariant under strictly monotone score transforms") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    ScoreSet s = random_scores(seed, 40, 50);
    ScoreSet cubed;
    for (float v : s.genuine) cubed.genuine.push_back(v * v * v);
    for (float v : s.impostor) cubed.impostor.push_back(v * v * v);
    for (float far : {0.04f, 0.2f, 0.6f})
      CHECK(tar_at_far(s, far) == tar_at_far(cubed, far));
  }
}

TEST_CASE("tar agrees exactly with the exhaustive oracle") {
  Rng sizes(99);
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const int ng = 5 + static_cast<int>(sizes.uniform_int(295));
    const int ni = 5 + static_cast<int>(sizes.uniform_int(295));
    ScoreSet s = random_scores(derive_key(7, seed), ng, ni);
    const float far = static_cast<float>(sizes.uniform_in(0.005, 1.0));
    CHECK(tar_at_far(s, far) == oracle_tar(s, far));
  }
}

TEST_CASE("kfold agrees with an independently computed sweep on random sets") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_key(21, seed));
    ScoredPairs sp;
    const int n = 30 + static_cast<int>(rng.uniform_int(170));
    for (int i = 0; i < n; ++i) {
      sp.scores.push_back(static_cast<float>(rng.uniform_in(-1, 1)));
      sp.genuine.push_back(rng.uniform() < 0.4 ? 1 : 0);
    }
    KfoldResult r = kfold_accuracy(sp, 5);

    // oracle: same fold layout, naive threshold scan over train scores
    std::vector<float> fold_acc;
    int start = 0;
    for (int fold = 0; fold < 5; ++fold) {
      const int size = n / 5 + (fold < n % 5 ? 1 : 0);
      const int stop = start + size;
      std::vector<float> tr_s, te_s;
      std::vector<uint8_t> tr_g, te_g;
      for (int i = 0; i < n; ++i) {
        const bool held = i >= start && i < stop;
        (held ? te_s : tr_s).push_back(sp.scores[i]);
        (held ? te_g : tr_g).push_back(sp.genuine[i]);
      }
      std::vector<float> cands = oracle_cuts(tr_s);
      float best_t = cands[0];
      float best = -1.0f;
      for (float t : cands) {
        int ok = 0;
        for (size_t i = 0; i < tr_s.size(); ++i)
          if ((tr_s[i] >= t) == static_cast<bool>(tr_g[i])) ++ok;
        const float acc = static_cast<float>(ok) / tr_s.size();
        if (acc > best) {
          best = acc;
          best_t = t;
        }
      }
      int ok = 0;
      for (size_t i = 0; i < te_s.size(); ++i)
        if ((te_s[i] >= best_t) == static_cast<bool>(te_g[i])) ++ok;
      fold_acc.push_back(static_cast<float>(ok) / te_s.size());
      start = stop;
    }
    for (int fold = 0; fold < 5; ++fold) CHECK(r.fold_accuracy[fold] == fold_acc[fold]);
  }
}

TEST_CASE("few-shot selection: identity, cardinality, reproducibility, nesting") {
  std::vector<int> labels;
  Rng rng(31);
  for (int l = 0; l < 200; ++l) {
    const int count = 2 + static_cast<int>(rng.uniform_int(5));
    for (int i = 0; i < count; ++i) labels.push_back(l);
  }

  FewShotSelection all = build_few_shot(labels, 1.0, -1, 5);
  CHECK(all.indices.size() == labels.size());
  CHECK(all.labels_kept.size() == 200);

  FewShotSelection one = build_few_shot(labels, 0.1, 1, 5);
  CHECK(one.labels_kept.size() == 20);
  CHECK(one.indices.size() == 20);
  std::set<int> seen_labels;
  for (int idx : one.indices) seen_labels.insert(labels[idx]);
  CHECK(seen_labels.size() == 20);

  FewShotSelection replay = build_few_shot(labels, 0.1, 1, 5);
  CHECK(replay.indices == one.indices);
  FewShotSelection other_seed = build_few_shot(labels, 0.1, 1, 6);
  CHECK(other_seed.indices != one.indices);

  FewShotSelection two = build_few_shot(labels, 0.1, 2, 5);
  std::set<int> two_set(two.indices.begin(), two.indices.end());
  for (int idx : one.indices) CHECK(two_set.count(idx) == 1);
  CHECK(two.labels_kept == one.labels_kept);
}

TEST_CASE("few-shot parameters are validated") {
  std::vector<int> labels = {0, 0, 1, 1};
  CHECK_THROWS_AS(build_few_shot({}, 1.0, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_few_shot(labels, 0.0, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_few_shot(labels, 1.5, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_few_shot(labels, 1.0, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_few_shot(labels, 1.0, -2, 1), std::invalid_argument);
}
