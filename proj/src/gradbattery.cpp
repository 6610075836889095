#include "lafs/gradbattery.hpp"

#include <algorithm>
#include <functional>

#include "lafs/finetune.hpp"
#include "lafs/geometry.hpp"
#include "lafs/pretrain.hpp"
#include "lafs/rng.hpp"
#include "lafs/tensor.hpp"
#include "lafs/vit.hpp"

namespace lafs {

namespace {

Tensor randn(Rng& rng, std::vector<int> shape, float scale = 1.0f) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = scale * static_cast<float>(rng.gaussian());
  return t;
}

// fixed random readout keeps the scalar sensitive to every output element
Tensor masked_sum(Tape* tape, Tensor x, const Tensor& mask) {
  return sum_all(tape, mul(tape, x, mask));
}

double check_matmul(Rng rng) {
  const int m = 2 + static_cast<int>(rng.uniform_int(3));
  const int k = 2 + static_cast<int>(rng.uniform_int(3));
  const int n = 2 + static_cast<int>(rng.uniform_int(3));
  Tensor a = randn(rng, {m, k});
  Tensor b = randn(rng, {k, n});
  Tensor mask = randn(rng, {m, n});
  // bilinear in each entry: a large step only divides the float32 noise
  return gradcheck(
      [mask](Tape* t, std::vector<Tensor>& in) {
        return masked_sum(t, matmul(t, in[0], in[1]), mask);
      },
      {a, b}, 1e-2);
}

double check_conv2d(Rng rng) {
  const int c_in = 1 + static_cast<int>(rng.uniform_int(2));
  const int c_out = 1 + static_cast<int>(rng.uniform_int(3));
  const int size = 6;
  const int stride = 1 + static_cast<int>(rng.uniform_int(2));
  Tensor x = randn(rng, {c_in, size, size});
  Tensor w = randn(rng, {c_out, c_in, 3, 3}, 0.5f);
  const int out = (size - 3) / stride + 1;
  Tensor mask = randn(rng, {c_out, out, out});
  return gradcheck(
      [mask, stride](Tape* t, std::vector<Tensor>& in) {
        return masked_sum(t, conv2d(t, in[0], in[1], stride), mask);
      },
      {x, w}, 1e-2);
}

double check_softmax(Rng rng) {
  const int n = 3 + static_cast<int>(rng.uniform_int(6));
  const float temp = 0.2f + static_cast<float>(rng.uniform_in(0.0, 1.0));
  Tensor logits = randn(rng, {n});
  Tensor mask = randn(rng, {n});
  return gradcheck(
      [mask, temp](Tape* t, std::vector<Tensor>& in) {
        return masked_sum(t, softmax_t(t, in[0], temp), mask);
      },
      {logits});
}

double check_layer_norm(Rng rng) {
  const int rows = 2 + static_cast<int>(rng.uniform_int(3));
  const int cols = 3 + static_cast<int>(rng.uniform_int(4));
  Tensor x = randn(rng, {rows, cols});
  Tensor gamma = randn(rng, {cols}, 0.5f);
  Tensor beta = randn(rng, {cols}, 0.5f);
  Tensor mask = randn(rng, {rows, cols});
  return gradcheck(
      [mask](Tape* t, std::vector<Tensor>& in) {
        return masked_sum(t, layer_norm(t, in[0], in[1], in[2]), mask);
      },
      {x, gamma, beta});
}

double check_gelu(Rng rng) {
  const int n = 5 + static_cast<int>(rng.uniform_int(8));
  Tensor x = randn(rng, {n});
  Tensor mask = randn(rng, {n});
  return gradcheck(
      [mask](Tape* t, std::vector<Tensor>& in) { return masked_sum(t, gelu(t, in[0]), mask); },
      {x});
}

double check_attention_block(Rng rng) {
  ViTConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.depth = 1;
  cfg.mlp_hidden = 12;
  cfg.r_max = 8;
  cfg.patch = 3;
  ViTParams p = make_vit(cfg, rng.next_u64());
  p.set_tracking(true);
  const int tokens = 3 + static_cast<int>(rng.uniform_int(3));
  Tensor x = randn(rng, {tokens, cfg.dim});
  Tensor mask = randn(rng, {cfg.dim});  // encode reads out the class token
  // tensors share storage with p, so perturbing the inputs reaches the block
  return gradcheck(
      [p, mask](Tape* t, std::vector<Tensor>& in) {
        return masked_sum(t, encode(t, in[0], p), mask);
      },
      {x, p.blocks[0].wq, p.blocks[0].wv, p.blocks[0].w1}, 2e-3);
}

double check_bilinear(Rng rng) {
  const int size = 5;
  Tensor imgdata({1, size, size});
  for (int i = 0; i < size * size; ++i)
    imgdata.data()[i] = static_cast<float>(rng.uniform());
  const int npts = 4;
  Tensor pts({npts, 2});
  // keep points away from integer grid lines where the sampler kinks
  for (int i = 0; i < npts * 2; ++i)
    pts.data()[i] = 0.3f + static_cast<float>(rng.uniform_int(4)) + 0.1f * static_cast<float>(rng.uniform());
  Tensor mask = randn(rng, {npts, 1});
  return gradcheck(
      [mask, size](Tape* t, std::vector<Tensor>& in) {
        Image im;
        im.channels = 1;
        im.height = size;
        im.width = size;
        im.data = in[0];
        return masked_sum(t, bilinear_sample(t, im, in[1]), mask);
      },
      {imgdata, pts});
}

double check_cosface(Rng rng) {
  const int classes = 3 + static_cast<int>(rng.uniform_int(3));
  const int dim = 4 + static_cast<int>(rng.uniform_int(3));
  CosFaceHead head = make_cosface(classes, dim, 8.0f, 0.2f, rng.next_u64());
  head.set_tracking(true);
  Tensor emb = randn(rng, {dim});
  const int label = static_cast<int>(rng.uniform_int(static_cast<uint32_t>(classes)));
  return gradcheck(
      [head, label](Tape* t, std::vector<Tensor>& in) {
        return cosface_loss(t, in[0], label, head);
      },
      {emb, head.w}, 2e-3);
}

double check_landmark_reg(Rng rng) {
  const int r = 3 + static_cast<int>(rng.uniform_int(4));
  Tensor ref = randn(rng, {r, 2}, 0.3f);
  Tensor pred = randn(rng, {r, 2}, 0.3f);
  return gradcheck(
      [ref](Tape* t, std::vector<Tensor>& in) {
        return landmark_reg(t, LandmarkSet{ref}, LandmarkSet{in[0]});
      },
      {pred});
}

double check_distill_student(Rng rng) {
  HeadConfig hc{6, 8, 8, 5};
  DinoHeadParams head = make_head(hc, rng.next_u64());
  head.set_tracking(true);
  std::vector<std::vector<float>> teacher(2, std::vector<float>(5));
  for (auto& row : teacher) {
    double sum = 0.0;
    for (float& v : row) {
      v = static_cast<float>(rng.uniform()) + 0.05f;
      sum += v;
    }
    for (float& v : row) v = static_cast<float>(v / sum);
  }
  Tensor e0 = randn(rng, {6});
  Tensor e1 = randn(rng, {6});
  Tensor e2 = randn(rng, {6});
  return gradcheck(
      [head, teacher](Tape* t, std::vector<Tensor>& in) {
        std::vector<Tensor> logits;
        for (Tensor& e : in) logits.push_back(head_forward(t, e, head));
        return distill_loss(t, teacher, {0, 1}, logits, 0.3f);
      },
      {e0, e1, e2});
}

}  // namespace

std::vector<GradCheckEntry> run_gradient_battery(uint64_t seed, int instances_per_op) {
  const std::vector<std::pair<const char*, std::function<double(Rng)>>> ops = {
      {"matmul", check_matmul},
      {"conv2d", check_conv2d},
      {"softmax_t", check_softmax},
      {"layer_norm", check_layer_norm},
      {"gelu", check_gelu},
      {"attention_block", check_attention_block},
      {"bilinear_sample", check_bilinear},
      {"cosface_loss", check_cosface},
      {"landmark_reg", check_landmark_reg},
      {"distill_student_path", check_distill_student},
  };
  std::vector<GradCheckEntry> report;
  for (size_t op = 0; op < ops.size(); ++op) {
    GradCheckEntry entry{ops[op].first, 0.0};
    for (int i = 0; i < instances_per_op; ++i) {
      Rng rng(derive_key(derive_key(seed, 0x9cad + op), static_cast<uint64_t>(i)));
      entry.max_rel_err = std::max(entry.max_rel_err, ops[op].second(rng));
    }
    report.push_back(std::move(entry));
  }
  return report;
}

}  // namespace lafs
