#include "lafs/localizer.hpp"

#include <cmath>
#include <stdexcept>

#include "lafs/rng.hpp"

namespace lafs {

ParamRefs LocalizerParams::param_refs() {
  ParamRefs refs;
  for (auto& blk : blocks) {
    refs.push_back(&blk.w);
    refs.push_back(&blk.b);
  }
  refs.push_back(&head_w);
  refs.push_back(&head_b);
  return refs;
}

std::vector<NamedTensor> LocalizerParams::named_params() {
  std::vector<NamedTensor> named;
  for (size_t i = 0; i < blocks.size(); ++i) {
    named.push_back({"localizer.conv" + std::to_string(i) + ".w", blocks[i].w});
    named.push_back({"localizer.conv" + std::to_string(i) + ".b", blocks[i].b});
  }
  named.push_back({"localizer.head.w", head_w});
  named.push_back({"localizer.head.b", head_b});
  return named;
}

void LocalizerParams::set_tracking(bool on) {
  for (Tensor* t : param_refs()) t->set_requires_grad(on);
}

static Tensor gaussian_tensor(Rng& rng, std::vector<int> shape, double stddev) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<float>(rng.gaussian() * stddev);
  return t;
}

LocalizerParams make_localizer(int input_size, int landmark_count, uint64_t seed) {
  if (landmark_count < 2)
    throw std::invalid_argument("make_localizer: landmark count must be >= 2 (min-max scaling), got " +
                                std::to_string(landmark_count));
  if (input_size < 8)
    throw std::invalid_argument("make_localizer: input size must be >= 8");
  LocalizerParams p;
  p.input_size = input_size;
  p.landmark_count = landmark_count;
  Rng rng(derive_key(seed, 0x10c));
  const int channels[] = {1, 8, 16, 32, 32};
  int size = input_size;
  int c_in = 1;
  for (int i = 0; i < 4 && size >= 3; ++i) {
    const int c_out = channels[i + 1];
    Rng wr = rng.derived(static_cast<uint64_t>(i));
    ConvBlock blk;
    blk.w = gaussian_tensor(wr, {c_out, c_in, 3, 3}, std::sqrt(2.0 / (c_in * 9)));
    blk.b = Tensor({c_out}, 0.0f);
    p.blocks.push_back(std::move(blk));
    size = (size - 3) / 2 + 1;
    c_in = c_out;
  }
  const int feat = c_in * size * size;
  Rng hr = rng.derived(99);
  p.head_w = gaussian_tensor(hr, {feat, 2 * landmark_count}, std::sqrt(1.0 / feat));
  p.head_b = Tensor({2 * landmark_count}, 0.0f);
  return p;
}

LandmarkSet predict_landmarks(Tape* tape, const Image& img, const LocalizerParams& p) {
  if (img.height != p.input_size || img.width != p.input_size)
    throw std::invalid_argument("predict_landmarks: image " + std::to_string(img.width) + "x" +
                                std::to_string(img.height) + " does not match configured input " +
                                std::to_string(p.input_size));
  Tape* t = p.frozen ? nullptr : tape;
  Tensor x = img.data;
  for (const auto& blk : p.blocks)
    x = relu(t, add_channel_bias(t, conv2d(t, x, blk.w, 2), blk.b));
  Tensor flat = reshape(t, x, {1, static_cast<int>(x.numel())});
  Tensor raw = add_rowvec(t, matmul(t, flat, p.head_w), p.head_b);
  Tensor coords = minmax_normalize_cols(t, reshape(t, raw, {p.landmark_count, 2}));
  return LandmarkSet{coords};
}

LandmarkSet predict_landmarks_any_size(Tape* tape, const Image& img, const LocalizerParams& p) {
  if (img.height == p.input_size && img.width == p.input_size)
    return predict_landmarks(tape, img, p);
  Image resized = crop_resize(img, Rect{0.0, 0.0, 1.0, 1.0}, p.input_size);
  return predict_landmarks(tape, resized, p);
}

void freeze(LocalizerParams& p) {
  p.frozen = true;
  p.set_tracking(false);
}

}  // namespace lafs
