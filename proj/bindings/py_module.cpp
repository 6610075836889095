// Python surface for the pipeline: synthetic rendering, png io,
// checkpoints, embedding extraction, verification metrics, and the
// finite-difference gradient audit. Images cross the boundary as float32
// numpy arrays, [H,W] for grayscale and [C,H,W] otherwise, values in [0,1].

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "lafs/checkpoint.hpp"
#include "lafs/data.hpp"
#include "lafs/eval.hpp"
#include "lafs/gradbattery.hpp"
#include "lafs/png_io.hpp"
#include "lafs/rng.hpp"

namespace py = pybind11;
using namespace lafs;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Image image_from_array(const FloatArray& arr) {
  py::buffer_info info = arr.request();
  std::vector<int> shape;
  if (info.ndim == 2)
    shape = {1, static_cast<int>(info.shape[0]), static_cast<int>(info.shape[1])};
  else if (info.ndim == 3)
    shape = {static_cast<int>(info.shape[0]), static_cast<int>(info.shape[1]),
             static_cast<int>(info.shape[2])};
  else
    throw std::invalid_argument("image array must be [H,W] or [C,H,W], got ndim " +
                                std::to_string(info.ndim));
  Tensor t(std::move(shape));
  std::memcpy(t.data(), info.ptr, sizeof(float) * static_cast<size_t>(t.numel()));
  return make_image(std::move(t));
}

py::array_t<float> array_from_image(const Image& img) {
  std::vector<py::ssize_t> shape;
  if (img.channels == 1)
    shape = {img.height, img.width};
  else
    shape = {img.channels, img.height, img.width};
  py::array_t<float> out(shape);
  std::memcpy(out.mutable_data(), img.data.data(),
              sizeof(float) * static_cast<size_t>(img.data.numel()));
  return out;
}

py::array_t<float> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::memcpy(out.mutable_data(), t.data(), sizeof(float) * static_cast<size_t>(t.numel()));
  return out;
}

Embedder embedder_from_ck(const std::string& path, bool grid) {
  LoadedCheckpoint ck = load_checkpoint(path);
  auto meta_int = [&ck](const char* key) {
    if (!ck.meta.has(key))
      throw std::runtime_error("checkpoint metadata missing '" + std::string(key) + "'");
    return std::stoi(ck.meta.get(key));
  };
  ViTConfig vc;
  vc.dim = meta_int("vit_dim");
  vc.heads = meta_int("vit_heads");
  vc.depth = meta_int("vit_depth");
  vc.mlp_hidden = meta_int("vit_mlp_hidden");
  vc.r_max = meta_int("vit_r_max");
  vc.patch = meta_int("vit_patch");
  vc.channels = meta_int("vit_channels");
  Embedder model;
  model.localizer = make_localizer(meta_int("localizer_input"), meta_int("landmark_count"), 0);
  restore_params(model.localizer.named_params(), ck.params);
  model.vit = make_vit(vc, 0);
  restore_params(model.vit.named_params(), ck.params);
  model.grid = grid || ck.meta.get("mode") == "grid";
  return model;
}

}  // namespace

PYBIND11_MODULE(lafs_core, m) {
  m.doc() = "landmark-based face representation pipeline";

  m.def(
      "render_face",
      [](int identity, int sample, int canvas, bool rgb, double pose_jitter,
         double brightness_jitter, double noise_std, uint64_t seed) {
        SyntheticFaceSpec spec;
        spec.canvas = canvas;
        spec.n_identities = identity + 1;
        spec.images_per_identity = sample + 1;
        spec.rgb = rgb;
        spec.pose_jitter_px = static_cast<float>(pose_jitter);
        spec.brightness_jitter = static_cast<float>(brightness_jitter);
        spec.noise_std = static_cast<float>(noise_std);
        spec.seed = seed;
        return array_from_image(render_face(spec, identity, sample));
      },
      py::arg("identity"), py::arg("sample"), py::arg("canvas") = 112, py::arg("rgb") = false,
      py::arg("pose_jitter") = 3.0, py::arg("brightness_jitter") = 0.1,
      py::arg("noise_std") = 0.02, py::arg("seed") = 0,
      "Render one synthetic face; a pure function of its arguments.");

  m.def(
      "generate_synthetic",
      [](const std::string& out_dir, int ids, int per_id, int canvas, bool rgb, uint64_t seed) {
        SyntheticFaceSpec spec;
        spec.canvas = canvas;
        spec.n_identities = ids;
        spec.images_per_identity = per_id;
        spec.rgb = rgb;
        spec.seed = seed;
        DatasetManifest man = generate_synthetic(spec, out_dir);
        std::vector<std::pair<std::string, int>> entries;
        for (const auto& e : man.entries) entries.emplace_back(e.path, e.label);
        return entries;
      },
      py::arg("out_dir"), py::arg("ids") = 10, py::arg("per_id") = 5, py::arg("canvas") = 112,
      py::arg("rgb") = false, py::arg("seed") = 0,
      "Render a labeled dataset and its manifest; returns (path, label) pairs.");

  m.def(
      "write_png", [](const std::string& path, const FloatArray& arr) {
        write_png(path, image_from_array(arr));
      },
      py::arg("path"), py::arg("image"));

  m.def(
      "read_png", [](const std::string& path) { return array_from_image(read_png(path)); },
      py::arg("path"));

  m.def(
      "load_checkpoint",
      [](const std::string& path) {
        LoadedCheckpoint ck = load_checkpoint(path);
        py::dict params, meta;
        for (const auto& nt : ck.params) params[py::str(nt.name)] = array_from_tensor(nt.tensor);
        for (const auto& kv : ck.meta.items) meta[py::str(kv.first)] = kv.second;
        return py::make_tuple(params, meta);
      },
      py::arg("path"), "Returns (params dict of float32 arrays, metadata dict).");

  m.def(
      "save_checkpoint",
      [](const std::string& path, const py::dict& params, const py::dict& meta) {
        std::vector<NamedTensor> named;
        for (auto item : params) {
          FloatArray arr = item.second.cast<FloatArray>();
          py::buffer_info info = arr.request();
          std::vector<int> shape(info.shape.begin(), info.shape.end());
          Tensor t(std::move(shape));
          std::memcpy(t.data(), info.ptr, sizeof(float) * static_cast<size_t>(t.numel()));
          named.push_back({item.first.cast<std::string>(), std::move(t)});
        }
        CheckpointMeta cm;
        for (auto item : meta)
          cm.set(item.first.cast<std::string>(), item.second.cast<std::string>());
        save_checkpoint(named, cm, path);
      },
      py::arg("path"), py::arg("params"), py::arg("meta") = py::dict());

  m.def(
      "init_checkpoint",
      [](const std::string& path, int localizer_input, int landmarks, int dim, int heads,
         int depth, int mlp_hidden, int patch, int channels, int r_max, uint64_t seed) {
        LocalizerParams loc = make_localizer(localizer_input, landmarks, derive_key(seed, 0xb17d));
        ViTConfig vc;
        vc.dim = dim;
        vc.heads = heads;
        vc.depth = depth;
        vc.mlp_hidden = mlp_hidden;
        vc.patch = patch;
        vc.channels = channels;
        vc.r_max = r_max > 0 ? r_max : landmarks;
        ViTParams vit = make_vit(vc, derive_key(seed, 0xb17e));
        CheckpointMeta meta;
        meta.set("phase", "init");
        meta.set("seed", std::to_string(seed));
        meta.set("localizer_input", std::to_string(loc.input_size));
        meta.set("landmark_count", std::to_string(loc.landmark_count));
        meta.set("vit_dim", std::to_string(vc.dim));
        meta.set("vit_heads", std::to_string(vc.heads));
        meta.set("vit_depth", std::to_string(vc.depth));
        meta.set("vit_mlp_hidden", std::to_string(vc.mlp_hidden));
        meta.set("vit_r_max", std::to_string(vc.r_max));
        meta.set("vit_patch", std::to_string(vc.patch));
        meta.set("vit_channels", std::to_string(vc.channels));
        std::vector<NamedTensor> params = loc.named_params();
        for (auto& nt : vit.named_params()) params.push_back(nt);
        save_checkpoint(params, meta, path);
      },
      py::arg("path"), py::arg("localizer_input") = 112, py::arg("landmarks") = 196,
      py::arg("dim") = 64, py::arg("heads") = 4, py::arg("depth") = 4,
      py::arg("mlp_hidden") = 128, py::arg("patch") = 8, py::arg("channels") = 1,
      py::arg("r_max") = 0, py::arg("seed") = 0,
      "Write a freshly initialized localizer + backbone checkpoint.");

  m.def(
      "embed_images",
      [](const std::string& ckpt, const std::vector<FloatArray>& arrays, bool grid) {
        Embedder model = embedder_from_ck(ckpt, grid);
        std::vector<Image> images;
        images.reserve(arrays.size());
        for (const auto& a : arrays) images.push_back(image_from_array(a));
        std::vector<Tensor> embs = embed_all(model, images);
        const int d = embs.empty() ? 0 : static_cast<int>(embs.front().numel());
        py::array_t<float> out({static_cast<py::ssize_t>(embs.size()),
                                static_cast<py::ssize_t>(d)});
        float* dst = out.mutable_data();
        for (size_t i = 0; i < embs.size(); ++i)
          std::memcpy(dst + i * static_cast<size_t>(d), embs[i].data(),
                      sizeof(float) * static_cast<size_t>(d));
        return out;
      },
      py::arg("ckpt"), py::arg("images"), py::arg("grid") = false,
      "Unit-norm embeddings, one row per image.");

  m.def(
      "kfold_accuracy",
      [](const std::vector<float>& scores, const std::vector<int>& genuine, int k) {
        if (scores.size() != genuine.size())
          throw std::invalid_argument("kfold_accuracy: " + std::to_string(scores.size()) +
                                      " scores vs " + std::to_string(genuine.size()) +
                                      " labels");
        ScoredPairs sp;
        sp.scores = scores;
        for (int g : genuine) sp.genuine.push_back(g != 0 ? 1 : 0);
        KfoldResult r = kfold_accuracy(sp, k);
        return py::make_tuple(r.mean, r.stddev, r.fold_accuracy);
      },
      py::arg("scores"), py::arg("genuine"), py::arg("k") = 10,
      "Returns (mean, stddev, per-fold accuracies).");

  m.def(
      "tar_at_far",
      [](const std::vector<float>& genuine, const std::vector<float>& impostor, double far) {
        ScoreSet s;
        s.genuine = genuine;
        s.impostor = impostor;
        std::string warning;
        const float tar = tar_at_far(s, static_cast<float>(far), &warning);
        return py::make_tuple(tar, warning);
      },
      py::arg("genuine"), py::arg("impostor"), py::arg("far"),
      "Returns (tar, warning); warning is empty when far was attainable.");

  m.def(
      "gradient_battery",
      [](uint64_t seed, int instances) {
        std::vector<std::pair<std::string, double>> out;
        for (const GradCheckEntry& e : run_gradient_battery(seed, instances))
          out.emplace_back(e.op, e.max_rel_err);
        return out;
      },
      py::arg("seed") = 42, py::arg("instances") = 3,
      "Max relative gradient error per op, against central differences.");
}
