#include "lafs/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "lafs/png_io.hpp"
#include "lafs/rng.hpp"

namespace lafs {

namespace {

const std::string kManifestHeader = "lafs-manifest\tv1";
const std::string kPairsHeader = "lafs-pairs\tv1";

// axis-aligned soft ellipse, alpha-composited over the pixel underneath
struct Part {
  float cx, cy;  // normalized center
  float rx, ry;  // normalized radii
  float value;
};

void validate(const SyntheticFaceSpec& spec) {
  if (spec.canvas < 16)
    throw std::invalid_argument("synthetic spec: canvas " + std::to_string(spec.canvas) +
                                " below minimum 16");
  if (spec.n_identities < 1 || spec.images_per_identity < 1)
    throw std::invalid_argument("synthetic spec: need at least 1 identity and 1 image, got " +
                                std::to_string(spec.n_identities) + " x " +
                                std::to_string(spec.images_per_identity));
  if (spec.pose_jitter_px < 0 || spec.brightness_jitter < 0 || spec.noise_std < 0)
    throw std::invalid_argument("synthetic spec: jitter parameters must be nonnegative");
}

std::string image_name(int identity, int sample) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "id%05d_s%03d.png", identity, sample);
  return buf;
}

}  // namespace

Image render_face(const SyntheticFaceSpec& spec, int identity, int sample) {
  validate(spec);
  if (identity < 0 || identity >= spec.n_identities)
    throw std::invalid_argument("render_face: identity " + std::to_string(identity) +
                                " outside [0, " + std::to_string(spec.n_identities) + ")");
  if (sample < 0 || sample >= spec.images_per_identity)
    throw std::invalid_argument("render_face: sample " + std::to_string(sample) + " outside [0, " +
                                std::to_string(spec.images_per_identity) + ")");

  const int n = spec.canvas;
  Rng g(derive_key(derive_key(spec.seed, 0xcefa), static_cast<uint64_t>(identity)));

  const float face_cx = 0.50f + static_cast<float>(g.uniform_in(-0.03, 0.03));
  const float face_cy = 0.52f + static_cast<float>(g.uniform_in(-0.03, 0.03));
  const float face_rx = static_cast<float>(g.uniform_in(0.30, 0.38));
  const float face_ry = static_cast<float>(g.uniform_in(0.38, 0.46));
  const float skin = static_cast<float>(g.uniform_in(0.48, 0.85));

  const float eye_dx = static_cast<float>(g.uniform_in(0.10, 0.22));
  const float eye_y = static_cast<float>(g.uniform_in(0.36, 0.44));
  const float eye_rx = static_cast<float>(g.uniform_in(0.035, 0.060));
  const float eye_ry = static_cast<float>(g.uniform_in(0.018, 0.045));
  const float eye_val = static_cast<float>(g.uniform_in(0.05, 0.25));

  const float nose_y = static_cast<float>(g.uniform_in(0.52, 0.60));
  const float nose_rx = static_cast<float>(g.uniform_in(0.020, 0.045));
  const float nose_ry = static_cast<float>(g.uniform_in(0.060, 0.110));
  const float nose_val = skin + static_cast<float>(g.uniform_in(-0.22, -0.08));

  const float mouth_y = static_cast<float>(g.uniform_in(0.68, 0.78));
  const float mouth_rx = static_cast<float>(g.uniform_in(0.080, 0.160));
  const float mouth_ry = static_cast<float>(g.uniform_in(0.015, 0.040));
  const float mouth_val = static_cast<float>(g.uniform_in(0.10, 0.35));

  // per-channel tint keeps RGB output identity-specific but correlated
  float tint[3] = {1.0f, 1.0f, 1.0f};
  if (spec.rgb)
    for (float& t : tint) t = static_cast<float>(g.uniform_in(0.82, 1.0));

  Rng j(derive_key(derive_key(spec.seed, 0x7177),
                   static_cast<uint64_t>(identity) * 1000003ull + static_cast<uint64_t>(sample)));
  const float shift = spec.pose_jitter_px / static_cast<float>(n);
  const float dx = static_cast<float>(j.uniform_in(-shift, shift));
  const float dy = static_cast<float>(j.uniform_in(-shift, shift));
  const float brightness =
      static_cast<float>(j.uniform_in(1.0 - spec.brightness_jitter, 1.0 + spec.brightness_jitter));

  std::vector<Part> parts = {
      {face_cx, face_cy, face_rx, face_ry, skin},
      {face_cx - eye_dx, eye_y, eye_rx, eye_ry, eye_val},
      {face_cx + eye_dx, eye_y, eye_rx, eye_ry, eye_val},
      {face_cx, nose_y, nose_rx, nose_ry, nose_val},
      {face_cx, mouth_y, mouth_rx, mouth_ry, mouth_val},
  };
  const float margin = 2.0f / static_cast<float>(n);
  for (Part& p : parts) {
    p.cx = std::min(1.0f - margin, std::max(margin, p.cx + dx));
    p.cy = std::min(1.0f - margin, std::max(margin, p.cy + dy));
  }

  Tensor gray({1, n, n}, 0.08f);
  float* px = gray.data();
  for (const Part& p : parts)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const float u = (static_cast<float>(x) + 0.5f) / static_cast<float>(n);
        const float v = (static_cast<float>(y) + 0.5f) / static_cast<float>(n);
        const float qx = (u - p.cx) / p.rx;
        const float qy = (v - p.cy) / p.ry;
        const float q = qx * qx + qy * qy;
        const float cov = std::min(1.0f, std::max(0.0f, (1.2f - q) / 0.4f));
        float& dst = px[y * n + x];
        dst = dst * (1.0f - cov) + p.value * cov;
      }

  for (int i = 0; i < n * n; ++i) {
    const float noisy =
        px[i] * brightness + spec.noise_std * static_cast<float>(j.gaussian());
    px[i] = std::min(1.0f, std::max(0.0f, noisy));
  }

  if (!spec.rgb) return make_image(std::move(gray));
  Tensor rgb({3, n, n});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < n * n; ++i) rgb.data()[c * n * n + i] = px[i] * tint[c];
  return make_image(std::move(rgb));
}

DatasetManifest generate_synthetic(const SyntheticFaceSpec& spec, const std::string& out_dir) {
  validate(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec)
    throw std::runtime_error("generate_synthetic: cannot create " + out_dir + ": " + ec.message());

  // identities render independently, so they split across threads freely
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const int workers = static_cast<int>(std::min<unsigned>(hw, spec.n_identities));
  std::vector<std::string> errors(workers);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w]() {
      try {
        for (int id = w; id < spec.n_identities; id += workers)
          for (int s = 0; s < spec.images_per_identity; ++s)
            write_png(out_dir + "/" + image_name(id, s), render_face(spec, id, s));
      } catch (const std::exception& e) {
        errors[w] = e.what();
      }
    });
  for (auto& t : pool) t.join();
  for (const std::string& e : errors)
    if (!e.empty()) throw std::runtime_error("generate_synthetic: " + e);

  DatasetManifest m;
  m.root = out_dir;
  for (int id = 0; id < spec.n_identities; ++id)
    for (int s = 0; s < spec.images_per_identity; ++s) m.entries.push_back({image_name(id, s), id});
  write_manifest(m, out_dir + "/manifest.tsv");
  return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("manifest: " + path + ": cannot open for writing");
  f << kManifestHeader << "\n";
  for (const auto& e : m.entries) f << e.path << "\t" << e.label << "\n";
  if (!f) throw std::runtime_error("manifest: " + path + ": write failed");
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("manifest: " + path + ": cannot open");
  std::string line;
  if (!std::getline(f, line) || line != kManifestHeader)
    throw std::runtime_error("manifest: " + path + ": missing header '" + kManifestHeader + "'");

  DatasetManifest m;
  m.root = std::filesystem::path(path).parent_path().string();
  if (m.root.empty()) m.root = ".";
  std::set<std::string> seen;
  int max_label = -1;
  std::vector<char> label_present;
  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw std::runtime_error("manifest: " + path + ": line " + std::to_string(line_no) +
                               ": expected path<TAB>label");
    const std::string rel = line.substr(0, tab);
    int label = 0;
    try {
      size_t used = 0;
      label = std::stoi(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw std::runtime_error("manifest: " + path + ": line " + std::to_string(line_no) +
                               ": bad label '" + line.substr(tab + 1) + "'");
    }
    if (label < 0)
      throw std::runtime_error("manifest: " + path + ": line " + std::to_string(line_no) +
                               ": negative label");
    if (!seen.insert(rel).second)
      throw std::runtime_error("manifest: " + path + ": duplicate path " + rel);
    if (label > max_label) {
      max_label = label;
      label_present.resize(static_cast<size_t>(max_label) + 1, 0);
    }
    label_present[static_cast<size_t>(label)] = 1;
    m.entries.push_back({rel, label});
  }
  if (m.entries.empty()) throw std::runtime_error("manifest: " + path + ": no entries");
  for (int l = 0; l <= max_label; ++l)
    if (!label_present[static_cast<size_t>(l)])
      throw std::runtime_error("manifest: " + path + ": labels not contiguous, missing " +
                               std::to_string(l));
  return m;
}

Image load_image(const DatasetManifest& m, int index) {
  if (index < 0 || index >= static_cast<int>(m.entries.size()))
    throw std::invalid_argument("load_image: index " + std::to_string(index) + " outside [0, " +
                                std::to_string(m.entries.size()) + ")");
  return read_png(m.root + "/" + m.entries[static_cast<size_t>(index)].path);
}

std::vector<Image> load_images(const DatasetManifest& m) {
  std::vector<Image> out;
  out.reserve(m.entries.size());
  for (int i = 0; i < static_cast<int>(m.entries.size()); ++i) out.push_back(load_image(m, i));
  return out;
}

std::vector<int> manifest_labels(const DatasetManifest& m) {
  std::vector<int> labels;
  labels.reserve(m.entries.size());
  for (const auto& e : m.entries) labels.push_back(e.label);
  return labels;
}

void write_pairs(const PairList& pl, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("pairs: " + path + ": cannot open for writing");
  f << kPairsHeader << "\n";
  for (const auto& p : pl.pairs) f << p.a << "\t" << p.b << "\t" << (p.genuine ? 1 : 0) << "\n";
  if (!f) throw std::runtime_error("pairs: " + path + ": write failed");
}

PairList read_pairs(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("pairs: " + path + ": cannot open");
  std::string line;
  if (!std::getline(f, line) || line != kPairsHeader)
    throw std::runtime_error("pairs: " + path + ": missing header '" + kPairsHeader + "'");

  PairList pl;
  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    int a = 0, b = 0, flag = -1;
    if (!(ss >> a >> b >> flag) || (flag != 0 && flag != 1))
      throw std::runtime_error("pairs: " + path + ": line " + std::to_string(line_no) +
                               ": expected ref_a<TAB>ref_b<TAB>{0,1}");
    if (a < 0 || b < 0)
      throw std::runtime_error("pairs: " + path + ": line " + std::to_string(line_no) +
                               ": negative reference");
    pl.pairs.push_back({a, b, flag == 1});
  }
  return pl;
}

PairList make_verification_pairs(const std::vector<int>& labels, int n_pairs, uint64_t seed) {
  if (n_pairs < 2)
    throw std::invalid_argument("make_verification_pairs: need at least 2 pairs, got " +
                                std::to_string(n_pairs));
  std::vector<std::vector<int>> by_label;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    const int l = labels[static_cast<size_t>(i)];
    if (l < 0) throw std::invalid_argument("make_verification_pairs: negative label");
    if (l >= static_cast<int>(by_label.size())) by_label.resize(static_cast<size_t>(l) + 1);
    by_label[static_cast<size_t>(l)].push_back(i);
  }
  std::vector<int> populated, multi;
  for (int l = 0; l < static_cast<int>(by_label.size()); ++l) {
    if (!by_label[static_cast<size_t>(l)].empty()) populated.push_back(l);
    if (by_label[static_cast<size_t>(l)].size() >= 2) multi.push_back(l);
  }
  if (populated.size() < 2)
    throw std::invalid_argument("make_verification_pairs: need images from at least 2 labels");
  if (multi.empty())
    throw std::invalid_argument(
        "make_verification_pairs: no label has 2 images, genuine pairs impossible");

  Rng r(derive_key(seed, 0x9a12));
  PairList pl;
  for (int i = 0; i < n_pairs; ++i) {
    // genuine and impostor alternate so contiguous folds stay balanced
    if (i % 2 == 0) {
      const auto& members =
          by_label[static_cast<size_t>(multi[r.uniform_int(static_cast<uint32_t>(multi.size()))])];
      std::vector<int> two = r.sample_without_replacement(static_cast<int>(members.size()), 2);
      pl.pairs.push_back({members[static_cast<size_t>(two[0])],
                          members[static_cast<size_t>(two[1])], true});
    } else {
      std::vector<int> two = r.sample_without_replacement(static_cast<int>(populated.size()), 2);
      const auto& ma = by_label[static_cast<size_t>(populated[static_cast<size_t>(two[0])])];
      const auto& mb = by_label[static_cast<size_t>(populated[static_cast<size_t>(two[1])])];
      pl.pairs.push_back({ma[r.uniform_int(static_cast<uint32_t>(ma.size()))],
                          mb[r.uniform_int(static_cast<uint32_t>(mb.size()))], false});
    }
  }
  return pl;
}

}  // namespace lafs
