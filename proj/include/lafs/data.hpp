#pragma once

// Synthetic face rendering and dataset plumbing. An identity is a genotype
// (part geometry drawn once from the identity's seed); each sample adds
// intra-class jitter (pose shift, brightness, pixel noise). Rendering is a
// pure function of (spec, identity, sample), so a fixed spec regenerates
// byte-identical files.
//
// On-disk formats, all versioned by a leading header line:
//   manifest TSV: "lafs-manifest\tv1" then "path<TAB>label" per image
//   pair TSV:     "lafs-pairs\tv1" then "ref_a<TAB>ref_b<TAB>{0,1}" per pair

#include <cstdint>
#include <string>
#include <vector>

#include "lafs/eval.hpp"
#include "lafs/geometry.hpp"

namespace lafs {

struct SyntheticFaceSpec {
  int canvas = 112;
  int n_identities = 10;
  int images_per_identity = 5;
  float pose_jitter_px = 3.0f;      // uniform center shift per sample
  float brightness_jitter = 0.10f;  // multiplicative range around 1
  float noise_std = 0.02f;          // additive gaussian pixel noise
  bool rgb = false;
  uint64_t seed = 0;
};

// Pure render; identity picks the genotype, sample picks the jitter.
Image render_face(const SyntheticFaceSpec& spec, int identity, int sample);

struct DatasetManifest {
  std::string root;  // directory paths are relative to
  struct Entry {
    std::string path;
    int label = 0;
  };
  std::vector<Entry> entries;
  int version = 1;
};

// Renders every image under out_dir and writes "manifest.tsv" beside them.
DatasetManifest generate_synthetic(const SyntheticFaceSpec& spec, const std::string& out_dir);

void write_manifest(const DatasetManifest& m, const std::string& path);
// The manifest's root becomes the directory containing path.
DatasetManifest read_manifest(const std::string& path);

Image load_image(const DatasetManifest& m, int index);
std::vector<Image> load_images(const DatasetManifest& m);
std::vector<int> manifest_labels(const DatasetManifest& m);

void write_pairs(const PairList& pl, const std::string& path);
PairList read_pairs(const std::string& path);

// Balanced verification protocol: n_pairs/2 genuine (two images, one label)
// and the rest impostor, deterministic in seed. Indices refer to positions
// in labels. Requires at least two labels and one label with two images.
PairList make_verification_pairs(const std::vector<int>& labels, int n_pairs, uint64_t seed);

}  // namespace lafs
