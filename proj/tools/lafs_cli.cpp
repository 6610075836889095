// Command-line front end wiring the full pipeline: synthetic data
// generation, supervised bootstrap, self-distillation pretraining,
// supervised finetuning, verification evaluation, and a gradient audit.
// Settings resolve as flag > config file > built-in default; LAFS_SEED
// supplies the seed default when no flag or config entry names one.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lafs/checkpoint.hpp"
#include "lafs/config.hpp"
#include "lafs/data.hpp"
#include "lafs/eval.hpp"
#include "lafs/finetune.hpp"
#include "lafs/gradbattery.hpp"
#include "lafs/metrics.hpp"
#include "lafs/pretrain.hpp"
#include "lafs/rng.hpp"

using namespace lafs;

namespace {

// fills settings from the config file for options absent on the command line
struct Overlay {
  ConfigMap cfg;

  void load(const std::string& path) {
    if (!path.empty()) cfg = parse_config_file(path);
  }
  void apply(const CLI::Option* opt, const char* key, int& v) const {
    if (opt->count() == 0) v = cfg.get_int(key, v);
  }
  void apply(const CLI::Option* opt, const char* key, float& v) const {
    if (opt->count() == 0) v = static_cast<float>(cfg.get_double(key, v));
  }
  void apply(const CLI::Option* opt, const char* key, double& v) const {
    if (opt->count() == 0) v = cfg.get_double(key, v);
  }
  void apply(const CLI::Option* opt, const char* key, bool& v) const {
    if (opt->count() == 0) v = cfg.get_bool(key, v);
  }
  void apply(const CLI::Option* opt, const char* key, uint64_t& v) const {
    if (opt->count() == 0) v = cfg.get_u64(key, v);
  }
  void apply(const CLI::Option* opt, const char* key, std::string& v) const {
    if (opt->count() == 0) v = cfg.get(key, v);
  }
};

struct DataArgs {
  std::string dir;
  DatasetManifest manifest;
  std::vector<Image> images;
  std::vector<int> labels;
};

DataArgs load_dataset(const std::string& dir) {
  DataArgs d;
  d.dir = dir;
  d.manifest = read_manifest(dir + "/manifest.tsv");
  d.images = load_images(d.manifest);
  d.labels = manifest_labels(d.manifest);
  return d;
}

// ---------------------------------------------------------------------
// checkpoint packing: localizer + backbone + reconstruction metadata

void put_model_meta(CheckpointMeta& meta, const LocalizerParams& loc, const ViTConfig& vc) {
  meta.set("localizer_input", std::to_string(loc.input_size));
  meta.set("landmark_count", std::to_string(loc.landmark_count));
  meta.set("vit_dim", std::to_string(vc.dim));
  meta.set("vit_heads", std::to_string(vc.heads));
  meta.set("vit_depth", std::to_string(vc.depth));
  meta.set("vit_mlp_hidden", std::to_string(vc.mlp_hidden));
  meta.set("vit_r_max", std::to_string(vc.r_max));
  meta.set("vit_patch", std::to_string(vc.patch));
  meta.set("vit_channels", std::to_string(vc.channels));
}

int meta_int(const CheckpointMeta& meta, const std::string& key) {
  if (!meta.has(key))
    throw std::runtime_error("checkpoint metadata missing '" + key + "'");
  return std::stoi(meta.get(key));
}

ViTConfig vit_cfg_from_meta(const CheckpointMeta& meta) {
  ViTConfig vc;
  vc.dim = meta_int(meta, "vit_dim");
  vc.heads = meta_int(meta, "vit_heads");
  vc.depth = meta_int(meta, "vit_depth");
  vc.mlp_hidden = meta_int(meta, "vit_mlp_hidden");
  vc.r_max = meta_int(meta, "vit_r_max");
  vc.patch = meta_int(meta, "vit_patch");
  vc.channels = meta_int(meta, "vit_channels");
  return vc;
}

// fresh storage each call, so two loads never alias
LocalizerParams localizer_from_ck(const LoadedCheckpoint& ck) {
  LocalizerParams loc = make_localizer(meta_int(ck.meta, "localizer_input"),
                                       meta_int(ck.meta, "landmark_count"), 0);
  restore_params(loc.named_params(), ck.params);
  return loc;
}

ViTParams vit_from_ck(const LoadedCheckpoint& ck) {
  ViTParams vit = make_vit(vit_cfg_from_meta(ck.meta), 0);
  restore_params(vit.named_params(), ck.params);
  return vit;
}

void save_model_ck(const std::string& path, LocalizerParams& loc, ViTParams& vit,
                   const ViTConfig& vc, CheckpointMeta meta) {
  put_model_meta(meta, loc, vc);
  std::vector<NamedTensor> params = loc.named_params();
  for (auto& nt : vit.named_params()) params.push_back(nt);
  save_checkpoint(params, meta, path);
}

int grid_tokens(int canvas, int patch) {
  return (canvas / patch) * (canvas / patch);
}

// ---------------------------------------------------------------------
// subcommand settings, bound to flags and overlaid with config values

struct CommonArgs {
  std::string config_path;
  std::string metrics_path = "metrics.csv";
  uint64_t seed = 42;
};

void add_common(CLI::App* sub, CommonArgs& a, CLI::Option** seed_opt,
                CLI::Option** metrics_opt) {
  sub->add_option("--config", a.config_path, "key=value settings file; flags win");
  *metrics_opt = sub->add_option("--metrics", a.metrics_path, "metrics csv path (appended)");
  *seed_opt = sub->add_option("--seed", a.seed, "run seed; LAFS_SEED supplies the default");
}

int run_gen_data(const std::string& out_dir, SyntheticFaceSpec spec, int n_pairs,
                 uint64_t pair_seed) {
  DatasetManifest m = generate_synthetic(spec, out_dir);
  std::cout << "wrote " << m.entries.size() << " images for " << spec.n_identities
            << " identities under " << out_dir << "\n";
  if (n_pairs > 0) {
    PairList pl = make_verification_pairs(manifest_labels(m), n_pairs, pair_seed);
    write_pairs(pl, out_dir + "/pairs.tsv");
    std::cout << "wrote " << pl.pairs.size() << " verification pairs to " << out_dir
              << "/pairs.tsv\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"landmark-based face representation pipeline"};
  app.require_subcommand(1);
  int exit_code = 0;

  // ----- gen-data -----
  auto* gen = app.add_subcommand("gen-data", "render a synthetic identity dataset");
  CommonArgs gen_common;
  gen_common.metrics_path.clear();
  SyntheticFaceSpec gen_spec;
  std::string gen_out;
  int gen_pairs = 0;
  CLI::Option *gen_seed_o, *gen_metrics_o;
  gen->add_option("--out", gen_out, "output directory")->required();
  auto* gen_ids_o = gen->add_option("--ids", gen_spec.n_identities, "identity count");
  auto* gen_per_o = gen->add_option("--per-id", gen_spec.images_per_identity, "images per identity");
  auto* gen_canvas_o = gen->add_option("--canvas", gen_spec.canvas, "square image size");
  auto* gen_rgb_o = gen->add_flag("--rgb", gen_spec.rgb, "render 3-channel images");
  auto* gen_pose_o = gen->add_option("--pose-jitter", gen_spec.pose_jitter_px, "center shift, px");
  auto* gen_bright_o =
      gen->add_option("--brightness-jitter", gen_spec.brightness_jitter, "brightness range");
  auto* gen_noise_o = gen->add_option("--noise-std", gen_spec.noise_std, "pixel noise std");
  auto* gen_pairs_o =
      gen->add_option("--pairs", gen_pairs, "also write a balanced verification pair list");
  add_common(gen, gen_common, &gen_seed_o, &gen_metrics_o);
  gen->callback([&]() {
    Overlay ov;
    ov.load(gen_common.config_path);
    ov.apply(gen_ids_o, "ids", gen_spec.n_identities);
    ov.apply(gen_per_o, "per-id", gen_spec.images_per_identity);
    ov.apply(gen_canvas_o, "canvas", gen_spec.canvas);
    ov.apply(gen_rgb_o, "rgb", gen_spec.rgb);
    ov.apply(gen_pose_o, "pose-jitter", gen_spec.pose_jitter_px);
    ov.apply(gen_bright_o, "brightness-jitter", gen_spec.brightness_jitter);
    ov.apply(gen_noise_o, "noise-std", gen_spec.noise_std);
    ov.apply(gen_pairs_o, "pairs", gen_pairs);
    gen_common.seed = seed_from_env(gen_common.seed);
    ov.apply(gen_seed_o, "seed", gen_common.seed);
    gen_spec.seed = gen_common.seed;
    exit_code = run_gen_data(gen_out, gen_spec, gen_pairs, derive_key(gen_common.seed, 0xbea5));
  });

  // ----- bootstrap -----
  auto* boot = app.add_subcommand("bootstrap", "supervised localizer + backbone warmup");
  CommonArgs boot_common;
  std::string boot_data, boot_out;
  BootstrapConfig boot_cfg;
  int boot_r_max = 0;  // 0 means derive from landmarks and grid tokens
  CLI::Option *boot_seed_o, *boot_metrics_o;
  boot->add_option("--data", boot_data, "dataset directory with manifest.tsv")->required();
  boot->add_option("--out", boot_out, "checkpoint to write")->required();
  auto* boot_epochs_o = boot->add_option("--epochs", boot_cfg.epochs, "training epochs");
  auto* boot_batch_o = boot->add_option("--batch", boot_cfg.batch_size, "minibatch size");
  auto* boot_lr_o = boot->add_option("--lr", boot_cfg.lr, "learning rate");
  auto* boot_wd_o = boot->add_option("--weight-decay", boot_cfg.weight_decay, "adamw decay");
  auto* boot_lm_o = boot->add_option("--landmarks", boot_cfg.landmark_count, "landmark count R");
  auto* boot_li_o =
      boot->add_option("--localizer-input", boot_cfg.localizer_input, "localizer input size");
  auto* boot_dim_o = boot->add_option("--dim", boot_cfg.vit.dim, "transformer width");
  auto* boot_heads_o = boot->add_option("--heads", boot_cfg.vit.heads, "attention heads");
  auto* boot_depth_o = boot->add_option("--depth", boot_cfg.vit.depth, "encoder blocks");
  auto* boot_mlp_o = boot->add_option("--mlp-hidden", boot_cfg.vit.mlp_hidden, "mlp hidden width");
  auto* boot_patch_o = boot->add_option("--patch", boot_cfg.vit.patch, "patch size");
  auto* boot_rmax_o = boot->add_option("--r-max", boot_r_max, "positional embedding capacity");
  auto* boot_s_o = boot->add_option("--s", boot_cfg.s, "cosface scale");
  auto* boot_m_o = boot->add_option("--margin", boot_cfg.m, "cosface margin");
  add_common(boot, boot_common, &boot_seed_o, &boot_metrics_o);
  boot->callback([&]() {
    Overlay ov;
    ov.load(boot_common.config_path);
    ov.apply(boot_epochs_o, "epochs", boot_cfg.epochs);
    ov.apply(boot_batch_o, "batch", boot_cfg.batch_size);
    ov.apply(boot_lr_o, "lr", boot_cfg.lr);
    ov.apply(boot_wd_o, "weight-decay", boot_cfg.weight_decay);
    ov.apply(boot_lm_o, "landmarks", boot_cfg.landmark_count);
    ov.apply(boot_li_o, "localizer-input", boot_cfg.localizer_input);
    ov.apply(boot_dim_o, "dim", boot_cfg.vit.dim);
    ov.apply(boot_heads_o, "heads", boot_cfg.vit.heads);
    ov.apply(boot_depth_o, "depth", boot_cfg.vit.depth);
    ov.apply(boot_mlp_o, "mlp-hidden", boot_cfg.vit.mlp_hidden);
    ov.apply(boot_patch_o, "patch", boot_cfg.vit.patch);
    ov.apply(boot_rmax_o, "r-max", boot_r_max);
    ov.apply(boot_s_o, "s", boot_cfg.s);
    ov.apply(boot_m_o, "margin", boot_cfg.m);
    ov.apply(boot_metrics_o, "metrics", boot_common.metrics_path);
    boot_common.seed = seed_from_env(boot_common.seed);
    ov.apply(boot_seed_o, "seed", boot_common.seed);

    DataArgs d = load_dataset(boot_data);
    boot_cfg.vit.channels = d.images.front().channels;
    boot_cfg.vit.r_max =
        boot_r_max > 0 ? boot_r_max
                       : std::max(boot_cfg.landmark_count,
                                  grid_tokens(d.images.front().height, boot_cfg.vit.patch));
    BootstrapResult r = bootstrap_supervised(d.images, d.labels, boot_cfg, boot_common.seed);
    if (!r.ok) {
      std::cerr << "bootstrap failed: " << r.message << "\n";
      exit_code = 1;
      return;
    }
    MetricsWriter mw(boot_common.metrics_path);
    mw.log(0, "bootstrap", "initial_loss", r.initial_loss);
    mw.log(boot_cfg.epochs - 1, "bootstrap", "final_loss", r.final_loss);
    CheckpointMeta meta;
    meta.set("phase", "bootstrap");
    meta.set("seed", std::to_string(boot_common.seed));
    save_model_ck(boot_out, r.localizer, r.vit, boot_cfg.vit, meta);
    std::cout << "bootstrap loss " << r.initial_loss << " -> " << r.final_loss << ", saved "
              << boot_out << "\n";
  });

  // ----- pretrain -----
  auto* pre = app.add_subcommand("pretrain", "self-distillation pretraining");
  CommonArgs pre_common;
  std::string pre_data, pre_out, pre_init, pre_method = "lafs", pre_teacher = "landmark";
  PretrainConfig pre_cfg;
  ViTConfig pre_vit;
  int pre_steps = 1000, pre_batch = 8, pre_protos = 1024, pre_bottleneck = 256, pre_hidden = 256;
  int pre_landmarks = 196, pre_loc_input = 112, pre_r_max = 0, pre_log_every = 50;
  CLI::Option *pre_seed_o, *pre_metrics_o;
  pre->add_option("--data", pre_data, "dataset directory with manifest.tsv")->required();
  pre->add_option("--out", pre_out, "checkpoint to write")->required();
  auto* pre_init_o =
      pre->add_option("--init", pre_init, "bootstrap checkpoint supplying the frozen localizer");
  auto* pre_method_o = pre->add_option("--method", pre_method, "lafs | dino")
                           ->check(CLI::IsMember({"lafs", "dino"}));
  auto* pre_teacher_o =
      pre->add_option("--teacher-views", pre_teacher, "landmark | grid | mixed (dino only)")
          ->check(CLI::IsMember({"landmark", "grid", "mixed"}));
  auto* pre_gridbb_o =
      pre->add_flag("--grid-backbone", pre_cfg.grid_backbone, "grid patches on both branches");
  auto* pre_steps_o = pre->add_option("--steps", pre_steps, "optimizer steps");
  auto* pre_batch_o = pre->add_option("--batch", pre_batch, "images per step");
  auto* pre_alpha_o = pre->add_option("--alpha", pre_cfg.alpha, "landmark perturbation, px");
  auto* pre_subset_o = pre->add_option("--subset", pre_cfg.subset_k, "student landmark subset k");
  auto* pre_shuffle_o =
      pre->add_flag("--shuffle,!--no-shuffle", pre_cfg.shuffle, "landmark order shuffle");
  auto* pre_gsize_o = pre->add_option("--global-size", pre_cfg.views.global_size, "global crop");
  auto* pre_lsize_o = pre->add_option("--local-size", pre_cfg.views.local_size, "local crop");
  auto* pre_nlocal_o = pre->add_option("--n-local", pre_cfg.views.n_local, "local view count");
  auto* pre_protos_o = pre->add_option("--prototypes", pre_protos, "output prototype count K");
  auto* pre_bneck_o = pre->add_option("--bottleneck", pre_bottleneck, "head bottleneck width");
  auto* pre_hidden_o = pre->add_option("--hidden", pre_hidden, "head hidden width");
  auto* pre_tt_o = pre->add_option("--t-t", pre_cfg.t_t, "teacher temperature");
  auto* pre_ts_o = pre->add_option("--t-s", pre_cfg.t_s, "student temperature");
  auto* pre_ema_o = pre->add_option("--ema", pre_cfg.ema_l, "teacher ema momentum");
  auto* pre_cm_o = pre->add_option("--center-momentum", pre_cfg.center_momentum, "center ema");
  auto* pre_lr_o = pre->add_option("--lr", pre_cfg.lr, "learning rate");
  auto* pre_wd_o = pre->add_option("--weight-decay", pre_cfg.weight_decay, "adamw decay");
  auto* pre_lm_o = pre->add_option("--landmarks", pre_landmarks, "landmark count R (no --init)");
  auto* pre_li_o =
      pre->add_option("--localizer-input", pre_loc_input, "localizer input size (no --init)");
  auto* pre_dim_o = pre->add_option("--dim", pre_vit.dim, "transformer width");
  auto* pre_heads_o = pre->add_option("--heads", pre_vit.heads, "attention heads");
  auto* pre_depth_o = pre->add_option("--depth", pre_vit.depth, "encoder blocks");
  auto* pre_mlp_o = pre->add_option("--mlp-hidden", pre_vit.mlp_hidden, "mlp hidden width");
  auto* pre_patch_o = pre->add_option("--patch", pre_vit.patch, "patch size");
  auto* pre_rmax_o = pre->add_option("--r-max", pre_r_max, "positional embedding capacity");
  auto* pre_log_o = pre->add_option("--log-every", pre_log_every, "loss logging cadence");
  add_common(pre, pre_common, &pre_seed_o, &pre_metrics_o);
  pre->callback([&]() {
    Overlay ov;
    ov.load(pre_common.config_path);
    ov.apply(pre_init_o, "init", pre_init);
    ov.apply(pre_method_o, "method", pre_method);
    ov.apply(pre_teacher_o, "teacher-views", pre_teacher);
    ov.apply(pre_gridbb_o, "grid-backbone", pre_cfg.grid_backbone);
    ov.apply(pre_steps_o, "steps", pre_steps);
    ov.apply(pre_batch_o, "batch", pre_batch);
    ov.apply(pre_alpha_o, "alpha", pre_cfg.alpha);
    ov.apply(pre_subset_o, "subset", pre_cfg.subset_k);
    ov.apply(pre_shuffle_o, "shuffle", pre_cfg.shuffle);
    ov.apply(pre_gsize_o, "global-size", pre_cfg.views.global_size);
    ov.apply(pre_lsize_o, "local-size", pre_cfg.views.local_size);
    ov.apply(pre_nlocal_o, "n-local", pre_cfg.views.n_local);
    ov.apply(pre_protos_o, "prototypes", pre_protos);
    ov.apply(pre_bneck_o, "bottleneck", pre_bottleneck);
    ov.apply(pre_hidden_o, "hidden", pre_hidden);
    ov.apply(pre_tt_o, "t-t", pre_cfg.t_t);
    ov.apply(pre_ts_o, "t-s", pre_cfg.t_s);
    ov.apply(pre_ema_o, "ema", pre_cfg.ema_l);
    ov.apply(pre_cm_o, "center-momentum", pre_cfg.center_momentum);
    ov.apply(pre_lr_o, "lr", pre_cfg.lr);
    ov.apply(pre_wd_o, "weight-decay", pre_cfg.weight_decay);
    ov.apply(pre_lm_o, "landmarks", pre_landmarks);
    ov.apply(pre_li_o, "localizer-input", pre_loc_input);
    ov.apply(pre_dim_o, "dim", pre_vit.dim);
    ov.apply(pre_heads_o, "heads", pre_vit.heads);
    ov.apply(pre_depth_o, "depth", pre_vit.depth);
    ov.apply(pre_mlp_o, "mlp-hidden", pre_vit.mlp_hidden);
    ov.apply(pre_patch_o, "patch", pre_vit.patch);
    ov.apply(pre_rmax_o, "r-max", pre_r_max);
    ov.apply(pre_log_o, "log-every", pre_log_every);
    ov.apply(pre_metrics_o, "metrics", pre_common.metrics_path);
    pre_common.seed = seed_from_env(pre_common.seed);
    ov.apply(pre_seed_o, "seed", pre_common.seed);

    if (pre_method == "lafs" && pre_teacher != "landmark") {
      std::cerr << "pretrain: --method lafs distills landmark teacher views; use --method dino "
                   "for --teacher-views "
                << pre_teacher << "\n";
      exit_code = 1;
      return;
    }
    pre_cfg.teacher_mode = pre_teacher == "grid"    ? TeacherViewMode::grid
                           : pre_teacher == "mixed" ? TeacherViewMode::mixed
                                                    : TeacherViewMode::landmark;

    DataArgs d = load_dataset(pre_data);
    if (pre_batch < 1 || pre_batch > static_cast<int>(d.images.size())) {
      std::cerr << "pretrain: batch " << pre_batch << " outside [1, " << d.images.size() << "]\n";
      exit_code = 1;
      return;
    }

    LocalizerParams loc;
    if (!pre_init.empty()) {
      loc = localizer_from_ck(load_checkpoint(pre_init));
    } else {
      loc = make_localizer(pre_loc_input, pre_landmarks, derive_key(pre_common.seed, 0x10ca));
      std::cerr << "pretrain: no --init checkpoint, using a random frozen localizer\n";
    }
    pre_vit.channels = d.images.front().channels;
    pre_vit.r_max = pre_r_max > 0
                        ? pre_r_max
                        : std::max(loc.landmark_count,
                                   grid_tokens(d.images.front().height, pre_vit.patch));
    HeadConfig head_cfg{pre_vit.dim, pre_hidden, pre_bottleneck, pre_protos};
    TeacherStudent ts =
        make_teacher_student(pre_vit, head_cfg, loc, pre_cfg, derive_key(pre_common.seed, 0x90de));

    MetricsWriter mw(pre_common.metrics_path);
    Rng batcher(derive_key(pre_common.seed, 0xba7c));
    const uint64_t step_key = derive_key(pre_common.seed, 0x57e9);
    for (int step = 0; step < pre_steps; ++step) {
      std::vector<int> picks =
          batcher.sample_without_replacement(static_cast<int>(d.images.size()), pre_batch);
      std::vector<Image> batch;
      for (int idx : picks) batch.push_back(d.images[static_cast<size_t>(idx)]);
      StepResult r = pre_method == "lafs"
                         ? lafs_train_step(ts, batch, pre_cfg, derive_key(step_key, step))
                         : dino_train_step(ts, batch, pre_cfg, derive_key(step_key, step));
      if (!r.ok) {
        std::cerr << "pretrain step " << step << ": " << r.message << "\n";
        exit_code = 1;
        return;
      }
      if (step % pre_log_every == 0 || step == pre_steps - 1)
        mw.log(step, "pretrain", "loss", r.loss);
    }

    CheckpointMeta meta;
    meta.set("phase", "pretrain");
    meta.set("method", pre_method);
    meta.set("steps", std::to_string(pre_steps));
    meta.set("seed", std::to_string(pre_common.seed));
    save_model_ck(pre_out, ts.localizer, ts.s_vit, pre_vit, meta);
    std::cout << "pretrained " << pre_steps << " steps, saved " << pre_out << "\n";
  });

  // ----- finetune -----
  auto* fine = app.add_subcommand("finetune", "supervised identity finetuning");
  CommonArgs fine_common;
  std::string fine_data, fine_out, fine_init, fine_mode = "a";
  FinetuneConfig fine_cfg;
  int fine_shots = -1;
  double fine_fraction = 1.0;
  CLI::Option *fine_seed_o, *fine_metrics_o;
  fine->add_option("--data", fine_data, "dataset directory with manifest.tsv")->required();
  fine->add_option("--init", fine_init, "checkpoint holding localizer + backbone")->required();
  fine->add_option("--out", fine_out, "checkpoint to write")->required();
  auto* fine_mode_o =
      fine->add_option("--mode", fine_mode,
                       "a fixed landmarks | b trainable | c soft-label | grid patches")
          ->check(CLI::IsMember({"a", "b", "c", "grid"}));
  auto* fine_beta_o = fine->add_option("--beta", fine_cfg.beta, "soft-label penalty weight");
  auto* fine_shots_o = fine->add_option("--shots", fine_shots, "images per identity, -1 for all");
  auto* fine_frac_o = fine->add_option("--fraction", fine_fraction, "fraction of labels kept");
  auto* fine_epochs_o = fine->add_option("--epochs", fine_cfg.epochs, "training epochs");
  auto* fine_warm_o = fine->add_option("--warmup", fine_cfg.warmup_epochs, "warmup epochs");
  auto* fine_batch_o = fine->add_option("--batch", fine_cfg.batch_size, "minibatch size");
  auto* fine_lr_o = fine->add_option("--lr", fine_cfg.base_lr, "base learning rate");
  auto* fine_ld_o = fine->add_option("--layer-decay", fine_cfg.layer_decay, "layerwise lr decay");
  auto* fine_s_o = fine->add_option("--s", fine_cfg.s, "cosface scale");
  auto* fine_m_o = fine->add_option("--margin", fine_cfg.m, "cosface margin");
  auto* fine_wd_o = fine->add_option("--weight-decay", fine_cfg.weight_decay, "adamw decay");
  add_common(fine, fine_common, &fine_seed_o, &fine_metrics_o);
  fine->callback([&]() {
    Overlay ov;
    ov.load(fine_common.config_path);
    ov.apply(fine_mode_o, "mode", fine_mode);
    ov.apply(fine_beta_o, "beta", fine_cfg.beta);
    ov.apply(fine_shots_o, "shots", fine_shots);
    ov.apply(fine_frac_o, "fraction", fine_fraction);
    ov.apply(fine_epochs_o, "epochs", fine_cfg.epochs);
    ov.apply(fine_warm_o, "warmup", fine_cfg.warmup_epochs);
    ov.apply(fine_batch_o, "batch", fine_cfg.batch_size);
    ov.apply(fine_lr_o, "lr", fine_cfg.base_lr);
    ov.apply(fine_ld_o, "layer-decay", fine_cfg.layer_decay);
    ov.apply(fine_s_o, "s", fine_cfg.s);
    ov.apply(fine_m_o, "margin", fine_cfg.m);
    ov.apply(fine_wd_o, "weight-decay", fine_cfg.weight_decay);
    ov.apply(fine_metrics_o, "metrics", fine_common.metrics_path);
    fine_common.seed = seed_from_env(fine_common.seed);
    ov.apply(fine_seed_o, "seed", fine_common.seed);

    fine_cfg.mode = fine_mode == "a"   ? FinetuneMode::fixed_landmark
                    : fine_mode == "b" ? FinetuneMode::trainable_landmark
                    : fine_mode == "c" ? FinetuneMode::soft_label
                                       : FinetuneMode::landmark_to_grid;

    DataArgs d = load_dataset(fine_data);
    FewShotSelection sel =
        build_few_shot(d.labels, fine_fraction, fine_shots, derive_key(fine_common.seed, 0xf5e1));
    // the classifier needs labels dense in [0, kept), not the source ids
    std::vector<int> remap;
    {
      int next = 0;
      for (int label : sel.labels_kept) {
        if (label >= static_cast<int>(remap.size()))
          remap.resize(static_cast<size_t>(label) + 1, -1);
        remap[static_cast<size_t>(label)] = next++;
      }
    }
    std::vector<Image> images;
    std::vector<int> labels;
    for (int idx : sel.indices) {
      images.push_back(d.images[static_cast<size_t>(idx)]);
      labels.push_back(remap[static_cast<size_t>(d.labels[static_cast<size_t>(idx)])]);
    }

    LoadedCheckpoint ck = load_checkpoint(fine_init);
    LocalizerParams loc = localizer_from_ck(ck);
    ViTParams vit = vit_from_ck(ck);
    const ViTConfig vc = vit_cfg_from_meta(ck.meta);
    std::optional<LocalizerParams> reference;
    if (fine_cfg.mode == FinetuneMode::soft_label) reference = localizer_from_ck(ck);

    FinetuneModel model =
        make_finetune_model(loc, vit, static_cast<int>(sel.labels_kept.size()), fine_cfg,
                            derive_key(fine_common.seed, 0xf17e), std::move(reference));
    EpochRunResult r =
        finetune_epochs(model, images, labels, fine_cfg, derive_key(fine_common.seed, 0xe90c));
    if (!r.ok) {
      std::cerr << "finetune: " << r.message << "\n";
      exit_code = 1;
      return;
    }
    MetricsWriter mw(fine_common.metrics_path);
    for (size_t e = 0; e < r.epoch_losses.size(); ++e)
      mw.log(static_cast<int64_t>(e), "finetune", "loss", r.epoch_losses[e]);

    CheckpointMeta meta;
    meta.set("phase", "finetune");
    meta.set("mode", fine_mode);
    meta.set("classes", std::to_string(sel.labels_kept.size()));
    meta.set("seed", std::to_string(fine_common.seed));
    save_model_ck(fine_out, model.localizer, model.vit, vc, meta);
    std::cout << "finetuned " << images.size() << " images over "
              << sel.labels_kept.size() << " identities, saved " << fine_out << "\n";
  });

  // ----- eval -----
  auto* ev = app.add_subcommand("eval", "verification metrics on a pair list");
  CommonArgs ev_common;
  std::string ev_data, ev_ckpt, ev_pairs;
  std::vector<double> ev_fars{0.01};
  int ev_folds = 10;
  bool ev_grid = false;
  CLI::Option *ev_seed_o, *ev_metrics_o;
  ev->add_option("--data", ev_data, "dataset directory with manifest.tsv")->required();
  ev->add_option("--ckpt", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--pairs", ev_pairs, "pair list tsv")->required();
  auto* ev_far_o = ev->add_option("--far", ev_fars, "false-accept rates for tar (repeatable)");
  auto* ev_folds_o = ev->add_option("--folds", ev_folds, "verification folds");
  auto* ev_grid_o = ev->add_flag("--grid", ev_grid, "grid patches instead of landmarks");
  add_common(ev, ev_common, &ev_seed_o, &ev_metrics_o);
  ev->callback([&]() {
    Overlay ov;
    ov.load(ev_common.config_path);
    ov.apply(ev_folds_o, "folds", ev_folds);
    ov.apply(ev_grid_o, "grid", ev_grid);
    ov.apply(ev_metrics_o, "metrics", ev_common.metrics_path);
    if (ev_far_o->count() == 0 && ov.cfg.has("far")) ev_fars = {ov.cfg.get_double("far", 0.01)};

    DataArgs d = load_dataset(ev_data);
    LoadedCheckpoint ck = load_checkpoint(ev_ckpt);
    Embedder model{localizer_from_ck(ck), vit_from_ck(ck),
                   ev_grid || ck.meta.get("mode") == "grid"};
    PairList pl = read_pairs(ev_pairs);
    ScoredPairs sp = score_pairs(embed_all(model, d.images), pl);
    KfoldResult kf = kfold_accuracy(sp, ev_folds);
    ScoreSet ss = split_scores(sp);

    MetricsWriter mw(ev_common.metrics_path);
    mw.log(0, "eval", "kfold_mean", kf.mean);
    mw.log(0, "eval", "kfold_std", kf.stddev);
    std::cout << "kfold accuracy " << kf.mean << " +- " << kf.stddev << " over " << ev_folds
              << " folds\n";
    for (double far : ev_fars) {
      std::string warning;
      const float tar = tar_at_far(ss, static_cast<float>(far), &warning);
      if (!warning.empty()) std::cerr << "eval: " << warning << "\n";
      char name[48];
      std::snprintf(name, sizeof(name), "tar@far=%g", far);
      mw.log(0, "eval", name, tar);
      std::cout << name << ": " << tar << "\n";
    }
  });

  // ----- gradcheck -----
  auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of every op");
  CommonArgs gc_common;
  int gc_instances = 5;
  double gc_tolerance = 1e-3;
  CLI::Option *gc_seed_o, *gc_metrics_o;
  auto* gc_inst_o = gc->add_option("--instances", gc_instances, "random instances per op");
  auto* gc_tol_o = gc->add_option("--tolerance", gc_tolerance, "max relative error allowed");
  add_common(gc, gc_common, &gc_seed_o, &gc_metrics_o);
  gc->callback([&]() {
    Overlay ov;
    ov.load(gc_common.config_path);
    ov.apply(gc_inst_o, "instances", gc_instances);
    ov.apply(gc_tol_o, "tolerance", gc_tolerance);
    gc_common.seed = seed_from_env(gc_common.seed);
    ov.apply(gc_seed_o, "seed", gc_common.seed);

    bool all_ok = true;
    for (const GradCheckEntry& e : run_gradient_battery(gc_common.seed, gc_instances)) {
      const bool ok = e.max_rel_err < gc_tolerance;
      all_ok = all_ok && ok;
      std::cout << (ok ? "pass  " : "FAIL  ") << e.op << "  max_rel_err " << e.max_rel_err
                << "\n";
    }
    if (!all_ok) exit_code = 1;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
