#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pan/data.hpp"
#include "pan/losses.hpp"
#include "pan/models.hpp"
#include "pan/rng.hpp"
#include "pan/tape.hpp"

namespace pan {

// Adaptive-moment optimizer with bias correction, one instance per network.
// The fused kernel keeps parameters and moments on the f32 grid after every
// step, so the f32 checkpoint blobs restore training bit-exactly.
class AdamOpt {
public:
    AdamOpt(double lr, double beta1, double beta2, double eps);

    // One update across all params, reading gradients from the matching
    // tape leaves. A non-finite gradient aborts, naming the parameter.
    void step(const Tape& t, const std::vector<NodeId>& leaves,
              const std::vector<Param*>& params);

    int64_t steps() const { return t_; }
    void set_steps(int64_t t) { t_ = t; }

private:
    double lr_, b1_, b2_, eps_;
    int64_t t_ = 0;
};

struct TrainingConfig {
    LossWeights weights; // lambda, beta, w_pos (0 = derive from data), epsilon
    int width = 1;
    double lr_s = 1e-3, lr_ds = 1e-4, lr_dp = 1e-4;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    int epochs = 30;
    int batch_size = 4;
    int ds_steps = 1, s_steps = 1;
    int dp_every = 1; // update the projective discriminator every n-th volume
    uint64_t seed = 1;
    bool use_ds = true, use_attention = true, use_dp = true;
    // Whether the adversarial term may reach S through the attention branch
    // (the bottleneck tap). Off by default: the pressure should land on the
    // prediction, not on S's internal features.
    bool attention_tap_open = false;
    // Saturating min-max (S minimizes -lambda*l_D) is the default; the
    // non-saturating form has S minimize l_bce(D(fake), 1) instead.
    bool nonsaturating = false;
    DsInput ds_input = DsInput::Product;
    DpInput dp_input = DpInput::Pair;
    bool shuffle_slices = true;
    int early_stop_patience = 0; // epochs without test-DSC improvement; 0 disables
    double eval_threshold = 0.5;

    void validate() const;
};

// Stable hash over every config field. Checkpoints embed it; resuming with
// a different config refuses to load.
uint64_t config_fingerprint(const TrainingConfig& cfg);

// One metrics CSV row; epoch is the 1-based ordinal. The loss columns are
// epoch means: bce and hybrid over the segmentor updates, l_ds/l_dp and the
// scores over the respective discriminator updates (0 when disabled).
struct EpochMetrics {
    int epoch = 0;
    double bce = 0.0, l_ds = 0.0, l_dp = 0.0, hybrid = 0.0;
    double ds_real_score = 0.0, ds_fake_score = 0.0;
    double dp_real_score = 0.0, dp_fake_score = 0.0;
    double test_dsc_mean = 0.0;
};

// Positive-class weight (#negative / #positive voxels over the training
// set) clamped to [1, 20], used when the config leaves w_pos at 0.
double derive_w_pos(const std::vector<Sample>& train_set);

// Owns the three networks, their optimizers, and the volume-order RNG.
// Network seeds are derived from cfg.seed with fixed labels, so every
// ablation variant starts from the same segmentor initialization.
class Trainer {
public:
    Trainer(const TrainingConfig& cfg, int in_h, int in_w);

    // One pass over the training set in persistently-shuffled volume order.
    // Per volume: for each slice batch, ds_steps discriminator updates with
    // S frozen, then s_steps segmentor updates with the discriminators
    // frozen; once per dp_every volumes, at the last batch, the projective
    // discriminator is updated on the stacked prediction projection and the
    // final segmentor step of that volume includes the projection term.
    // test_dsc_mean is left 0; train() fills it after evaluation.
    EpochMetrics train_epoch(const std::vector<Sample>& train_set, int epoch);

    Segmentor& segmentor() { return s_; }
    SpatialDiscriminator& spatial_disc() { return ds_; }
    ProjectiveDiscriminator& projective_disc() { return dp_; }
    const TrainingConfig& config() const { return cfg_; }
    double effective_w_pos() const { return w_pos_; }
    void set_effective_w_pos(double w);
    std::array<uint64_t, 4> order_rng_state() const { return order_rng_.state(); }

    // Checkpoint: magic "PANCKPT1", version, config fingerprint, epoch
    // counter, optimizer step counts, RNG state, w_pos, then length-prefixed
    // named f32 blobs (every parameter and its two moments, in order).
    void save_checkpoint(const std::string& path, int epochs_done);
    // Restores everything save_checkpoint wrote; returns epochs_done.
    // A fingerprint mismatch or layout drift is a config error.
    int load_checkpoint(const std::string& path);

private:
    void ds_update(const SliceBatch& batch, EpochMetrics& m, int& n_ds);
    void dp_update(const Sample& sample, const Tensor& proj_image, const Tensor& proj_gt,
                   EpochMetrics& m, int& n_dp);
    void s_update(const SliceBatch& batch, const Sample& sample, bool include_dp,
                  const Tensor& proj_image, const Tensor& proj_gt, EpochMetrics& m,
                  int& n_s);

    TrainingConfig cfg_;
    Segmentor s_;
    SpatialDiscriminator ds_;
    ProjectiveDiscriminator dp_;
    AdamOpt opt_s_, opt_ds_, opt_dp_;
    Rng order_rng_;
    double w_pos_;
};

struct TrainResult {
    std::vector<EpochMetrics> history; // rows produced by this invocation
    std::string checkpoint_path;
    int epochs_done = 0;
    double final_test_dsc_mean = 0.0;
    std::vector<double> final_per_volume_dsc;
};

// Full run over a generated dataset directory (manifest.tsv + volumes).
// Resumes from out_dir/checkpoint.bin when present, appends rows to
// out_dir/metrics.csv, rewrites out_dir/curves.svg, and keeps the latest
// checkpoint in out_dir/checkpoint.bin.
TrainResult train(const TrainingConfig& cfg, const std::string& data_dir,
                  const std::string& out_dir);

// Dataset loading shared with the CLI: reads manifest.tsv from dir and the
// volume file of every entry of the split ("train"/"test").
std::vector<Sample> load_split(const std::string& dir, const std::string& split);

} // namespace pan
