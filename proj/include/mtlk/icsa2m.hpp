#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "mtlk/flow.hpp"
#include "mtlk/nn.hpp"
#include "mtlk/sequence.hpp"
#include "mtlk/synthbench.hpp"

namespace mtlk::icsa2m {

// Masked segments of a motion track, [start, end) frame ranges.
struct MaskSpec {
    std::vector<std::pair<std::size_t, std::size_t>> segments;

    std::vector<std::uint8_t> frame_flags(std::size_t frames) const;
    std::size_t masked_count() const;
};

// 1-3 disjoint segments whose total fraction is uniform in [0.3, 0.7].
MaskSpec sample_mask(std::size_t frames, Rng& rng);

// Reference audio-motion pair prepended along time as the style prompt.
// present == false means no prompt: nothing is prepended and the presence
// flag channel stays zero.
struct StylePrompt {
    AudioFeatures audio;
    MotionSequence motion;
    bool present = true;

    std::size_t length() const { return present ? audio.length() : 0; }
};

struct ModelConfig {
    std::size_t motion_dim = synth::kMotionDim;
    std::size_t audio_dim = synth::kAudioDim;
    std::size_t max_frames = 352;
    nn::TransformerConfig transformer;

    // [audio | context motion | mask flag | x_t | prompt presence]
    std::size_t in_channels() const { return audio_dim + 2 * motion_dim + 2; }
};

// Raw per-frame channel matrix fed to the velocity network. The time value
// rides alongside; the network injects it as an additive embedding after the
// input projection, so the channels stay bit-exact recoverable.
struct AssembledInput {
    Tensor channels;  // (P+T) x in_channels
    double t = 0.0;
    std::size_t prompt_frames = 0;
    std::size_t target_frames = 0;
};

AssembledInput assemble_input(const AudioFeatures& audio, const MotionSequence& context,
                              const Tensor& x_t, const std::vector<std::uint8_t>& mask,
                              double t, const StylePrompt* style, const ModelConfig& cfg);

// Single-step denoised estimate along the straight path: x_t + (1-t) v.
Tensor estimate_x1(const Tensor& x_t, double t, const Tensor& v);

class StylizedMotionModel {
public:
    StylizedMotionModel() = default;
    StylizedMotionModel(const ModelConfig& cfg, Rng& rng);

    Tensor velocity_full(const AssembledInput& input) const;  // (P+T) x motion_dim

    const ModelConfig& config() const { return cfg_; }
    nn::NamedParams named_params() const { return net_.named_params(); }
    std::vector<Tensor> params() const { return net_.params(); }

private:
    ModelConfig cfg_;
    nn::VelocityModel net_;
};

// --- synchronization scorer ---

struct SyncScorerConfig {
    std::size_t window = 16;
    std::size_t stride = 8;
    std::size_t hidden = 64;
    std::size_t min_shift = 10;
};

// Small MLP scoring how well an audio window lines up with a motion window.
// Frozen after its own training; the combined objective backpropagates
// through it into the motion estimate, never into its weights.
class SyncScorer {
public:
    SyncScorer() = default;
    SyncScorer(const SyncScorerConfig& cfg, std::size_t audio_dim, std::size_t motion_dim,
               Rng& rng);

    // rows of flattened [audio window | motion window] -> scores (rows x 1)
    Tensor score_rows(const Tensor& rows) const;
    double score_pair(const Tensor& audio_win, const Tensor& motion_win) const;

    void freeze();
    bool frozen() const { return frozen_; }

    const SyncScorerConfig& config() const { return cfg_; }
    std::size_t row_width() const { return (audio_dim_ + motion_dim_) * cfg_.window; }
    std::size_t audio_dim() const { return audio_dim_; }
    std::size_t motion_dim() const { return motion_dim_; }
    nn::NamedParams named_params() const;
    std::vector<Tensor> params() const { return nn::values_of(named_params()); }

private:
    SyncScorerConfig cfg_;
    std::size_t audio_dim_ = 0, motion_dim_ = 0;
    nn::LinearLayer l1_, l2_, l3_;
    bool frozen_ = false;
};

struct SyncTrainConfig {
    std::size_t steps = 1200;
    std::size_t batch = 16;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

// Contrastive training on aligned vs time-shifted windows from the training
// clips; the scorer is frozen on return.
SyncScorer train_sync_scorer(const synth::SpeakerDataset& data, const SyncScorerConfig& scorer_cfg,
                             const SyncTrainConfig& cfg);

// Fraction of trials where the aligned window outranks a shifted one.
double sync_ranking_accuracy(const SyncScorer& scorer,
                             const std::vector<std::pair<AudioFeatures, MotionSequence>>& pairs,
                             std::size_t trials, std::uint64_t seed);

// --- combined objective ---

struct TrainExample {
    AudioFeatures audio;    // target region
    MotionSequence motion;  // target region ground truth
    MaskSpec mask;
    StylePrompt style;  // present == false when the prompt was dropped
    double t = 0.0;
    Tensor x0;  // (P+T) x motion_dim noise draw
};

struct LossParts {
    Tensor total;
    double cfm = 0.0;
    double sync = 0.0;
};

// Masked-frame flow-matching loss plus lambda * sync penalty on the denoised
// estimate. Requires a frozen scorer whenever lambda > 0.
LossParts icsa2m_loss(const StylizedMotionModel& model, const TrainExample& example,
                      const SyncScorer* scorer, double lambda_sync);

// Per-target-frame contributions to the masked loss; zero outside the mask.
std::vector<double> per_frame_cfm(const StylizedMotionModel& model, const TrainExample& example);

struct TrainConfig {
    std::size_t steps = 6000;
    double lr = 1e-3;
    double lambda_sync = 0.05;
    double p_drop = 0.2;
    std::size_t prompt_frames = 64;
    std::size_t min_target = 48;
    std::size_t max_target = 224;
    std::uint64_t seed = 0;
    std::size_t log_interval = 10;
    std::size_t start_step = 0;  // resume point
};

struct StepLog {
    std::size_t step = 0;
    double total = 0.0;
    double cfm = 0.0;
    double sync = 0.0;
    double wall_ms = 0.0;
};

// One masked-infilling training run. Each step derives its randomness from
// (seed, step), so runs are resumable and reproducible. The optimizer is
// owned by the caller so its state can be checkpointed.
std::vector<StepLog> train_icsa2m(StylizedMotionModel& model, Adam& opt,
                                  const synth::SpeakerDataset& data, const SyncScorer* scorer,
                                  const TrainConfig& cfg);

// Style-prompted guided sampling; returns only the target-region motion.
MotionSequence infer_stylized(const StylizedMotionModel& model, const AudioFeatures& driving,
                              const StylePrompt& reference, double cfg_w,
                              const flow::SolverConfig& solver, Rng& rng);

// Audio-only sampling with a zero style prompt.
MotionSequence infer_unstylized(const StylizedMotionModel& model, const AudioFeatures& driving,
                                const flow::SolverConfig& solver, Rng& rng);

}  // namespace mtlk::icsa2m
