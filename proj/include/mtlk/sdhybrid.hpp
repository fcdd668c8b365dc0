#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mtlk/nn.hpp"
#include "mtlk/synthbench.hpp"

namespace mtlk::sdh {

struct RendererConfig {
    std::size_t image_pixels = synth::kImagePixels;
    std::size_t grid_h = 16, grid_w = 16, grid_c = 8;
    std::size_t enc_hidden = 128;
    std::size_t dec_hidden = 128;
    std::size_t motion_features = 8;

    std::size_t grid_size() const { return grid_h * grid_w * grid_c; }
};

// Learnable latent holding one identity's static appearance.
struct FeatureGrid {
    Tensor values;  // 1 x grid_size
    bool trainable = false;
};

// LoRA adapters over the decoder's linear layers.
struct LoraSet {
    nn::LoraAdapter gate, d1, d2, d3;

    std::vector<Tensor> trainables() const {
        return {gate.down, gate.up, d1.down, d1.up, d2.down, d2.up, d3.down, d3.up};
    }
    void collect(nn::NamedParams& out) const;
};

// Generic conditional image renderer: an encoder from one source image to a
// feature grid, and a decoder from (grid, motion scalar) back to an image.
// Pretrained across many identities; adaptation later touches only an
// inverted grid and LoRA deltas.
class GenericRenderer {
public:
    GenericRenderer() = default;
    GenericRenderer(const RendererConfig& cfg, Rng& rng);

    Tensor encode(const Tensor& images) const;  // B x pixels -> B x grid
    // conds holds one motion scalar per row of grids
    Tensor decode(const Tensor& grids, const std::vector<double>& conds,
                  const LoraSet* loras = nullptr) const;

    GenericRenderer clone() const;
    void freeze();

    const RendererConfig& config() const { return cfg_; }
    nn::NamedParams named_params() const;
    std::vector<Tensor> params() const { return nn::values_of(named_params()); }
    const nn::LinearLayer& decoder_layer(std::size_t i) const;
    LoraSet inject_loras(std::size_t rank, double alpha, Rng& rng) const;

private:
    RendererConfig cfg_;
    nn::LinearLayer e1_, e2_, e3_;          // encoder
    nn::LinearLayer gate_, d1_, d2_, d3_;   // decoder
};

struct PretrainConfig {
    std::size_t steps = 3000;
    std::size_t batch = 4;
    double lr = 1e-3;
    std::size_t hold_out = 4;  // trailing identities excluded from training
    std::uint64_t seed = 0;
};

// Joint encoder/decoder training with per-pixel L1 across identities and
// motion conditions. Requires at least 50 identities.
GenericRenderer pretrain_generic(const synth::IdentityWorld& world, const RendererConfig& cfg,
                                 const PretrainConfig& train);

// Mean per-pixel L1 of reconstructing a clip from its first frame.
double reconstruction_l1(const GenericRenderer& renderer, const synth::IdentityClip& clip);

// Copies the encoder's prediction for the first frame into a trainable grid.
FeatureGrid init_inversion(const GenericRenderer& renderer, const Tensor& first_frame);

// Scalar perceptual-loss hook: (predicted image row, target image row) ->
// scalar tensor. Absent by default; weights follow the adaptation config.
using PerceptualHook = std::function<Tensor(const Tensor& pred, const Tensor& target)>;

struct AdaptConfig {
    bool inversion = true;
    bool lora = true;
    std::size_t iters = 2000;
    double lr = 1e-3;
    std::size_t lora_rank = 4;
    double lora_alpha = 4.0;
    double hold_out_fraction = 0.2;  // trailing frames reserved for eval
    double lambda_lpips = 0.2;
    double lambda_id = 0.1;
    PerceptualHook lpips_hook;  // disabled unless supplied
    PerceptualHook id_hook;
    std::uint64_t seed = 0;
    std::size_t log_interval = 10;
    std::size_t start_step = 0;  // resume point
};

struct AdaptStepLog {
    std::size_t step = 0;
    double loss = 0.0;
    double wall_ms = 0.0;
};

struct AdaptationResult {
    GenericRenderer renderer;  // frozen copy the adaptation ran against
    FeatureGrid grid;
    std::optional<LoraSet> loras;
    std::vector<AdaptStepLog> log;
    std::size_t train_frames = 0;  // clip rows [0, train_frames) were trained on
};

// Adaptation state split out so callers can checkpoint the optimizer and
// resume mid-run.
struct AdaptSession {
    AdaptationResult state;
    std::unique_ptr<Adam> opt;
};

AdaptSession create_adapt_session(const GenericRenderer& renderer,
                                  const synth::IdentityClip& clip, const AdaptConfig& cfg);
// Runs steps [cfg.start_step, cfg.iters) on an existing session.
void run_adaptation(AdaptSession& session, const synth::IdentityClip& clip,
                    const AdaptConfig& cfg);

// Optimizes the inverted grid and/or LoRA matrices against one identity's
// clip; base weights stay untouched.
AdaptationResult sd_hybrid_adapt(const GenericRenderer& renderer, const synth::IdentityClip& clip,
                                 const AdaptConfig& cfg);

Tensor render(const AdaptationResult& result, double motion_cond);

struct EvalMetrics {
    double psnr = 0.0;
    double l1 = 0.0;
};

// PSNR / L1 over the held-out tail of the clip.
EvalMetrics eval_held_out(const AdaptationResult& result, const synth::IdentityClip& clip);
EvalMetrics eval_generic_held_out(const GenericRenderer& renderer,
                                  const synth::IdentityClip& clip, double hold_out_fraction);

struct AblationRow {
    std::string config;  // "full", "no_inversion", "no_lora"
    std::uint64_t seed = 0;
    double psnr = 0.0;
    double l1 = 0.0;
};

struct AblationReport {
    std::vector<AblationRow> rows;
};

// Runs {full, -inversion, -lora} adaptations for every seed on independent
// renderer copies; fan-out is capped by MTLK_THREADS.
AblationReport ablation_eval(const GenericRenderer& renderer, const synth::IdentityClip& clip,
                             const std::vector<std::uint64_t>& seeds, const AdaptConfig& base);

}  // namespace mtlk::sdh
