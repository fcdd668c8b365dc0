#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtlk/icsa2m.hpp"
#include "mtlk/runconfig.hpp"
#include "mtlk/sdhybrid.hpp"
#include "mtlk/synthbench.hpp"

namespace mtlk::cli {

// Exit codes: 0 success, 1 usage, 2 validation, 3 numerical failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

int run_cli(int argc, const char* const* argv);

// --- dataset / checkpoint files ---

void save_speaker_dataset(const std::filesystem::path& path, const synth::SpeakerDataset& data,
                          std::uint64_t seed, const std::string& echo);
synth::SpeakerDataset load_speaker_dataset(const std::filesystem::path& path);

void save_identity_world(const std::filesystem::path& path, const synth::IdentityWorld& world,
                         std::uint64_t seed, const std::string& echo);
synth::IdentityWorld load_identity_world(const std::filesystem::path& path);

// --- evaluation helpers (shared with the acceptance suite) ---

struct StyleTrialStats {
    std::size_t wins = 0;
    std::size_t trials = 0;
    double mean_gain_err = 0.0;

    double accuracy() const {
        return trials ? static_cast<double>(wins) / static_cast<double>(trials) : 0.0;
    }
};

// Prompt-conditioned generation scored by the style-recovery oracle: a trial
// wins when the recovered gains sit closer to the prompt speaker than to a
// random other speaker. Trials are paired across cfg_w values via the seed.
StyleTrialStats run_style_trials(const icsa2m::StylizedMotionModel& model,
                                 const synth::SpeakerDataset& data, double cfg_w,
                                 const flow::SolverConfig& solver, std::size_t trials,
                                 std::size_t trial_frames, std::size_t prompt_frames,
                                 std::uint64_t seed);

// Scorer ranking accuracy of generated motion on held-out clip audio.
double generated_sync_accuracy(const icsa2m::StylizedMotionModel& model,
                               const synth::SpeakerDataset& data,
                               const icsa2m::SyncScorer& scorer,
                               const flow::SolverConfig& solver, std::size_t clips,
                               std::size_t frames, std::size_t prompt_frames, std::uint64_t seed);

// --- checkpoint helpers ---

void save_sync_checkpoint(const std::filesystem::path& path, const icsa2m::SyncScorer& scorer,
                          std::uint64_t seed, const std::string& echo);
icsa2m::SyncScorer load_sync_checkpoint(const std::filesystem::path& path);

struct A2mCheckpoint {
    icsa2m::StylizedMotionModel model;
    std::size_t next_step = 0;
    std::uint64_t seed = 0;
    // adam state is applied onto a caller-built optimizer
    std::vector<std::pair<std::string, std::vector<double>>> adam_m, adam_v;
    std::size_t adam_steps = 0;
};

void save_a2m_checkpoint(const std::filesystem::path& path,
                         const icsa2m::StylizedMotionModel& model, const Adam& opt,
                         std::size_t next_step, std::uint64_t seed, const std::string& echo);
A2mCheckpoint load_a2m_checkpoint(const std::filesystem::path& path);

void save_renderer_checkpoint(const std::filesystem::path& path,
                              const sdh::GenericRenderer& renderer, std::uint64_t seed,
                              const std::string& echo);
sdh::GenericRenderer load_renderer_checkpoint(const std::filesystem::path& path);

}  // namespace mtlk::cli
