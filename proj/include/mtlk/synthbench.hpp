#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mtlk/sequence.hpp"
#include "mtlk/tensor.hpp"

namespace mtlk::synth {

inline constexpr std::size_t kMotionDim = 16;
inline constexpr std::size_t kAudioDim = 8;
// Leading motion dims are articulation-heavy ("lips"); the rest respond
// weakly to audio and are dominated by per-speaker gain/offset.
inline constexpr std::size_t kLipDims = 4;
inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;

// Per-speaker style: per-dim gain and offset plus a temporal smoothing
// constant, on top of a fixed articulation map shared by every speaker.
struct SpeakerStyle {
    std::array<double, kMotionDim> gain{};
    std::array<double, kMotionDim> offset{};
    double tau = 1.0;  // EMA time constant in frames, integer-valued in [1, 8]
};

// The global motion-dim x audio-dim articulation map. Fixed and known to the
// style-recovery oracle.
const Tensor& articulation_map();

// Exponential moving average with time constant tau frames, zero initial
// state, unit DC gain.
std::vector<double> ema_smooth(const std::vector<double>& signal, double tau);

// Band-limited noise: moving-average smoothed white noise, zero mean and unit
// variance per channel, adjacent-frame autocorrelation about 0.75.
AudioFeatures gen_audio(std::size_t frames, Rng& rng);

// The ground-truth law: motion_d[t] = offset_d + gain_d * ema(map_d . a, tau).
MotionSequence gen_motion(const AudioFeatures& audio, const SpeakerStyle& speaker);

struct StyleEstimate {
    SpeakerStyle style;
    double residual = 0.0;
    bool degenerate = false;  // rank-deficient fit (e.g. constant regressor)
};

// Least-squares recovery of (gain, offset) per dim under the known
// articulation map, with tau grid-searched over {1..8}.
StyleEstimate recover_style(const AudioFeatures& audio, const MotionSequence& motion);

double gain_distance(const SpeakerStyle& a, const SpeakerStyle& b);

struct SpeakerClip {
    std::size_t speaker = 0;
    AudioFeatures audio;
    MotionSequence motion;
    bool held_out = false;
};

struct SpeakerDataset {
    std::vector<SpeakerStyle> styles;
    std::vector<SpeakerClip> clips;
    std::size_t clips_per_speaker = 0;
    std::size_t frames_per_clip = 0;

    std::vector<std::size_t> clips_of(std::size_t speaker, bool held_out) const;
};

// n_speakers distinct styles (pairwise gain distance > 0.1 by rejection),
// clips_per clips each; the last clip of every speaker is held out.
SpeakerDataset gen_speaker_dataset(std::size_t n_speakers, std::size_t clips_per,
                                   std::size_t frames, Rng& rng);

// --- identity image world ---

struct SyntheticIdentity {
    std::array<double, 8> code{};  // drawn from the unit ball
};

// 32x32 grayscale pattern for an identity at a motion scalar in [0,1].
// Values lie in (0,1); the pattern deforms smoothly with the scalar.
Tensor render_identity(const SyntheticIdentity& identity, double motion);

struct IdentityClip {
    SyntheticIdentity identity;
    Tensor frames;               // F x 1024
    std::vector<double> conds;   // F motion scalars covering [0,1)
};

struct IdentityWorld {
    std::vector<IdentityClip> clips;
};

IdentityWorld gen_identity_world(std::size_t n_identities, std::size_t frames_per, Rng& rng);

}  // namespace mtlk::synth
