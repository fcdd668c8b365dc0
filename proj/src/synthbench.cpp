#include "mtlk/synthbench.hpp"

#include <algorithm>
#include <cmath>

namespace mtlk::synth {

namespace {

constexpr std::size_t kSmoothWindow = 4;
constexpr double kTwoPi = 6.283185307179586476925286766559;

// Identity-pattern mixing constants: fixed projections from the 8-dim code
// onto orientations, phases, and motion response of four sinusoidal waves.
struct PatternParams {
    std::array<double, 4> angle, phase, freq, motion_shift, amplitude;
};

PatternParams pattern_params(const SyntheticIdentity& id) {
    PatternParams p;
    Rng rng(0x1d3a57u);  // fixed mixing weights, shared by all identities
    const std::array<double, 4> base_freq = {1.2, 2.0, 2.8, 3.6};
    for (std::size_t k = 0; k < 4; ++k) {
        double a = 0.0, ph = 0.0, ms = 0.0;
        for (std::size_t j = 0; j < 8; ++j) {
            a += rng.uniform(-1.0, 1.0) * id.code[j];
            ph += rng.uniform(-1.0, 1.0) * id.code[j];
            ms += rng.uniform(-1.0, 1.0) * id.code[j];
        }
        p.angle[k] = 0.25 * kTwoPi * (static_cast<double>(k) / 4.0) + 0.8 * a;
        p.phase[k] = 2.4 * ph;
        p.freq[k] = base_freq[k];
        p.motion_shift[k] = 1.7 + 1.15 * ms;  // per-identity dynamic response
        p.amplitude[k] = 0.55 + 0.1 * static_cast<double>(k % 2);
    }
    return p;
}

}  // namespace

const Tensor& articulation_map() {
    static const Tensor map = [] {
        Rng rng(0xa11c0deu);
        std::vector<double> m(kMotionDim * kAudioDim, 0.0);
        for (std::size_t d = 0; d < kMotionDim; ++d) {
            const bool lip = d < kLipDims;
            const std::size_t nonzero = lip ? 3 : 2;
            const double lo = lip ? 1.2 : 0.5;
            const double hi = lip ? 2.2 : 1.1;
            for (std::size_t k = 0; k < nonzero; ++k) {
                std::size_t j = rng.index(kAudioDim);
                while (m[d * kAudioDim + j] != 0.0) j = (j + 1) % kAudioDim;
                const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
                m[d * kAudioDim + j] = sign * rng.uniform(lo, hi);
            }
        }
        return Tensor::from_data({kMotionDim, kAudioDim}, std::move(m));
    }();
    return map;
}

std::vector<double> ema_smooth(const std::vector<double>& signal, double tau) {
    if (tau <= 0.0) throw ValueError("ema_smooth: tau must be positive");
    const double beta = std::exp(-1.0 / tau);
    std::vector<double> out(signal.size());
    double state = 0.0;
    for (std::size_t t = 0; t < signal.size(); ++t) {
        state = beta * state + (1.0 - beta) * signal[t];
        out[t] = state;
    }
    return out;
}

AudioFeatures gen_audio(std::size_t frames, Rng& rng) {
    if (frames == 0) throw ValueError("gen_audio: need at least one frame");
    // sum of kSmoothWindow iid normals has std sqrt(window); normalize back.
    const double norm = 1.0 / std::sqrt(static_cast<double>(kSmoothWindow));
    std::vector<double> out(frames * kAudioDim);
    for (std::size_t c = 0; c < kAudioDim; ++c) {
        std::vector<double> white(frames + kSmoothWindow - 1);
        for (double& w : white) w = rng.normal();
        for (std::size_t t = 0; t < frames; ++t) {
            double acc = 0.0;
            for (std::size_t k = 0; k < kSmoothWindow; ++k) acc += white[t + k];
            out[t * kAudioDim + c] = acc * norm;
        }
    }
    return AudioFeatures{Tensor::from_data({frames, kAudioDim}, std::move(out))};
}

MotionSequence gen_motion(const AudioFeatures& audio, const SpeakerStyle& speaker) {
    const std::size_t frames = audio.length();
    const auto& a = audio.frames.values();
    const auto& map = articulation_map().values();
    std::vector<double> motion(frames * kMotionDim);
    std::vector<double> driven(frames);
    for (std::size_t d = 0; d < kMotionDim; ++d) {
        const double* row = map.data() + d * kAudioDim;
        for (std::size_t t = 0; t < frames; ++t) {
            double acc = 0.0;
            for (std::size_t j = 0; j < kAudioDim; ++j) acc += row[j] * a[t * kAudioDim + j];
            driven[t] = acc;
        }
        const std::vector<double> smooth = ema_smooth(driven, speaker.tau);
        for (std::size_t t = 0; t < frames; ++t) {
            motion[t * kMotionDim + d] = speaker.offset[d] + speaker.gain[d] * smooth[t];
        }
    }
    return MotionSequence{Tensor::from_data({frames, kMotionDim}, std::move(motion))};
}

StyleEstimate recover_style(const AudioFeatures& audio, const MotionSequence& motion) {
    const std::size_t frames = audio.length();
    if (motion.length() != frames) throw ShapeError("recover_style: misaligned pair");
    if (frames < 4 * kAudioDim) throw ValueError("recover_style: sequence too short");

    const auto& a = audio.frames.values();
    const auto& m = motion.frames.values();
    const auto& map = articulation_map().values();

    StyleEstimate best;
    best.residual = std::numeric_limits<double>::infinity();
    std::vector<double> driven(frames);
    for (int tau = 1; tau <= 8; ++tau) {
        StyleEstimate est;
        est.style.tau = static_cast<double>(tau);
        double residual = 0.0;
        bool degenerate = false;
        for (std::size_t d = 0; d < kMotionDim; ++d) {
            const double* row = map.data() + d * kAudioDim;
            for (std::size_t t = 0; t < frames; ++t) {
                double acc = 0.0;
                for (std::size_t j = 0; j < kAudioDim; ++j) acc += row[j] * a[t * kAudioDim + j];
                driven[t] = acc;
            }
            const std::vector<double> s = ema_smooth(driven, est.style.tau);
            // least squares for motion_d ~ offset + gain * s
            double sum_s = 0.0, sum_s2 = 0.0, sum_y = 0.0, sum_sy = 0.0;
            for (std::size_t t = 0; t < frames; ++t) {
                const double y = m[t * kMotionDim + d];
                sum_s += s[t];
                sum_s2 += s[t] * s[t];
                sum_y += y;
                sum_sy += s[t] * y;
            }
            const double n = static_cast<double>(frames);
            const double var_s = sum_s2 / n - (sum_s / n) * (sum_s / n);
            double gain, offset;
            if (var_s < 1e-12) {
                gain = 0.0;
                offset = sum_y / n;
                degenerate = true;
            } else {
                gain = (sum_sy / n - (sum_s / n) * (sum_y / n)) / var_s;
                offset = sum_y / n - gain * (sum_s / n);
            }
            est.style.gain[d] = gain;
            est.style.offset[d] = offset;
            for (std::size_t t = 0; t < frames; ++t) {
                const double r = m[t * kMotionDim + d] - offset - gain * s[t];
                residual += r * r;
            }
        }
        est.residual = residual;
        est.degenerate = degenerate;
        if (residual < best.residual) best = est;
    }
    return best;
}

double gain_distance(const SpeakerStyle& a, const SpeakerStyle& b) {
    double acc = 0.0;
    for (std::size_t d = 0; d < kMotionDim; ++d) {
        const double diff = a.gain[d] - b.gain[d];
        acc += diff * diff;
    }
    return std::sqrt(acc);
}

std::vector<std::size_t> SpeakerDataset::clips_of(std::size_t speaker, bool held_out) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        if (clips[i].speaker == speaker && clips[i].held_out == held_out) out.push_back(i);
    }
    return out;
}

SpeakerDataset gen_speaker_dataset(std::size_t n_speakers, std::size_t clips_per,
                                   std::size_t frames, Rng& rng) {
    if (n_speakers < 2) throw ValueError("gen_speaker_dataset: need at least two speakers");
    if (clips_per == 0 || frames == 0) throw ValueError("gen_speaker_dataset: empty dataset");

    SpeakerDataset data;
    data.clips_per_speaker = clips_per;
    data.frames_per_clip = frames;
    while (data.styles.size() < n_speakers) {
        SpeakerStyle style;
        for (std::size_t d = 0; d < kMotionDim; ++d) {
            style.gain[d] = rng.uniform(0.5, 2.0);
            style.offset[d] = rng.uniform(-0.5, 0.5);
        }
        style.tau = static_cast<double>(rng.integer(1, 8));
        bool distinct = true;
        for (const SpeakerStyle& other : data.styles) {
            if (gain_distance(style, other) <= 0.1) {
                distinct = false;
                break;
            }
        }
        if (distinct) data.styles.push_back(style);
    }
    for (std::size_t s = 0; s < n_speakers; ++s) {
        for (std::size_t c = 0; c < clips_per; ++c) {
            SpeakerClip clip;
            clip.speaker = s;
            clip.audio = gen_audio(frames, rng);
            clip.motion = gen_motion(clip.audio, data.styles[s]);
            clip.held_out = (c + 1 == clips_per);  // last clip per speaker
            data.clips.push_back(std::move(clip));
        }
    }
    return data;
}

Tensor render_identity(const SyntheticIdentity& identity, double motion) {
    if (motion < 0.0 || motion > 1.0) throw ValueError("render_identity: motion out of [0,1]");
    const PatternParams p = pattern_params(identity);
    std::vector<double> img(kImagePixels);
    for (std::size_t y = 0; y < kImageSide; ++y) {
        for (std::size_t x = 0; x < kImageSide; ++x) {
            const double u = static_cast<double>(x) / static_cast<double>(kImageSide - 1);
            const double v = static_cast<double>(y) / static_cast<double>(kImageSide - 1);
            double f = 0.0;
            for (std::size_t k = 0; k < 4; ++k) {
                const double cu = std::cos(p.angle[k]), su = std::sin(p.angle[k]);
                const double proj = cu * u + su * v;
                f += p.amplitude[k] *
                     std::sin(kTwoPi * p.freq[k] * proj + p.phase[k] + p.motion_shift[k] * motion);
            }
            img[y * kImageSide + x] = 0.5 + 0.5 * std::tanh(1.2 * f);
        }
    }
    return Tensor::from_data({kImagePixels}, std::move(img));
}

IdentityWorld gen_identity_world(std::size_t n_identities, std::size_t frames_per, Rng& rng) {
    if (n_identities < 2) throw ValueError("gen_identity_world: need at least two identities");
    if (frames_per == 0) throw ValueError("gen_identity_world: need frames");

    constexpr double kGolden = 0.61803398874989484820;
    IdentityWorld world;
    for (std::size_t i = 0; i < n_identities; ++i) {
        IdentityClip clip;
        // uniform draw from the unit ball
        double norm2 = 0.0;
        for (double& c : clip.identity.code) {
            c = rng.normal();
            norm2 += c * c;
        }
        const double radius = std::pow(rng.uniform(), 1.0 / 8.0);
        const double inv = radius / std::sqrt(std::max(norm2, 1e-12));
        for (double& c : clip.identity.code) c *= inv;

        // low-discrepancy, non-monotone motion coverage of [0,1)
        std::vector<double> flat;
        flat.reserve(frames_per * kImagePixels);
        clip.conds.reserve(frames_per);
        for (std::size_t f = 0; f < frames_per; ++f) {
            const double m = std::fmod(0.5 + static_cast<double>(f) * kGolden, 1.0);
            clip.conds.push_back(m);
            const Tensor frame = render_identity(clip.identity, m);
            flat.insert(flat.end(), frame.values().begin(), frame.values().end());
        }
        clip.frames = Tensor::from_data({frames_per, kImagePixels}, std::move(flat));
        world.clips.push_back(std::move(clip));
    }
    return world;
}

}  // namespace mtlk::synth
