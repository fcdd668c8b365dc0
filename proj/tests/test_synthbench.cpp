#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "mtlk/synthbench.hpp"
#include "testutil.hpp"

using namespace mtlk;
namespace sb = mtlk::synth;

TEST_CASE("gen_audio: per-channel statistics and determinism") {
    Rng rng(1);
    AudioFeatures audio = sb::gen_audio(10000, rng);
    const auto& v = audio.frames.values();
    for (std::size_t c = 0; c < sb::kAudioDim; ++c) {
        double mean = 0.0;
        for (std::size_t t = 0; t < 10000; ++t) mean += v[t * sb::kAudioDim + c];
        mean /= 10000.0;
        CHECK(std::fabs(mean) < 0.05);

        // lag-1 autocorrelation (smoothness)
        double num = 0.0, den = 0.0;
        for (std::size_t t = 0; t + 1 < 10000; ++t) {
            const double a = v[t * sb::kAudioDim + c] - mean;
            const double b = v[(t + 1) * sb::kAudioDim + c] - mean;
            num += a * b;
            den += a * a;
        }
        CHECK(num / den > 0.5);
    }

    Rng rng_a(42), rng_b(42);
    CHECK(sb::gen_audio(64, rng_a).frames.values() == sb::gen_audio(64, rng_b).frames.values());
}

TEST_CASE("gen_motion: zero audio produces the offsets") {
    sb::SpeakerStyle style;
    for (std::size_t d = 0; d < sb::kMotionDim; ++d) {
        style.gain[d] = 1.3;
        style.offset[d] = 0.1 * static_cast<double>(d) - 0.4;
    }
    style.tau = 3.0;
    AudioFeatures silent{Tensor::zeros({50, sb::kAudioDim})};
    MotionSequence motion = sb::gen_motion(silent, style);
    for (std::size_t t = 0; t < 50; ++t) {
        for (std::size_t d = 0; d < sb::kMotionDim; ++d) {
            CHECK(motion.frames.at(t, d) == style.offset[d]);
        }
    }
}

TEST_CASE("gen_motion: doubling the gain doubles motion minus offset exactly") {
    Rng rng(2);
    AudioFeatures audio = sb::gen_audio(128, rng);
    sb::SpeakerStyle a;
    sb::SpeakerStyle b;
    for (std::size_t d = 0; d < sb::kMotionDim; ++d) {
        a.gain[d] = 0.5 + 0.05 * static_cast<double>(d);
        a.offset[d] = 0.2;
        b.gain[d] = 2.0 * a.gain[d];
        b.offset[d] = 0.2;
    }
    a.tau = 4.0;
    b.tau = 4.0;
    MotionSequence ma = sb::gen_motion(audio, a);
    MotionSequence mb = sb::gen_motion(audio, b);
    for (std::size_t t = 0; t < 128; ++t) {
        for (std::size_t d = 0; d < sb::kMotionDim; ++d) {
            // exact up to the rounding of the offset add/subtract
            CHECK(mb.frames.at(t, d) - 0.2 ==
                  doctest::Approx(2.0 * (ma.frames.at(t, d) - 0.2)).epsilon(1e-13));
        }
    }
}

TEST_CASE("recover_style round-trips noiseless motion to 1e-6") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        AudioFeatures audio = sb::gen_audio(256, rng);
        sb::SpeakerStyle style;
        for (std::size_t d = 0; d < sb::kMotionDim; ++d) {
            style.gain[d] = rng.uniform(0.5, 2.0);
            style.offset[d] = rng.uniform(-0.5, 0.5);
        }
        style.tau = static_cast<double>(rng.integer(1, 8));
        MotionSequence motion = sb::gen_motion(audio, style);
        sb::StyleEstimate est = sb::recover_style(audio, motion);

        CHECK(est.style.tau == style.tau);
        double num = 0.0, den = 0.0, off = 0.0;
        for (std::size_t d = 0; d < sb::kMotionDim; ++d) {
            num += (est.style.gain[d] - style.gain[d]) * (est.style.gain[d] - style.gain[d]);
            den += style.gain[d] * style.gain[d];
            off = std::max(off, std::fabs(est.style.offset[d] - style.offset[d]));
        }
        CHECK(std::sqrt(num / den) < 1e-6);
        CHECK(off < 1e-6);
        CHECK_FALSE(est.degenerate);
    }
}

TEST_CASE("recover_style under gaussian noise keeps gain error below 5%") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        AudioFeatures audio = sb::gen_audio(512, rng);
        sb::SpeakerStyle style;
        for (std::size_t d = 0; d < sb::kMotionDim; ++d) {
            style.gain[d] = rng.uniform(0.5, 2.0);
            style.offset[d] = rng.uniform(-0.5, 0.5);
        }
        style.tau = static_cast<double>(rng.integer(1, 8));
        MotionSequence motion = sb::gen_motion(audio, style);
        auto noisy = motion.frames.values();
        for (double& v : noisy) v += 0.05 * rng.normal();
        MotionSequence noisy_motion{Tensor::from_data(motion.frames.shape(), noisy)};
        sb::StyleEstimate est = sb::recover_style(audio, noisy_motion);
        double num = 0.0, den = 0.0;
        for (std::size_t d = 0; d < sb::kMotionDim; ++d) {
            num += (est.style.gain[d] - style.gain[d]) * (est.style.gain[d] - style.gain[d]);
            den += style.gain[d] * style.gain[d];
        }
        CHECK(std::sqrt(num / den) < 0.05);
    }
}

TEST_CASE("recover_style flags constant motion as degenerate in gain") {
    AudioFeatures silent{Tensor::zeros({128, sb::kAudioDim})};
    std::vector<double> constant(128 * sb::kMotionDim, 0.37);
    MotionSequence motion{Tensor::from_data({128, sb::kMotionDim}, constant)};
    sb::StyleEstimate est = sb::recover_style(silent, motion);
    CHECK(est.degenerate);
    for (std::size_t d = 0; d < sb::kMotionDim; ++d) {
        CHECK(est.style.gain[d] == 0.0);
        CHECK(est.style.offset[d] == doctest::Approx(0.37));
    }
}

TEST_CASE("recover_style rejects too-short sequences") {
    AudioFeatures a{Tensor::zeros({8, sb::kAudioDim})};
    MotionSequence m{Tensor::zeros({8, sb::kMotionDim})};
    CHECK_THROWS_AS(sb::recover_style(a, m), ValueError);
}

TEST_CASE("speaker dataset: distinct styles, split, determinism") {
    Rng rng(5);
    sb::SpeakerDataset data = sb::gen_speaker_dataset(8, 3, 64, rng);
    CHECK(data.styles.size() == 8);
    CHECK(data.clips.size() == 24);
    for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t j = i + 1; j < 8; ++j) {
            CHECK(sb::gain_distance(data.styles[i], data.styles[j]) > 0.1);
        }
        CHECK(data.clips_of(i, false).size() == 2);
        CHECK(data.clips_of(i, true).size() == 1);
    }

    Rng rng_b(5);
    sb::SpeakerDataset again = sb::gen_speaker_dataset(8, 3, 64, rng_b);
    CHECK(again.clips[7].motion.frames.values() == data.clips[7].motion.frames.values());

    CHECK_THROWS_AS(sb::gen_speaker_dataset(1, 3, 64, rng), ValueError);
}

TEST_CASE("identity renders: range, determinism, deformation, distinctness") {
    Rng rng(6);
    sb::IdentityWorld world = sb::gen_identity_world(4, 10, rng);
    CHECK(world.clips.size() == 4);
    CHECK(world.clips[0].frames.rows() == 10);

    const sb::SyntheticIdentity& id = world.clips[0].identity;
    Tensor at0 = sb::render_identity(id, 0.0);
    Tensor at0_again = sb::render_identity(id, 0.0);
    CHECK(at0.values() == at0_again.values());
    Tensor at1 = sb::render_identity(id, 1.0);

    std::size_t moved = 0;
    for (std::size_t p = 0; p < sb::kImagePixels; ++p) {
        const double v = at0.values()[p];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        if (std::fabs(at1.values()[p] - v) > 0.1) ++moved;
    }
    CHECK(moved >= sb::kImagePixels / 20);  // at least 5% of pixels deform visibly

    // distinct identities differ on average
    for (std::size_t i = 1; i < 4; ++i) {
        double l1 = 0.0;
        Tensor other = sb::render_identity(world.clips[i].identity, 0.0);
        for (std::size_t p = 0; p < sb::kImagePixels; ++p) {
            l1 += std::fabs(other.values()[p] - at0.values()[p]);
        }
        CHECK(l1 / sb::kImagePixels > 0.05);
    }

    CHECK_THROWS_AS(sb::render_identity(id, 1.5), ValueError);
}
