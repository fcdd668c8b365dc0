#pragma once

#include "mtlk/tensor.hpp"

namespace mtlk {

// Time-aligned frame matrices shared by the motion model and the synthetic
// world. Frame counts of paired audio/motion always agree.

struct MotionSequence {
    Tensor frames;  // T x motion_dim

    std::size_t length() const { return frames.defined() ? frames.rows() : 0; }
    std::size_t dim() const { return frames.cols(); }
};

struct AudioFeatures {
    Tensor frames;  // T x audio_dim

    std::size_t length() const { return frames.defined() ? frames.rows() : 0; }
    std::size_t dim() const { return frames.cols(); }
};

}  // namespace mtlk
