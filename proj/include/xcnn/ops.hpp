#pragma once

#include "xcnn/tape.hpp"

namespace xcnn {

/// 2-D convolution (cross-correlation) with zero padding.
/// input [N,C,H,W], kernel [F,C,kH,kW], bias [F] -> [N,F,H',W'] with
/// H' = (H + 2*padding - kH)/stride + 1. 1x1 kernels with stride 1 and no
/// padding take a direct channel-mix path; everything else goes through im2col.
template <typename Scalar>
Var<Scalar> conv2d(Tape<Scalar>& tape, const Var<Scalar>& input, const Var<Scalar>& kernel,
                   const Var<Scalar>& bias, Index stride = 1, Index padding = 0);

/// Non-overlapping or strided max pooling without padding. Backward routes to
/// the first (row-major) maximal element of each window.
template <typename Scalar>
Var<Scalar> maxpool2d(Tape<Scalar>& tape, const Var<Scalar>& input, Index window, Index stride);

/// input [N,D] x weights [D,K] + bias [K].
template <typename Scalar>
Var<Scalar> dense(Tape<Scalar>& tape, const Var<Scalar>& input, const Var<Scalar>& weights,
                  const Var<Scalar>& bias);

/// [N,...] -> [N, prod(...)], row-major.
template <typename Scalar>
Var<Scalar> flatten(Tape<Scalar>& tape, const Var<Scalar>& input);

template <typename Scalar>
Var<Scalar> reshape(Tape<Scalar>& tape, const Var<Scalar>& input, Shape shape);

template <typename Scalar>
Var<Scalar> add(Tape<Scalar>& tape, const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> mul(Tape<Scalar>& tape, const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> scale(Tape<Scalar>& tape, const Var<Scalar>& a, Scalar factor);

/// Sum of all elements -> shape [1].
template <typename Scalar>
Var<Scalar> sum(Tape<Scalar>& tape, const Var<Scalar>& a);

/// Sum of squared elements -> shape [1].
template <typename Scalar>
Var<Scalar> sum_squares(Tape<Scalar>& tape, const Var<Scalar>& a);

/// Channels [begin, begin+count) of an [N,C,...] tensor.
template <typename Scalar>
Var<Scalar> slice_channels(Tape<Scalar>& tape, const Var<Scalar>& input, Index begin, Index count);

/// Mean over batch and spatial positions of one channel of [N,C,H,W] (or [N,C]) -> [1].
template <typename Scalar>
Var<Scalar> channel_mean(Tape<Scalar>& tape, const Var<Scalar>& input, Index channel);

}  // namespace xcnn
