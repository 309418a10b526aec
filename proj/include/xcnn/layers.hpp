#pragma once

#include "xcnn/random.hpp"
#include "xcnn/tape.hpp"

#include <span>
#include <vector>

namespace xcnn {

enum class Mode { train, infer };

template <typename Scalar>
Var<Scalar> relu(Tape<Scalar>& tape, const Var<Scalar>& x);

/// k-way maxout over contiguous channel groups: output channel c is the max of
/// input channels k*c .. k*c+k-1. Works on [N,kC,H,W] and [N,kC].
template <typename Scalar>
Var<Scalar> maxout(Tape<Scalar>& tape, const Var<Scalar>& x, Index pieces);

/// Running statistics owned by one batch-norm layer.
template <typename Scalar>
struct BatchNormState {
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;
  Scalar momentum = Scalar(0.99);
  Scalar eps = Scalar(1e-5);

  static BatchNormState fresh(Index channels) {
    return {Tensor<Scalar>({channels}), Tensor<Scalar>::constant({channels}, Scalar(1))};
  }
};

/// Per-channel normalization over N (and H, W). Train mode uses batch
/// statistics and updates `state`; infer mode uses the running statistics.
template <typename Scalar>
Var<Scalar> batchnorm(Tape<Scalar>& tape, const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                      Mode mode, BatchNormState<Scalar>& state);

/// Keep-mask for inverted dropout: 0 with probability p, 1/(1-p) otherwise.
template <typename Scalar>
Tensor<Scalar> dropout_mask(const Shape& shape, double p, Rng& rng);

template <typename Scalar>
Var<Scalar> apply_mask(Tape<Scalar>& tape, const Var<Scalar>& x, const Tensor<Scalar>& mask);

/// Inverted dropout. Identity in infer mode or when p == 0.
template <typename Scalar>
Var<Scalar> dropout(Tape<Scalar>& tape, const Var<Scalar>& x, double p, Mode mode, Rng& rng);

template <typename Scalar>
struct SoftmaxLoss {
  Var<Scalar> loss;  // shape [1]
  Tensor<Scalar> probs;
};

/// Mean softmax cross-entropy over the batch, max-subtracted.
template <typename Scalar>
SoftmaxLoss<Scalar> softmax_ce(Tape<Scalar>& tape, const Var<Scalar>& logits, std::span<const int> labels);

/// Row-wise softmax of [N,K] logits.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits);

/// lambda * sum of squared entries over `weights`. Callers pass weights only;
/// biases and batch-norm affine terms stay out.
template <typename Scalar>
Var<Scalar> l2_penalty(Tape<Scalar>& tape, std::span<const Var<Scalar>> weights, double lambda);

/// Channel-axis concatenation in argument order.
template <typename Scalar>
Var<Scalar> concat(Tape<Scalar>& tape, const std::vector<Var<Scalar>>& xs);

}  // namespace xcnn
