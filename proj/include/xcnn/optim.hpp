#pragma once

#include "xcnn/random.hpp"
#include "xcnn/tape.hpp"

#include <vector>

namespace xcnn {

/// (fan_in, fan_out) for a dense [in,out] or conv [F,C,kH,kW] shape.
std::pair<Index, Index> fans(const Shape& shape);

/// Half-width of the Glorot uniform range, sqrt(6 / (fan_in + fan_out)).
double xavier_bound(const Shape& shape);

/// Glorot/Xavier uniform initialization over [-bound, bound].
template <typename Scalar>
Tensor<Scalar> xavier_init(const Shape& shape, Rng& rng);

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments for one parameter list. Moments are created lazily at the first
/// step, so a state can be default-constructed before the parameters exist.
template <typename Scalar>
struct AdamState {
  AdamConfig config;
  long step = 0;
  std::vector<Tensor<Scalar>> m;
  std::vector<Tensor<Scalar>> v;
};

/// One Adam update over `params` using their current gradients. Parameters
/// without a gradient are treated as having a zero gradient.
template <typename Scalar>
void adam_step(std::vector<Var<Scalar>>& params, AdamState<Scalar>& state);

}  // namespace xcnn
