#include "xcnn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace xcnn {

std::pair<Index, Index> fans(const Shape& shape) {
  if (shape.size() == 2) return {shape[0], shape[1]};
  if (shape.size() == 4) {
    const Index receptive = shape[2] * shape[3];
    return {shape[1] * receptive, shape[0] * receptive};
  }
  throw std::invalid_argument("xavier: cannot derive fans from shape " + shape_string(shape));
}

double xavier_bound(const Shape& shape) {
  const auto [fan_in, fan_out] = fans(shape);
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

template <typename Scalar>
Tensor<Scalar> xavier_init(const Shape& shape, Rng& rng) {
  const double bound = xavier_bound(shape);
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>((2.0 * uniform01(rng) - 1.0) * bound);
  return t;
}

template <typename Scalar>
void adam_step(std::vector<Var<Scalar>>& params, AdamState<Scalar>& state) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.shape());
      state.v.emplace_back(p.shape());
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: parameter list changed size");

  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const Scalar b1 = static_cast<Scalar>(c.beta1), b2 = static_cast<Scalar>(c.beta2);
  const Scalar correction1 = static_cast<Scalar>(1.0 - std::pow(c.beta1, t));
  const Scalar correction2 = static_cast<Scalar>(1.0 - std::pow(c.beta2, t));
  const Scalar lr = static_cast<Scalar>(c.learning_rate), eps = static_cast<Scalar>(c.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i].data();
    auto& v = state.v[i].data();
    require_same_shape(params[i].shape(), state.m[i].shape(), "adam_step");
    if (params[i].has_grad()) {
      const auto& g = params[i].grad().data();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.square();
    } else {
      m *= b1;
      v *= b2;
    }
    params[i].value().data() -= lr * (m / correction1) / ((v / correction2).sqrt() + eps);
  }
}

template Tensor<float> xavier_init(const Shape&, Rng&);
template Tensor<double> xavier_init(const Shape&, Rng&);
template void adam_step(std::vector<Var<float>>&, AdamState<float>&);
template void adam_step(std::vector<Var<double>>&, AdamState<double>&);

}  // namespace xcnn
