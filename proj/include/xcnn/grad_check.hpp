#pragma once

#include "xcnn/tape.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace xcnn {

/// A scalar-valued program over tensors it captures. It is re-run on fresh
/// tapes, so it must be a pure function of its inputs' current values.
template <typename Scalar>
using ScalarProgram = std::function<Var<Scalar>(Tape<Scalar>&)>;

struct GradCheckOptions {
  double eps = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // 0 checks every element; otherwise a seeded sample of this many per input.
  Index max_elements_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t input = 0;
  Index element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  Index elements_checked = 0;
};

/// Compares reverse-mode gradients of `f` against central differences
/// (f(x+eps) - f(x-eps)) / (2 eps) for every element of every input.
/// Inputs must be leaves created with requires_grad = true.
template <typename Scalar>
GradCheckReport grad_check(const ScalarProgram<Scalar>& f, const std::vector<Var<Scalar>>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace xcnn
