#include "xcnn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace xcnn {

namespace {

template <typename Scalar>
double evaluate(const ScalarProgram<Scalar>& f) {
  Tape<Scalar> tape(false);
  Var<Scalar> out = f(tape);
  return static_cast<double>(out.value()[0]);
}

}  // namespace

template <typename Scalar>
GradCheckReport grad_check(const ScalarProgram<Scalar>& f, const std::vector<Var<Scalar>>& inputs,
                           const GradCheckOptions& options) {
  if (!(options.eps > 0)) throw std::invalid_argument("grad_check: eps must be positive");
  for (const auto& in : inputs)
    if (!in.requires_grad()) throw std::invalid_argument("grad_check: inputs must require gradients");

  std::vector<Var<Scalar>> vars = inputs;
  for (auto& v : vars) v.zero_grad();
  {
    Tape<Scalar> tape;
    Var<Scalar> loss = f(tape);
    if (loss.value().size() != 1)
      throw std::invalid_argument("grad_check: program must be scalar-valued, got " + shape_string(loss.shape()));
    tape.backward(loss);
  }
  std::vector<Tensor<Scalar>> analytic;
  analytic.reserve(vars.size());
  for (auto& v : vars) analytic.push_back(v.grad());

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    Tensor<Scalar>& value = vars[k].value();
    std::vector<Index> elements(static_cast<std::size_t>(value.size()));
    std::iota(elements.begin(), elements.end(), Index{0});
    if (options.max_elements_per_input > 0 && value.size() > options.max_elements_per_input) {
      std::shuffle(elements.begin(), elements.end(), rng);
      elements.resize(static_cast<std::size_t>(options.max_elements_per_input));
    }
    for (Index e : elements) {
      const Scalar original = value[e];
      value[e] = original + static_cast<Scalar>(options.eps);
      const double plus = evaluate(f);
      value[e] = original - static_cast<Scalar>(options.eps);
      const double minus = evaluate(f);
      value[e] = original;

      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double a = static_cast<double>(analytic[k][e]);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double err = std::abs(a - numeric) / denom;
      ++report.elements_checked;
      if (err > report.max_relative_error || !std::isfinite(err)) {
        report.max_relative_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        report.input = k;
        report.element = e;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

template GradCheckReport grad_check(const ScalarProgram<float>&, const std::vector<Var<float>>&,
                                    const GradCheckOptions&);
template GradCheckReport grad_check(const ScalarProgram<double>&, const std::vector<Var<double>>&,
                                    const GradCheckOptions&);

}  // namespace xcnn
