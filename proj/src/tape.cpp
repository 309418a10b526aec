#include "xcnn/tape.hpp"

#include <atomic>
#include <stdexcept>

namespace xcnn {

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
}

template <typename Scalar>
Tape<Scalar>::Tape(bool recording) : recording_(recording), id_(next_tape_id.fetch_add(1)) {}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs,
                                 BackwardFn backward) {
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  return record_impl(std::move(value), needs, std::move(backward));
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(Tensor<Scalar> value, const std::vector<Var<Scalar>>& inputs,
                                 BackwardFn backward) {
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  return record_impl(std::move(value), needs, std::move(backward));
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record_impl(Tensor<Scalar> value, bool needs_grad, BackwardFn backward) {
  if (consumed_) throw std::logic_error("tape has already been differentiated");
  Var<Scalar> out = Var<Scalar>::leaf(std::move(value), recording_ && needs_grad);
  out.node_->tape_id = id_;
  if (out.requires_grad()) entries_.push_back({out.node_, std::move(backward)});
  return out;
}

template <typename Scalar>
void Tape<Scalar>::backward(const Var<Scalar>& loss) {
  if (!loss.valid() || loss.tape_id() != id_)
    throw std::invalid_argument("backward: loss was not produced on this tape");
  if (loss.value().size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  if (consumed_) throw std::logic_error("backward: tape has already been differentiated");
  consumed_ = true;
  if (!loss.requires_grad()) return;

  loss.node_->grad = Tensor<Scalar>::constant(loss.shape(), Scalar(1));
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(it->output->grad);
  }
  // Intermediate gradients are no longer needed; leaves keep theirs.
  for (auto& e : entries_) {
    e.output->grad = Tensor<Scalar>();
    e.backward = nullptr;
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace xcnn
