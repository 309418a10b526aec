#pragma once

#include "xcnn/tensor.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace xcnn {

template <typename Scalar>
class Tape;

namespace detail {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // 0 for leaves
};

}  // namespace detail

/// Handle to a value on (or feeding) a tape. Copies share the same node, so a
/// parameter held by a network and the copy captured by a backward rule see
/// the same gradient buffer.
template <typename Scalar>
class Var {
 public:
  Var() = default;

  static Var leaf(Tensor<Scalar> value, bool requires_grad = false) {
    Var v;
    v.node_ = std::make_shared<detail::Node<Scalar>>();
    v.node_->value = std::move(value);
    v.node_->requires_grad = requires_grad;
    return v;
  }

  bool valid() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  /// Gradient buffer; zeros of the value's shape if nothing has flowed in.
  const Tensor<Scalar>& grad() const {
    if (node_->grad.empty()) node_->grad = Tensor<Scalar>(node_->value.shape());
    return node_->grad;
  }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }

  /// Adds `g` into this node's gradient (no-op when the node needs none).
  void accumulate_grad(const Tensor<Scalar>& g) const {
    if (!node_->requires_grad) return;
    if (node_->grad.empty()) {
      require_same_shape(node_->value.shape(), g.shape(), "gradient");
      node_->grad = g;
    } else {
      node_->grad.data() += g.data();
    }
  }
  template <typename Fn>
  void accumulate_grad_with(Fn&& fill) const {
    if (!node_->requires_grad) return;
    if (node_->grad.empty()) node_->grad = Tensor<Scalar>(node_->value.shape());
    fill(node_->grad);
  }

  std::uint64_t tape_id() const { return node_->tape_id; }
  bool same_node(const Var& other) const { return node_ == other.node_; }

 private:
  friend class Tape<Scalar>;
  std::shared_ptr<detail::Node<Scalar>> node_;
};

/// Records operations in execution order and replays their backward rules in
/// reverse. A non-recording tape evaluates the same ops without keeping any
/// backward state, which is what inference uses.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor<Scalar>& grad_out)>;

  explicit Tape(bool recording = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }

  /// Wraps an op result. The backward rule is kept only when recording and at
  /// least one input needs a gradient.
  Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs, BackwardFn backward);
  Var<Scalar> record(Tensor<Scalar> value, const std::vector<Var<Scalar>>& inputs, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule once, newest first.
  void backward(const Var<Scalar>& loss);

 private:
  struct Entry {
    std::shared_ptr<detail::Node<Scalar>> output;
    BackwardFn backward;
  };

  Var<Scalar> record_impl(Tensor<Scalar> value, bool needs_grad, BackwardFn backward);

  bool recording_;
  bool consumed_ = false;
  std::uint64_t id_;
  std::vector<Entry> entries_;
};

}  // namespace xcnn
