#include "xcnn/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace xcnn {

namespace {

// Splits [N,C,...] into (batch, channels, inner) where inner = prod(...).
struct ChannelLayout {
  Index batch, channels, inner;
};

ChannelLayout channel_layout(const Shape& s, const char* what) {
  if (s.size() != 2 && s.size() != 4)
    throw std::invalid_argument(std::string(what) + ": expected [N,C] or [N,C,H,W], got " + shape_string(s));
  return {s[0], s[1], s.size() == 4 ? s[2] * s[3] : 1};
}

Shape without_channels(Shape s) {
  s[1] = 0;
  return s;
}

}  // namespace

template <typename Scalar>
Var<Scalar> relu(Tape<Scalar>& tape, const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.value().data().max(Scalar(0)));
  return tape.record(std::move(out), {x}, [x](const Tensor<Scalar>& gout) {
    x.accumulate_grad_with([&](Tensor<Scalar>& g) {
      g.data() += (x.value().data() > Scalar(0)).select(gout.data(), Scalar(0));
    });
  });
}

template <typename Scalar>
Var<Scalar> maxout(Tape<Scalar>& tape, const Var<Scalar>& x, Index pieces) {
  const ChannelLayout l = channel_layout(x.shape(), "maxout");
  if (pieces < 1 || l.channels % pieces != 0)
    throw std::invalid_argument("maxout: " + std::to_string(l.channels) + " channels not divisible into " +
                                std::to_string(pieces) + " pieces");
  const Index out_channels = l.channels / pieces;
  Shape os = x.shape();
  os[1] = out_channels;
  Tensor<Scalar> out(os);
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  const Scalar* in = x.value().ptr();
  for (Index n = 0; n < l.batch; ++n) {
    for (Index c = 0; c < out_channels; ++c) {
      for (Index i = 0; i < l.inner; ++i) {
        Index best = (n * l.channels + c * pieces) * l.inner + i;
        for (Index k = 1; k < pieces; ++k) {
          const Index idx = (n * l.channels + c * pieces + k) * l.inner + i;
          if (in[idx] > in[best]) best = idx;
        }
        const Index o = (n * out_channels + c) * l.inner + i;
        out[o] = in[best];
        argmax[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  return tape.record(std::move(out), {x}, [x, argmax = std::move(argmax)](const Tensor<Scalar>& gout) {
    x.accumulate_grad_with([&](Tensor<Scalar>& g) {
      for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += gout[static_cast<Index>(o)];
    });
  });
}

template <typename Scalar>
Var<Scalar> batchnorm(Tape<Scalar>& tape, const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                      Mode mode, BatchNormState<Scalar>& state) {
  const ChannelLayout l = channel_layout(x.shape(), "batchnorm");
  if (gamma.shape() != Shape{l.channels} || beta.shape() != Shape{l.channels})
    throw std::invalid_argument("batchnorm: gamma/beta must have shape [" + std::to_string(l.channels) + "]");
  if (state.running_mean.shape() != Shape{l.channels} || state.running_var.shape() != Shape{l.channels})
    throw std::invalid_argument("batchnorm: running statistics do not match " + shape_string(x.shape()));
  const Index m = l.batch * l.inner;
  if (mode == Mode::train && m < 2)
    throw std::invalid_argument("batchnorm: train mode needs at least two values per channel, got " +
                                shape_string(x.shape()));

  Tensor<Scalar> xhat(x.shape());
  Eigen::Array<Scalar, Eigen::Dynamic, 1> inv_std(l.channels);
  const Scalar* in = x.value().ptr();
  for (Index c = 0; c < l.channels; ++c) {
    Scalar mean, var;
    if (mode == Mode::train) {
      double s = 0, ss = 0;
      for (Index n = 0; n < l.batch; ++n) {
        const auto seg = x.value().data().segment((n * l.channels + c) * l.inner, l.inner);
        s += static_cast<double>(seg.sum());
      }
      const double mu = s / static_cast<double>(m);
      for (Index n = 0; n < l.batch; ++n) {
        const auto seg = x.value().data().segment((n * l.channels + c) * l.inner, l.inner);
        ss += static_cast<double>((seg - Scalar(mu)).square().sum());
      }
      mean = static_cast<Scalar>(mu);
      var = static_cast<Scalar>(ss / static_cast<double>(m));
      state.running_mean[c] = state.momentum * state.running_mean[c] + (Scalar(1) - state.momentum) * mean;
      state.running_var[c] = state.momentum * state.running_var[c] +
                             (Scalar(1) - state.momentum) * var * Scalar(m) / Scalar(m - 1);
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    inv_std[c] = Scalar(1) / std::sqrt(var + state.eps);
    for (Index n = 0; n < l.batch; ++n) {
      const Index off = (n * l.channels + c) * l.inner;
      for (Index i = 0; i < l.inner; ++i) xhat[off + i] = (in[off + i] - mean) * inv_std[c];
    }
  }

  Tensor<Scalar> out(x.shape());
  for (Index n = 0; n < l.batch; ++n)
    for (Index c = 0; c < l.channels; ++c) {
      const Index off = (n * l.channels + c) * l.inner;
      out.data().segment(off, l.inner) = xhat.data().segment(off, l.inner) * gamma.value()[c] + beta.value()[c];
    }

  const bool batch_stats = mode == Mode::train;
  return tape.record(std::move(out), {x, gamma, beta},
                     [=, xhat = std::move(xhat)](const Tensor<Scalar>& gout) {
    Eigen::Array<Scalar, Eigen::Dynamic, 1> sum_dy = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(l.channels);
    Eigen::Array<Scalar, Eigen::Dynamic, 1> sum_dy_xhat = sum_dy;
    for (Index n = 0; n < l.batch; ++n)
      for (Index c = 0; c < l.channels; ++c) {
        const Index off = (n * l.channels + c) * l.inner;
        const auto dy = gout.data().segment(off, l.inner);
        sum_dy[c] += dy.sum();
        sum_dy_xhat[c] += (dy * xhat.data().segment(off, l.inner)).sum();
      }
    gamma.accumulate_grad_with([&](Tensor<Scalar>& g) { g.data() += sum_dy_xhat; });
    beta.accumulate_grad_with([&](Tensor<Scalar>& g) { g.data() += sum_dy; });
    x.accumulate_grad_with([&](Tensor<Scalar>& gx) {
      for (Index n = 0; n < l.batch; ++n)
        for (Index c = 0; c < l.channels; ++c) {
          const Index off = (n * l.channels + c) * l.inner;
          const Scalar scale = gamma.value()[c] * inv_std[c];
          const auto dy = gout.data().segment(off, l.inner);
          if (batch_stats) {
            const Scalar inv_m = Scalar(1) / Scalar(m);
            gx.data().segment(off, l.inner) +=
                scale * (dy - inv_m * sum_dy[c] - xhat.data().segment(off, l.inner) * (inv_m * sum_dy_xhat[c]));
          } else {
            gx.data().segment(off, l.inner) += scale * dy;
          }
        }
    });
  });
}

template <typename Scalar>
Tensor<Scalar> dropout_mask(const Shape& shape, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  Tensor<Scalar> mask(shape);
  const Scalar keep = static_cast<Scalar>(1.0 / (1.0 - p));
  for (Index i = 0; i < mask.size(); ++i) mask[i] = uniform01(rng) < p ? Scalar(0) : keep;
  return mask;
}

template <typename Scalar>
Var<Scalar> apply_mask(Tape<Scalar>& tape, const Var<Scalar>& x, const Tensor<Scalar>& mask) {
  require_same_shape(x.shape(), mask.shape(), "dropout mask");
  Tensor<Scalar> out(x.shape(), x.value().data() * mask.data());
  return tape.record(std::move(out), {x}, [x, mask](const Tensor<Scalar>& gout) {
    x.accumulate_grad_with([&](Tensor<Scalar>& g) { g.data() += gout.data() * mask.data(); });
  });
}

template <typename Scalar>
Var<Scalar> dropout(Tape<Scalar>& tape, const Var<Scalar>& x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (mode == Mode::infer || p == 0.0) return x;
  return apply_mask(tape, x, dropout_mask<Scalar>(x.shape(), p, rng));
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax: expected [N,K], got " + shape_string(logits.shape()));
  const Index n = logits.dim(0), k = logits.dim(1);
  Tensor<Scalar> probs(logits.shape());
  auto in = logits.matrix(n, k);
  auto out = probs.matrix(n, k);
  for (Index r = 0; r < n; ++r) {
    out.row(r) = (in.row(r).array() - in.row(r).maxCoeff()).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return probs;
}

template <typename Scalar>
SoftmaxLoss<Scalar> softmax_ce(Tape<Scalar>& tape, const Var<Scalar>& logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw std::invalid_argument("softmax_ce: expected [N,K] logits, got " + shape_string(s));
  const Index n = s[0], k = s[1];
  if (static_cast<Index>(labels.size()) != n)
    throw std::invalid_argument("softmax_ce: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(n) + " rows");
  for (int y : labels)
    if (y < 0 || y >= k)
      throw std::invalid_argument("softmax_ce: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");

  auto z = logits.value().matrix(n, k);
  Tensor<Scalar> probs(s);
  auto p = probs.matrix(n, k);
  double loss = 0;
  for (Index r = 0; r < n; ++r) {
    const Scalar mx = z.row(r).maxCoeff();
    const auto shifted = (z.row(r).array() - mx).eval();
    const Scalar log_norm = std::log(shifted.exp().sum());
    p.row(r) = (shifted - log_norm).exp().matrix();
    loss -= static_cast<double>(shifted[labels[static_cast<std::size_t>(r)]] - log_norm);
  }
  loss /= static_cast<double>(n);

  std::vector<int> ys(labels.begin(), labels.end());
  Var<Scalar> out = tape.record(Tensor<Scalar>({1}, {static_cast<Scalar>(loss)}), {logits},
                                [logits, probs, ys = std::move(ys), n, k](const Tensor<Scalar>& gout) {
    logits.accumulate_grad_with([&](Tensor<Scalar>& g) {
      const Scalar w = gout[0] / Scalar(n);
      auto gm = g.matrix(n, k);
      gm += w * probs.matrix(n, k);
      for (Index r = 0; r < n; ++r) gm(r, ys[static_cast<std::size_t>(r)]) -= w;
    });
  });
  return {out, std::move(probs)};
}

template <typename Scalar>
Var<Scalar> l2_penalty(Tape<Scalar>& tape, std::span<const Var<Scalar>> weights, double lambda) {
  if (!(lambda >= 0)) throw std::invalid_argument("l2_penalty: lambda must be non-negative");
  double total = 0;
  for (const auto& w : weights) total += static_cast<double>(w.value().data().square().sum());
  std::vector<Var<Scalar>> inputs(weights.begin(), weights.end());
  const Scalar lam = static_cast<Scalar>(lambda);
  return tape.record(Tensor<Scalar>({1}, {static_cast<Scalar>(lambda * total)}), inputs,
                     [inputs, lam](const Tensor<Scalar>& gout) {
    for (const auto& w : inputs)
      w.accumulate_grad_with([&](Tensor<Scalar>& g) { g.data() += Scalar(2) * lam * gout[0] * w.value().data(); });
  });
}

template <typename Scalar>
Var<Scalar> concat(Tape<Scalar>& tape, const std::vector<Var<Scalar>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  if (xs.size() == 1) return xs.front();
  const Shape& first = xs.front().shape();
  const ChannelLayout l0 = channel_layout(first, "concat");
  Index channels = 0;
  std::vector<Index> offsets;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.size() != first.size() || without_channels(s) != without_channels(first))
      throw std::invalid_argument("concat: " + shape_string(s) + " does not match " + shape_string(first) +
                                  " outside the channel axis");
    offsets.push_back(channels);
    channels += s[1];
  }
  Shape os = first;
  os[1] = channels;
  Tensor<Scalar> out(os);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Index ci = xs[i].shape()[1];
    for (Index n = 0; n < l0.batch; ++n)
      out.data().segment((n * channels + offsets[i]) * l0.inner, ci * l0.inner) =
          xs[i].value().data().segment(n * ci * l0.inner, ci * l0.inner);
  }
  const Index inner = l0.inner, batch = l0.batch;
  return tape.record(std::move(out), xs, [xs, offsets, channels, inner, batch](const Tensor<Scalar>& gout) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Index ci = xs[i].shape()[1];
      xs[i].accumulate_grad_with([&](Tensor<Scalar>& g) {
        for (Index n = 0; n < batch; ++n)
          g.data().segment(n * ci * inner, ci * inner) +=
              gout.data().segment((n * channels + offsets[i]) * inner, ci * inner);
      });
    }
  });
}

#define XCNN_INSTANTIATE_LAYERS(S)                                                                          \
  template Var<S> relu(Tape<S>&, const Var<S>&);                                                           \
  template Var<S> maxout(Tape<S>&, const Var<S>&, Index);                                                  \
  template Var<S> batchnorm(Tape<S>&, const Var<S>&, const Var<S>&, const Var<S>&, Mode, BatchNormState<S>&); \
  template Tensor<S> dropout_mask(const Shape&, double, Rng&);                                             \
  template Var<S> apply_mask(Tape<S>&, const Var<S>&, const Tensor<S>&);                                   \
  template Var<S> dropout(Tape<S>&, const Var<S>&, double, Mode, Rng&);                                    \
  template Tensor<S> softmax(const Tensor<S>&);                                                            \
  template SoftmaxLoss<S> softmax_ce(Tape<S>&, const Var<S>&, std::span<const int>);                       \
  template Var<S> l2_penalty(Tape<S>&, std::span<const Var<S>>, double);                                   \
  template Var<S> concat(Tape<S>&, const std::vector<Var<S>>&);

XCNN_INSTANTIATE_LAYERS(float)
XCNN_INSTANTIATE_LAYERS(double)

}  // namespace xcnn
