#include "xcnn/ops.hpp"

#include <limits>
#include <stdexcept>
#include <string>

namespace xcnn {

namespace {

template <typename Scalar>
using RowMatrix = typename Tensor<Scalar>::RowMatrix;
template <typename Scalar>
using MatMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

struct ConvGeometry {
  Index channels, height, width;
  Index kh, kw, stride, padding;
  Index out_h, out_w;
};

template <typename Scalar>
void im2col(const Scalar* image, const ConvGeometry& g, Scalar* col) {
  const Index out_area = g.out_h * g.out_w;
  for (Index c = 0; c < g.channels; ++c) {
    const Scalar* plane = image + c * g.height * g.width;
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        Scalar* row = col + ((c * g.kh + i) * g.kw + j) * out_area;
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index h = oh * g.stride - g.padding + i;
          Scalar* dst = row + oh * g.out_w;
          if (h < 0 || h >= g.height) {
            for (Index ow = 0; ow < g.out_w; ++ow) dst[ow] = Scalar(0);
            continue;
          }
          const Scalar* src = plane + h * g.width;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index w = ow * g.stride - g.padding + j;
            dst[ow] = (w >= 0 && w < g.width) ? src[w] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Scalar* col, const ConvGeometry& g, Scalar* image) {
  const Index out_area = g.out_h * g.out_w;
  for (Index c = 0; c < g.channels; ++c) {
    Scalar* plane = image + c * g.height * g.width;
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        const Scalar* row = col + ((c * g.kh + i) * g.kw + j) * out_area;
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index h = oh * g.stride - g.padding + i;
          if (h < 0 || h >= g.height) continue;
          const Scalar* src = row + oh * g.out_w;
          Scalar* dst = plane + h * g.width;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index w = ow * g.stride - g.padding + j;
            if (w >= 0 && w < g.width) dst[w] += src[ow];
          }
        }
      }
    }
  }
}

void require_rank(const Shape& s, Index rank, const char* what) {
  if (static_cast<Index>(s.size()) != rank)
    throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_string(s));
}

}  // namespace

template <typename Scalar>
Var<Scalar> conv2d(Tape<Scalar>& tape, const Var<Scalar>& input, const Var<Scalar>& kernel,
                   const Var<Scalar>& bias, Index stride, Index padding) {
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  require_rank(xs, 4, "conv2d input");
  require_rank(ks, 4, "conv2d kernel");
  if (ks[1] != xs[1])
    throw std::invalid_argument("conv2d: input " + shape_string(xs) + " has " + std::to_string(xs[1]) +
                                " channels but kernel " + shape_string(ks) + " expects " + std::to_string(ks[1]));
  if (bias.shape() != Shape{ks[0]})
    throw std::invalid_argument("conv2d: bias " + shape_string(bias.shape()) + " does not match kernel " +
                                shape_string(ks));
  if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: stride must be >= 1 and padding >= 0");
  const Index span_h = xs[2] + 2 * padding - ks[2];
  const Index span_w = xs[3] + 2 * padding - ks[3];
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0)
    throw std::invalid_argument("conv2d: input " + shape_string(xs) + " with kernel " + shape_string(ks) +
                                ", stride " + std::to_string(stride) + ", padding " + std::to_string(padding) +
                                " does not give an integer output size");

  ConvGeometry g{xs[1], xs[2], xs[3], ks[2], ks[3], stride, padding, span_h / stride + 1, span_w / stride + 1};
  const Index batch = xs[0];
  const Index filters = ks[0];
  const Index patch = g.channels * g.kh * g.kw;
  const Index in_area = g.height * g.width;
  const Index out_area = g.out_h * g.out_w;
  const bool direct = g.kh == 1 && g.kw == 1 && stride == 1 && padding == 0;

  Tensor<Scalar> out({batch, filters, g.out_h, g.out_w});
  ConstMatMap<Scalar> wm(kernel.value().ptr(), filters, patch);
  ConstVecMap<Scalar> b(bias.value().ptr(), filters);
  RowMatrix<Scalar> col;
  if (!direct) col.resize(patch, out_area);
  for (Index n = 0; n < batch; ++n) {
    MatMap<Scalar> y(out.ptr() + n * filters * out_area, filters, out_area);
    if (direct) {
      ConstMatMap<Scalar> x(input.value().ptr() + n * g.channels * in_area, g.channels, in_area);
      y.noalias() = wm * x;
    } else {
      im2col(input.value().ptr() + n * g.channels * in_area, g, col.data());
      y.noalias() = wm * col;
    }
    y.colwise() += b;
  }

  return tape.record(std::move(out), {input, kernel, bias}, [=](const Tensor<Scalar>& gout) {
    ConstMatMap<Scalar> wmat(kernel.value().ptr(), filters, patch);
    RowMatrix<Scalar> cols;
    RowMatrix<Scalar> gcol;
    if (!direct) cols.resize(patch, out_area);
    const bool need_x = input.requires_grad();
    const bool need_w = kernel.requires_grad();
    const bool need_b = bias.requires_grad();
    Tensor<Scalar> gx = need_x ? Tensor<Scalar>(input.shape()) : Tensor<Scalar>();
    RowMatrix<Scalar> gw = RowMatrix<Scalar>::Zero(need_w ? filters : 0, need_w ? patch : 0);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gb = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(need_b ? filters : 0);
    for (Index n = 0; n < batch; ++n) {
      ConstMatMap<Scalar> gy(gout.ptr() + n * filters * out_area, filters, out_area);
      const Scalar* xn = input.value().ptr() + n * g.channels * in_area;
      if (need_b) gb += gy.rowwise().sum();
      if (direct) {
        ConstMatMap<Scalar> x(xn, g.channels, in_area);
        if (need_w) gw.noalias() += gy * x.transpose();
        if (need_x) {
          MatMap<Scalar> gxn(gx.ptr() + n * g.channels * in_area, g.channels, in_area);
          gxn.noalias() = wmat.transpose() * gy;
        }
      } else {
        if (need_w) {
          im2col(xn, g, cols.data());
          gw.noalias() += gy * cols.transpose();
        }
        if (need_x) {
          gcol.noalias() = wmat.transpose() * gy;
          col2im_add(gcol.data(), g, gx.ptr() + n * g.channels * in_area);
        }
      }
    }
    if (need_x) input.accumulate_grad(gx);
    if (need_w) kernel.accumulate_grad_with([&](Tensor<Scalar>& gk) { gk.matrix(filters, patch) += gw; });
    if (need_b) bias.accumulate_grad_with([&](Tensor<Scalar>& gbias) { gbias.data() += gb.array(); });
  });
}

template <typename Scalar>
Var<Scalar> maxpool2d(Tape<Scalar>& tape, const Var<Scalar>& input, Index window, Index stride) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "maxpool2d input");
  if (window < 1 || stride < 1) throw std::invalid_argument("maxpool2d: window and stride must be positive");
  const Index h = xs[2], w = xs[3];
  if (h < window || w < window || (h - window) % stride != 0 || (w - window) % stride != 0)
    throw std::invalid_argument("maxpool2d: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                                " is not divisible for window " + std::to_string(window) + ", stride " +
                                std::to_string(stride));
  const Index oh = (h - window) / stride + 1;
  const Index ow = (w - window) / stride + 1;
  const Index planes = xs[0] * xs[1];
  Tensor<Scalar> out({xs[0], xs[1], oh, ow});
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  const Scalar* x = input.value().ptr();
  Index o = 0;
  for (Index p = 0; p < planes; ++p) {
    const Index base = p * h * w;
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j, ++o) {
        Index best = base + (i * stride) * w + j * stride;
        for (Index di = 0; di < window; ++di) {
          const Index row = base + (i * stride + di) * w + j * stride;
          for (Index dj = 0; dj < window; ++dj)
            if (x[row + dj] > x[best]) best = row + dj;
        }
        out[o] = x[best];
        argmax[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  return tape.record(std::move(out), {input}, [input, argmax = std::move(argmax)](const Tensor<Scalar>& gout) {
    input.accumulate_grad_with([&](Tensor<Scalar>& gx) {
      for (std::size_t k = 0; k < argmax.size(); ++k) gx[argmax[k]] += gout[static_cast<Index>(k)];
    });
  });
}

template <typename Scalar>
Var<Scalar> dense(Tape<Scalar>& tape, const Var<Scalar>& input, const Var<Scalar>& weights,
                  const Var<Scalar>& bias) {
  const Shape& xs = input.shape();
  const Shape& ws = weights.shape();
  require_rank(xs, 2, "dense input");
  require_rank(ws, 2, "dense weights");
  if (xs[1] != ws[0])
    throw std::invalid_argument("dense: input " + shape_string(xs) + " does not match weights " + shape_string(ws));
  if (bias.shape() != Shape{ws[1]})
    throw std::invalid_argument("dense: bias " + shape_string(bias.shape()) + " does not match weights " +
                                shape_string(ws));
  const Index n = xs[0], d = xs[1], k = ws[1];
  Tensor<Scalar> out({n, k});
  {
    auto y = out.matrix(n, k);
    y.noalias() = input.value().matrix(n, d) * weights.value().matrix(d, k);
    y.rowwise() += ConstVecMap<Scalar>(bias.value().ptr(), k).transpose();
  }
  return tape.record(std::move(out), {input, weights, bias}, [=](const Tensor<Scalar>& gout) {
    auto gy = gout.matrix(n, k);
    input.accumulate_grad_with(
        [&](Tensor<Scalar>& gx) { gx.matrix(n, d).noalias() += gy * weights.value().matrix(d, k).transpose(); });
    weights.accumulate_grad_with(
        [&](Tensor<Scalar>& gw) { gw.matrix(d, k).noalias() += input.value().matrix(n, d).transpose() * gy; });
    bias.accumulate_grad_with(
        [&](Tensor<Scalar>& gb) { gb.matrix(1, k) += gy.colwise().sum(); });
  });
}

template <typename Scalar>
Var<Scalar> reshape(Tape<Scalar>& tape, const Var<Scalar>& input, Shape shape) {
  Tensor<Scalar> out = input.value().reshaped(std::move(shape));
  return tape.record(std::move(out), {input}, [input](const Tensor<Scalar>& gout) {
    input.accumulate_grad_with([&](Tensor<Scalar>& gx) { gx.data() += gout.data(); });
  });
}

template <typename Scalar>
Var<Scalar> flatten(Tape<Scalar>& tape, const Var<Scalar>& input) {
  const Shape& xs = input.shape();
  if (xs.empty()) throw std::invalid_argument("flatten: scalar input");
  return reshape(tape, input, {xs[0], input.value().size() / xs[0]});
}

template <typename Scalar>
Var<Scalar> add(Tape<Scalar>& tape, const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<Scalar> out(a.shape(), a.value().data() + b.value().data());
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor<Scalar>& gout) {
    a.accumulate_grad_with([&](Tensor<Scalar>& g) { g.data() += gout.data(); });
    b.accumulate_grad_with([&](Tensor<Scalar>& g) { g.data() += gout.data(); });
  });
}

template <typename Scalar>
Var<Scalar> mul(Tape<Scalar>& tape, const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<Scalar> out(a.shape(), a.value().data() * b.value().data());
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor<Scalar>& gout) {
    a.accumulate_grad_with([&](Tensor<Scalar>& g) { g.data() += gout.data() * b.value().data(); });
    b.accumulate_grad_with([&](Tensor<Scalar>& g) { g.data() += gout.data() * a.value().data(); });
  });
}

template <typename Scalar>
Var<Scalar> scale(Tape<Scalar>& tape, const Var<Scalar>& a, Scalar factor) {
  Tensor<Scalar> out(a.shape(), a.value().data() * factor);
  return tape.record(std::move(out), {a}, [a, factor](const Tensor<Scalar>& gout) {
    a.accumulate_grad_with([&](Tensor<Scalar>& g) { g.data() += gout.data() * factor; });
  });
}

template <typename Scalar>
Var<Scalar> sum(Tape<Scalar>& tape, const Var<Scalar>& a) {
  Tensor<Scalar> out({1}, {a.value().data().sum()});
  return tape.record(std::move(out), {a}, [a](const Tensor<Scalar>& gout) {
    a.accumulate_grad_with([&](Tensor<Scalar>& g) { g.data() += gout[0]; });
  });
}

template <typename Scalar>
Var<Scalar> sum_squares(Tape<Scalar>& tape, const Var<Scalar>& a) {
  Tensor<Scalar> out({1}, {a.value().data().square().sum()});
  return tape.record(std::move(out), {a}, [a](const Tensor<Scalar>& gout) {
    a.accumulate_grad_with([&](Tensor<Scalar>& g) { g.data() += Scalar(2) * gout[0] * a.value().data(); });
  });
}

template <typename Scalar>
Var<Scalar> slice_channels(Tape<Scalar>& tape, const Var<Scalar>& input, Index begin, Index count) {
  const Shape& xs = input.shape();
  if (xs.size() < 2) throw std::invalid_argument("slice_channels: input must have a channel axis");
  if (begin < 0 || count < 1 || begin + count > xs[1])
    throw std::invalid_argument("slice_channels: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") outside " + shape_string(xs));
  const Index inner = input.value().size() / (xs[0] * xs[1]);
  Shape os = xs;
  os[1] = count;
  Tensor<Scalar> out(os);
  for (Index n = 0; n < xs[0]; ++n)
    out.data().segment(n * count * inner, count * inner) =
        input.value().data().segment((n * xs[1] + begin) * inner, count * inner);
  return tape.record(std::move(out), {input}, [=](const Tensor<Scalar>& gout) {
    input.accumulate_grad_with([&](Tensor<Scalar>& gx) {
      for (Index n = 0; n < xs[0]; ++n)
        gx.data().segment((n * xs[1] + begin) * inner, count * inner) +=
            gout.data().segment(n * count * inner, count * inner);
    });
  });
}

template <typename Scalar>
Var<Scalar> channel_mean(Tape<Scalar>& tape, const Var<Scalar>& input, Index channel) {
  const Shape& xs = input.shape();
  if (xs.size() < 2 || channel < 0 || channel >= xs[1])
    throw std::invalid_argument("channel_mean: channel " + std::to_string(channel) + " invalid for " +
                                shape_string(xs));
  const Index inner = input.value().size() / (xs[0] * xs[1]);
  const Index count = xs[0] * inner;
  Scalar total = 0;
  for (Index n = 0; n < xs[0]; ++n) total += input.value().data().segment((n * xs[1] + channel) * inner, inner).sum();
  Tensor<Scalar> out({1}, {total / Scalar(count)});
  return tape.record(std::move(out), {input}, [=](const Tensor<Scalar>& gout) {
    input.accumulate_grad_with([&](Tensor<Scalar>& gx) {
      const Scalar g = gout[0] / Scalar(count);
      for (Index n = 0; n < xs[0]; ++n) gx.data().segment((n * xs[1] + channel) * inner, inner) += g;
    });
  });
}

#define XCNN_INSTANTIATE_OPS(S)                                                                               \
  template Var<S> conv2d(Tape<S>&, const Var<S>&, const Var<S>&, const Var<S>&, Index, Index);                \
  template Var<S> maxpool2d(Tape<S>&, const Var<S>&, Index, Index);                                           \
  template Var<S> dense(Tape<S>&, const Var<S>&, const Var<S>&, const Var<S>&);                               \
  template Var<S> flatten(Tape<S>&, const Var<S>&);                                                           \
  template Var<S> reshape(Tape<S>&, const Var<S>&, Shape);                                                    \
  template Var<S> add(Tape<S>&, const Var<S>&, const Var<S>&);                                                \
  template Var<S> mul(Tape<S>&, const Var<S>&, const Var<S>&);                                                \
  template Var<S> scale(Tape<S>&, const Var<S>&, S);                                                          \
  template Var<S> sum(Tape<S>&, const Var<S>&);                                                               \
  template Var<S> sum_squares(Tape<S>&, const Var<S>&);                                                       \
  template Var<S> slice_channels(Tape<S>&, const Var<S>&, Index, Index);                                      \
  template Var<S> channel_mean(Tape<S>&, const Var<S>&, Index);

XCNN_INSTANTIATE_OPS(float)
XCNN_INSTANTIATE_OPS(double)

}  // namespace xcnn
