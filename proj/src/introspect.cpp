#include "xcnn/introspect.hpp"

#include "xcnn/ops.hpp"
#include "xcnn/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace xcnn {

void write_ppm(const std::string& path, const RgbImage& image) {
  if (image.pixels.size() != static_cast<std::size_t>(3 * image.width * image.height))
    throw std::invalid_argument("write_ppm: pixel buffer does not match " + std::to_string(image.width) + "x" +
                                std::to_string(image.height));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "P6\n";
  for (const auto& c : image.comments) out << "# " << c << '\n';
  out << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

RgbImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("'" + path + "' is not a binary PPM");
  RgbImage img;
  auto next_number = [&]() {
    while (true) {
      in >> std::ws;
      if (in.peek() != '#') break;
      std::string line;
      std::getline(in, line);
      img.comments.push_back(line.size() > 2 ? line.substr(2) : std::string());
    }
    long v;
    if (!(in >> v)) throw std::runtime_error("'" + path + "': malformed PPM header");
    return v;
  };
  img.width = next_number();
  img.height = next_number();
  if (next_number() != 255) throw std::runtime_error("'" + path + "': only 8-bit PPM is supported");
  in.get();
  img.pixels.resize(static_cast<std::size_t>(3 * img.width * img.height));
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw std::runtime_error("'" + path + "': truncated pixel data");
  return img;
}

// ---- heatmaps ---------------------------------------------------------------

std::array<std::uint8_t, 3> heatmap_colour(double w, double max_abs) {
  if (w == 0 || max_abs <= 0) return {255, 255, 255};
  const double m = std::min(std::abs(w) / max_abs, 1.0);
  // Non-zero weights never render pure white, so the sign stays recoverable.
  const auto v = static_cast<std::uint8_t>(std::min(254.0, std::round(255.0 * (1.0 - m))));
  if (w > 0) return {v, 255, v};
  return {v, v, 255};
}

HeatmapCell decode_heatmap_colour(const std::uint8_t* rgb) {
  if (rgb[1] == 255 && rgb[2] == 255) return {0, 0.0};
  if (rgb[1] == 255) return {1, 1.0 - rgb[0] / 255.0};
  return {-1, 1.0 - rgb[0] / 255.0};
}

template <typename Scalar>
Heatmap weight_heatmap(const Tensor<Scalar>& kernel, Index cell) {
  const Shape& s = kernel.shape();
  if (s.size() != 4 || s[2] != 1 || s[3] != 1)
    throw std::invalid_argument("weight_heatmap: expected a 1x1 convolution kernel, got " + shape_string(s));
  if (cell < 1) throw std::invalid_argument("weight_heatmap: cell size must be positive");
  Heatmap h;
  h.rows = s[0];
  h.cols = s[1];
  h.cell = cell;
  h.max_abs = kernel.data().abs().maxCoeff();
  h.image.width = h.cols * cell;
  h.image.height = h.rows * cell;
  h.image.pixels.resize(static_cast<std::size_t>(3 * h.image.width * h.image.height));
  for (Index r = 0; r < h.rows; ++r)
    for (Index c = 0; c < h.cols; ++c) {
      const auto rgb = heatmap_colour(static_cast<double>(kernel[r * h.cols + c]), h.max_abs);
      for (Index y = r * cell; y < (r + 1) * cell; ++y)
        for (Index x = c * cell; x < (c + 1) * cell; ++x) std::copy(rgb.begin(), rgb.end(), h.image.at(x, y));
    }
  std::ostringstream legend;
  legend.precision(9);
  legend << "heatmap rows=" << h.rows << " (output channels) cols=" << h.cols << " (input channels) cell=" << cell
         << " max_abs=" << h.max_abs;
  h.image.comments = {legend.str(), "green=positive blue=negative white=zero intensity=|w|/max_abs"};
  return h;
}

template <typename Scalar>
Heatmap weight_heatmap(const NetworkGraph<Scalar>& graph, const std::string& layer_id, Index cell) {
  const LayerInfo& info = graph.layer(layer_id);
  if (info.kind != LayerKind::conv) throw std::invalid_argument("weight_heatmap: " + layer_id + " is not a convolution");
  return weight_heatmap(graph.parameter(layer_id + ".weight").var.value(), cell);
}

HeatmapCell decode_heatmap_cell(const Heatmap& h, Index row, Index col) {
  if (row < 0 || row >= h.rows || col < 0 || col >= h.cols) throw std::out_of_range("decode_heatmap_cell");
  return decode_heatmap_colour(h.image.at(col * h.cell + h.cell / 2, row * h.cell + h.cell / 2));
}

// ---- activation maximization ------------------------------------------------

namespace {

template <typename Scalar>
Tensor<Scalar> rescale01(const Tensor<Scalar>& t) {
  Tensor<Scalar> out = t;
  const Scalar lo = t.data().minCoeff(), hi = t.data().maxCoeff();
  if (hi - lo <= Scalar(0))
    out.data().setConstant(Scalar(0.5));
  else
    out.data() = (t.data() - lo) / (hi - lo);
  return out;
}

}  // namespace

template <typename Scalar>
AscentResult<Scalar> activation_maximize(const FeatureFn<Scalar>& feature, const Shape& image_shape, Index channel,
                                         const AscentConfig& config) {
  if (config.steps < 1 || config.lambda < 0 || config.step_size <= 0)
    throw std::invalid_argument("activation_maximize: need steps >= 1, lambda >= 0 and a positive step size");
  if (image_shape.size() != 4 || image_shape[0] != 1)
    throw std::invalid_argument("activation_maximize: image shape must be [1,C,H,W], got " + shape_string(image_shape));

  // J(I) and optionally dJ/dI.
  auto evaluate = [&](const Tensor<Scalar>& image, Tensor<Scalar>* grad) {
    Tape<Scalar> tape(grad != nullptr);
    auto x = Var<Scalar>::leaf(image, grad != nullptr);
    auto act = feature(tape, x);
    const Index channels = act.shape().at(1);
    if (channel < 0 || channel >= channels)
      throw std::invalid_argument("activation_maximize: channel " + std::to_string(channel) + " out of range [0," +
                                  std::to_string(channels) + ")");
    if (act.shape().size() == 2) act = reshape(tape, act, {act.shape()[0], channels, 1, 1});
    auto objective = add(tape, channel_mean(tape, act, channel), scale(tape, sum_squares(tape, x), static_cast<Scalar>(-config.lambda)));
    if (grad) {
      tape.backward(objective);
      *grad = x.grad();
    }
    return static_cast<double>(objective.value()[0]);
  };

  Rng rng = derive_rng({config.seed, 0x41534e});
  std::normal_distribution<double> noise(0.0, config.init_scale);
  AscentResult<Scalar> r;
  r.image = Tensor<Scalar>(image_shape);
  for (Index i = 0; i < r.image.size(); ++i) r.image[i] = static_cast<Scalar>(noise(rng));

  Tensor<Scalar> grad;
  double current = evaluate(r.image, &grad);
  r.objective.push_back(current);
  for (Index step = 0; step < config.steps; ++step) {
    if (!std::isfinite(current) || !grad.data().allFinite())
      throw std::runtime_error("activation_maximize: non-finite objective or gradient at step " + std::to_string(step));
    double eta = config.step_size;
    bool accepted = false;
    for (int h = 0; h <= config.max_halvings && !accepted; ++h, eta /= 2) {
      Tensor<Scalar> candidate = r.image;
      candidate.data() += static_cast<Scalar>(eta) * grad.data();
      const double value = evaluate(candidate, nullptr);
      if (std::isfinite(value) && value >= current) {
        r.image = std::move(candidate);
        current = evaluate(r.image, &grad);
        accepted = true;
      }
    }
    if (!accepted) break;
    r.objective.push_back(current);
    ++r.steps_taken;
  }
  Shape chw(image_shape.begin() + 1, image_shape.end());
  r.display = rescale01(r.image.reshaped(chw));
  return r;
}

template <typename Scalar>
AscentResult<Scalar> activation_maximize(NetworkGraph<Scalar>& graph, const std::string& layer_id, Index channel,
                                         const AscentConfig& config) {
  graph.layer(layer_id);
  const auto& spec = graph.spec();
  FeatureFn<Scalar> fn = [&](Tape<Scalar>& tape, const Var<Scalar>& x) {
    Rng unused(0);
    return graph.forward_to(tape, x, layer_id, Mode::infer, unused);
  };
  return activation_maximize(fn, {1, spec.input_channels, spec.input_size, spec.input_size}, channel, config);
}

// ---- feature maps -----------------------------------------------------------

Eigen::MatrixXd colour_projection(Index channels, std::uint64_t seed) {
  if (channels < 1) throw std::invalid_argument("colour_projection: need at least one channel");
  if (channels == 3) return Eigen::MatrixXd::Identity(3, 3);
  Rng rng = derive_rng({seed, 0x524742, static_cast<std::uint64_t>(channels)});
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd p(3, channels);
  for (Index r = 0; r < 3; ++r)
    for (Index c = 0; c < channels; ++c) p(r, c) = gauss(rng);
  p.rowwise().normalize();
  return p;
}

template <typename Scalar>
Tensor<double> feature_map_colours(const Tensor<Scalar>& features, std::uint64_t seed) {
  if (features.rank() != 3) throw std::invalid_argument("feature_map_rgb: expected [C,H,W], got " + shape_string(features.shape()));
  const Index c = features.dim(0), hw = features.dim(1) * features.dim(2);
  const Eigen::MatrixXd proj = colour_projection(c, seed);
  const Eigen::MatrixXd f =
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(features.ptr(), c, hw)
          .template cast<double>();
  Tensor<double> out({3, features.dim(1), features.dim(2)});
  out.matrix(3, hw) = proj * f;
  return rescale01(out);
}

RgbImage to_rgb_image(const Tensor<double>& planes) {
  if (planes.rank() != 3 || planes.dim(0) != 3) throw std::invalid_argument("to_rgb_image: expected [3,H,W]");
  RgbImage img;
  img.height = planes.dim(1);
  img.width = planes.dim(2);
  const Index hw = img.width * img.height;
  img.pixels.resize(static_cast<std::size_t>(3 * hw));
  for (Index k = 0; k < hw; ++k)
    for (Index ch = 0; ch < 3; ++ch)
      img.pixels[static_cast<std::size_t>(3 * k + ch)] =
          static_cast<std::uint8_t>(std::lround(std::clamp(planes[ch * hw + k], 0.0, 1.0) * 255.0));
  return img;
}

template <typename Scalar>
RgbImage feature_map_rgb(const Tensor<Scalar>& features, std::uint64_t seed) {
  return to_rgb_image(feature_map_colours(features, seed));
}

#define XCNN_INSTANTIATE_INTROSPECT(S)                                                                               \
  template Heatmap weight_heatmap(const Tensor<S>&, Index);                                                          \
  template Heatmap weight_heatmap(const NetworkGraph<S>&, const std::string&, Index);                                \
  template AscentResult<S> activation_maximize(const FeatureFn<S>&, const Shape&, Index, const AscentConfig&);       \
  template AscentResult<S> activation_maximize(NetworkGraph<S>&, const std::string&, Index, const AscentConfig&);    \
  template Tensor<double> feature_map_colours(const Tensor<S>&, std::uint64_t);                                      \
  template RgbImage feature_map_rgb(const Tensor<S>&, std::uint64_t);

XCNN_INSTANTIATE_INTROSPECT(float)
XCNN_INSTANTIATE_INTROSPECT(double)

}  // namespace xcnn
