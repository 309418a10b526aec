#pragma once

#include "xcnn/network.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace xcnn {

/// 8-bit RGB raster, row-major, interleaved. Comments become `#` lines in the
/// PPM header.
struct RgbImage {
  Index width = 0;
  Index height = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<std::string> comments;

  std::uint8_t* at(Index x, Index y) { return pixels.data() + 3 * (y * width + x); }
  const std::uint8_t* at(Index x, Index y) const { return pixels.data() + 3 * (y * width + x); }
};

void write_ppm(const std::string& path, const RgbImage& image);
RgbImage read_ppm(const std::string& path);

/// One cell per (output channel, input channel) of a 1x1 convolution. Green
/// is positive, blue negative, white zero; saturation grows with |w|/max|w|.
struct Heatmap {
  RgbImage image;
  Index rows = 0;
  Index cols = 0;
  Index cell = 16;
  double max_abs = 0.0;
};

struct HeatmapCell {
  int sign = 0;
  double magnitude = 0.0;  // |w| / max|w|
};

std::array<std::uint8_t, 3> heatmap_colour(double w, double max_abs);
HeatmapCell decode_heatmap_colour(const std::uint8_t* rgb);

template <typename Scalar>
Heatmap weight_heatmap(const Tensor<Scalar>& kernel, Index cell = 16);

template <typename Scalar>
Heatmap weight_heatmap(const NetworkGraph<Scalar>& graph, const std::string& layer_id, Index cell = 16);

HeatmapCell decode_heatmap_cell(const Heatmap& heatmap, Index row, Index col);

struct AscentConfig {
  double lambda = 0.05;
  Index steps = 200;
  double step_size = 1.0;
  double init_scale = 0.1;
  std::uint64_t seed = 0;
  int max_halvings = 30;
};

template <typename Scalar>
struct AscentResult {
  Tensor<Scalar> image;    // final input, [1,C,H,W]
  Tensor<Scalar> display;  // [C,H,W] min-max rescaled to [0,1]
  std::vector<double> objective;  // value before the first step and after each accepted one
  Index steps_taken = 0;
};

/// Maps an input image [1,C,H,W] to a layer output [1,F,...] on the tape.
template <typename Scalar>
using FeatureFn = std::function<Var<Scalar>(Tape<Scalar>&, const Var<Scalar>&)>;

/// Gradient ascent on mean(channel activation) - lambda * ||I||^2 from seeded
/// white noise. Each step starts at `step_size` and halves until the objective
/// does not decrease; ascent stops early when no halving helps.
template <typename Scalar>
AscentResult<Scalar> activation_maximize(const FeatureFn<Scalar>& feature, const Shape& image_shape, Index channel,
                                         const AscentConfig& config);

/// Same, on a layer of a network evaluated in infer mode.
template <typename Scalar>
AscentResult<Scalar> activation_maximize(NetworkGraph<Scalar>& graph, const std::string& layer_id, Index channel,
                                         const AscentConfig& config);

/// Row-normalized C -> 3 projection; the identity when C == 3.
Eigen::MatrixXd colour_projection(Index channels, std::uint64_t seed = 0);

/// Projects [C,H,W] features to RGB, then rescales all three channels jointly
/// to [0,1]. Constant input maps to mid-grey. Returns [3,H,W].
template <typename Scalar>
Tensor<double> feature_map_colours(const Tensor<Scalar>& features, std::uint64_t seed = 0);

template <typename Scalar>
RgbImage feature_map_rgb(const Tensor<Scalar>& features, std::uint64_t seed = 0);

/// [3,H,W] values in [0,1] to an 8-bit image.
RgbImage to_rgb_image(const Tensor<double>& planes);

}  // namespace xcnn
