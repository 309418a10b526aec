#pragma once

#include "xcnn/random.hpp"
#include "xcnn/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace xcnn {

enum class Colourspace { rgb, yuv };
enum class Split { train, test };
enum class Variant { cifar10, cifar100 };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
Index variant_classes(Variant v);

/// Labelled images in canonical (file) order. `pixels` keeps the source bytes,
/// channel-planar per image, so records can be re-serialized exactly.
struct Dataset {
  Tensor<float> images;  // [N,C,H,W]
  std::vector<int> labels;
  std::vector<int> coarse_labels;  // CIFAR-100 only
  std::vector<std::uint8_t> pixels;
  Colourspace colourspace = Colourspace::rgb;
  Split split = Split::train;
  Variant variant = Variant::cifar10;

  Index size() const { return static_cast<Index>(labels.size()); }
  Index num_classes() const { return variant_classes(variant); }
};

/// Record length in bytes: 3073 for CIFAR-10, 3074 for CIFAR-100.
Index cifar_record_bytes(Variant v);

/// Directory holding the binary batches: `dir` itself or its
/// cifar-10-batches-bin / cifar-100-binary child. Empty if neither has them.
std::string find_cifar_dir(const std::string& dir, Variant v);

/// `flag` if non-empty, else $DATA_DIR, else "".
std::string resolve_data_dir(const std::string& flag);

/// Loads the official binary distribution; pixels scaled to [0,1].
std::pair<Dataset, Dataset> load_cifar(const std::string& dir, Variant v);

/// Parses one batch file. Throws with the byte offset of a partial record.
Dataset read_cifar_file(const std::string& path, Variant v, Split split);

std::vector<std::uint8_t> serialize_record(const Dataset& data, Index i);

/// BT.601 luma with 0.492/0.877 chroma scaling, no offsets.
Dataset rgb_to_yuv(Dataset data);
void rgb_to_yuv_pixel(double r, double g, double b, double& y, double& u, double& v);

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // sqrt(max(var, eps))

  static constexpr double eps = 1e-5;
  Tensor<float> mean_tensor() const;
  Tensor<float> stddev_tensor() const;
};

NormalizationStats compute_normalization(const Dataset& train);
void apply_normalization(Dataset& data, const NormalizationStats& stats);

struct NormalizedPair {
  Dataset train;
  Dataset test;
  NormalizationStats stats;
};

/// Per-channel standardization of both splits using training statistics.
NormalizedPair normalize_input(Dataset train, Dataset test);

/// First ceil(p*N/100) examples; `stratified` takes that fraction of each class
/// instead, still in canonical order.
Dataset subset(const Dataset& data, double percent, bool stratified = false);

Dataset select(const Dataset& data, std::span<const Index> indices);

std::vector<Index> class_counts(const Dataset& data);

struct AugmentConfig {
  Index max_shift = 4;
  bool horizontal_flip = true;
};

/// Moves image content by (dx, dy) pixels (right, down), zero-filling.
Tensor<float> translate(const Tensor<float>& batch, Index dx, Index dy);
Tensor<float> flip_horizontal(const Tensor<float>& batch);

/// Per image: uniform shift in [-max_shift, max_shift]^2, then a flip with
/// probability 0.5.
Tensor<float> augment(const Tensor<float>& batch, const AugmentConfig& config, Rng& rng);

struct SyntheticConfig {
  Index train = 500;
  Index test = 200;
  Index size = 32;
  Variant variant = Variant::cifar10;
  double noise = 0.2;   // pixel std around mid-grey
  double signal = 0.0;  // amplitude of a per-class mean pattern
  std::uint64_t seed = 0;
};

/// Seeded Gaussian images with uniform labels, quantized to bytes like the
/// real files. With signal > 0 each class adds its own fixed pattern.
std::pair<Dataset, Dataset> synthetic_cifar(const SyntheticConfig& config);

/// Writes the pair in the official layout (data_batch_1..5.bin + test_batch.bin,
/// or train.bin + test.bin for CIFAR-100). Images must be 3x32x32.
void write_cifar(const std::string& dir, const Dataset& train, const Dataset& test);

}  // namespace xcnn
