#pragma once

#include "xcnn/tensor.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace xcnn {

enum class LayerKind {
  conv,
  relu,
  maxout,
  maxpool,
  global_maxpool,
  batchnorm,
  dropout,
  dense,
  flatten,
  concat,  // implicit merge point; never written inside a layer stack
  identity,
  softmax,
};

std::string_view kind_name(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::identity;
  Index units = 0;     // conv filters or dense width; 0 on dense means "num_classes"
  Index kernel = 0;    // conv kernel size
  Index padding = -1;  // conv padding; -1 means same, (kernel - 1) / 2
  Index pieces = 0;    // maxout
  Index window = 0;    // maxpool
  Index stride = 0;    // maxpool
  double rate = 0.0;   // dropout

  static LayerSpec conv(Index kernel, Index filters, Index padding = -1);
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec maxout(Index pieces);
  static LayerSpec maxpool(Index window, Index stride);
  static LayerSpec global_maxpool() { return {LayerKind::global_maxpool}; }
  static LayerSpec batchnorm() { return {LayerKind::batchnorm}; }
  static LayerSpec dropout(double rate);
  static LayerSpec dense(Index units);
  static LayerSpec classifier() { return dense(0); }
  static LayerSpec flatten() { return {LayerKind::flatten}; }
  static LayerSpec identity() { return {LayerKind::identity}; }
  static LayerSpec softmax() { return {LayerKind::softmax}; }

  Index effective_padding() const { return padding < 0 ? (kernel - 1) / 2 : padding; }
  bool trainable() const {
    return kind == LayerKind::conv || kind == LayerKind::dense || kind == LayerKind::batchnorm;
  }
  bool operator==(const LayerSpec&) const = default;
};

using LayerStack = std::vector<LayerSpec>;

/// One per-partition CNN. Blocks are separated by pooling points; cross
/// segments attach after a block index.
struct SuperlayerSpec {
  std::string name;
  std::vector<Index> input_channels;
  std::vector<LayerStack> blocks;
  bool operator==(const SuperlayerSpec&) const = default;
};

/// An edge inside a cross segment. An empty stack is the identity.
struct EdgeSpec {
  std::string from;
  std::string to;
  LayerStack layers;
  bool operator==(const EdgeSpec&) const = default;
};

struct CrossSegmentSpec {
  Index after_pool = 0;
  std::vector<EdgeSpec> self_edges;   // from == to, one per superlayer
  std::vector<EdgeSpec> cross_edges;  // from != to
  bool operator==(const CrossSegmentSpec&) const = default;
};

struct ArchitectureSpec {
  std::string name;
  Index num_classes = 10;
  Index input_size = 32;
  Index input_channels = 3;
  std::vector<SuperlayerSpec> superlayers;
  std::vector<CrossSegmentSpec> cross;
  LayerStack tail;  // receives the channel concatenation of every superlayer
  bool operator==(const ArchitectureSpec&) const = default;
};

/// Throws std::invalid_argument describing the first violated invariant.
void validate(const ArchitectureSpec& spec);

enum class BatchNormPlacement { after_activation, before_activation };
enum class CrossActivation { linear, maxout };

struct PresetOptions {
  Index num_classes = 10;
  Index input_size = 32;
  BatchNormPlacement batchnorm = BatchNormPlacement::after_activation;
  // FitNet4 cross-connection 1x1 layers; KerasNet always uses ReLU.
  CrossActivation fitnet_cross = CrossActivation::linear;
};

const std::vector<std::string>& preset_names();
bool is_preset(std::string_view name);

/// The four reference architectures: kerasnet, x-kerasnet, fitnet4, x-fitnet4.
ArchitectureSpec preset_spec(std::string_view name, const PresetOptions& options = {});

/// The baseline paired with a cross-modal preset (and vice versa).
std::string paired_preset(std::string_view name);
bool is_cross_modal(std::string_view name);

/// Plain-text declarative form (see README for the grammar).
ArchitectureSpec parse_config(std::string_view text);
std::string format_config(const ArchitectureSpec& spec);
ArchitectureSpec load_config(const std::string& path);

std::string format_layer(const LayerSpec& layer);
LayerSpec parse_layer(std::string_view token);

}  // namespace xcnn
