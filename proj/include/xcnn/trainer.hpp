#pragma once

#include "xcnn/data.hpp"
#include "xcnn/network.hpp"

#include <functional>
#include <string>
#include <vector>

namespace xcnn {

struct TrainConfig {
  std::string preset = "x-kerasnet";
  std::string config_path;  // declarative architecture file; overrides `preset`
  PresetOptions preset_options;
  Index epochs = 200;
  Index batch_size = 32;
  double l2_lambda = 0.0;
  double learning_rate = 0.001;
  bool augment = false;
  AugmentConfig augment_config;
  std::uint64_t seed = 0;
  Index test_subset = 0;  // evaluate on the first K test images; 0 = all

  /// The published regime for a preset family: KerasNet 200 epochs at batch 32,
  /// FitNet4 230 epochs at batch 128 with L2 0.0005.
  static TrainConfig regime(std::string_view preset);
};

struct EpochRecord {
  Index epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  double final_accuracy = 0.0;
  double wall_seconds = 0.0;
  Index params = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Fresh network for `config` with weights drawn from a seed-derived stream.
NetworkGraph<float> build_for_training(const TrainConfig& config, Index num_classes);

/// Images [n,C,H,W] of `data` at `indices`.
Tensor<float> gather_images(const Dataset& data, std::span<const Index> indices);

/// Mean softmax cross-entropy plus L2 over the given batch, without updating.
double batch_loss(NetworkGraph<float>& graph, const Tensor<float>& images, std::span<const int> labels,
                  double l2_lambda);

/// Adam over shuffled mini-batches; test accuracy after every epoch. Inputs
/// are expected to be preprocessed already.
TrainResult train(NetworkGraph<float>& graph, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history);

}  // namespace xcnn
