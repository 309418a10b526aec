#include "xcnn/trainer.hpp"

#include "xcnn/harness.hpp"
#include "xcnn/ops.hpp"
#include "xcnn/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace xcnn {

namespace {

// Stream tags for derive_rng.
constexpr std::uint64_t tag_init = 1, tag_shuffle = 2, tag_augment = 3, tag_dropout = 4;

bool is_fitnet(std::string_view preset) { return preset.find("fitnet") != std::string_view::npos; }

}  // namespace

TrainConfig TrainConfig::regime(std::string_view preset) {
  TrainConfig c;
  c.preset = std::string(preset);
  if (is_fitnet(preset)) {
    c.epochs = 230;
    c.batch_size = 128;
    c.l2_lambda = 0.0005;
  }
  return c;
}

NetworkGraph<float> build_for_training(const TrainConfig& config, Index num_classes) {
  Rng rng = derive_rng({config.seed, tag_init});
  if (!config.config_path.empty()) {
    ArchitectureSpec spec = load_config(config.config_path);
    spec.num_classes = num_classes;
    return NetworkGraph<float>::build(spec, rng);
  }
  return build_preset<float>(config.preset, num_classes, rng, config.preset_options);
}

Tensor<float> gather_images(const Dataset& data, std::span<const Index> indices) {
  Shape shape = data.images.shape();
  const Index per = data.images.size() / std::max<Index>(shape[0], 1);
  shape[0] = static_cast<Index>(indices.size());
  Tensor<float> out(shape);
  for (std::size_t j = 0; j < indices.size(); ++j)
    out.data().segment(static_cast<Index>(j) * per, per) = data.images.data().segment(indices[j] * per, per);
  return out;
}

double batch_loss(NetworkGraph<float>& graph, const Tensor<float>& images, std::span<const int> labels,
                  double l2_lambda) {
  Tape<float> tape(false);
  Rng unused(0);
  auto logits = graph.forward(tape, Var<float>::leaf(images), Mode::infer, unused);
  double loss = softmax_ce(tape, logits, labels).loss.value()[0];
  if (l2_lambda > 0) loss += l2_penalty(tape, std::span<const Var<float>>(graph.weights()), l2_lambda).value()[0];
  return loss;
}

TrainResult train(NetworkGraph<float>& graph, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  if (train_set.size() == 0) throw std::invalid_argument("train: training set is empty");
  if (config.batch_size < 1 || config.epochs < 0)
    throw std::invalid_argument("train: batch size must be positive and epochs non-negative");
  const auto start = std::chrono::steady_clock::now();

  Dataset test_prefix;
  const Dataset* eval = &test_set;
  if (config.test_subset > 0 && config.test_subset < test_set.size()) {
    std::vector<Index> first(static_cast<std::size_t>(config.test_subset));
    std::iota(first.begin(), first.end(), Index{0});
    test_prefix = select(test_set, first);
    eval = &test_prefix;
  }

  auto params = graph.trainable();
  const auto weights = graph.weights();
  AdamState<float> adam;
  adam.config.learning_rate = config.learning_rate;

  TrainResult result;
  result.params = count_params(graph);
  const Index n = train_set.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::vector<int> labels;

  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    Rng shuffle_rng = derive_rng({config.seed, tag_shuffle, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (Index begin = 0, batch = 0; begin < n; begin += config.batch_size, ++batch) {
      const Index end = std::min(n, begin + config.batch_size);
      std::span<const Index> idx(order.data() + begin, static_cast<std::size_t>(end - begin));
      Tensor<float> images = gather_images(train_set, idx);
      labels.clear();
      for (Index i : idx) labels.push_back(train_set.labels[static_cast<std::size_t>(i)]);
      const auto e = static_cast<std::uint64_t>(epoch), b = static_cast<std::uint64_t>(batch);
      if (config.augment) {
        Rng aug = derive_rng({config.seed, tag_augment, e, b});
        images = augment(images, config.augment_config, aug);
      }

      Rng drop = derive_rng({config.seed, tag_dropout, e, b});
      Tape<float> tape;
      auto logits = graph.forward(tape, Var<float>::leaf(std::move(images)), Mode::train, drop);
      Var<float> loss = softmax_ce(tape, logits, labels).loss;
      if (config.l2_lambda > 0)
        loss = add(tape, loss, l2_penalty(tape, std::span<const Var<float>>(weights), config.l2_lambda));
      const double value = loss.value()[0];
      if (!std::isfinite(value))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batch));
      loss_sum += value * static_cast<double>(end - begin);

      graph.zero_grad();
      tape.backward(loss);
      adam_step(params, adam);
    }

    EpochRecord rec{epoch, loss_sum / static_cast<double>(n), accuracy(graph, *eval)};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  result.final_accuracy = result.history.empty() ? accuracy(graph, *eval) : result.history.back().test_accuracy;
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.precision(17);
  out << "epoch,train_loss,test_accuracy\n";
  for (const auto& r : history) out << r.epoch << ',' << r.train_loss << ',' << r.test_accuracy << '\n';
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

}  // namespace xcnn
