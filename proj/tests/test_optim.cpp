#include <doctest.h>

#include "oracles.hpp"
#include "xcnn/checkpoint.hpp"
#include "xcnn/optim.hpp"
#include "xcnn/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

using namespace xcnn;
namespace fs = std::filesystem;

namespace {

const char* small_net = R"(
name = small
classes = 10
input_size = 8
input_channels = 3

[superlayer Y]
channels = 0
block = conv:3:6 relu maxpool:2
block = conv:3:6 bn relu gmaxpool

[superlayer UV]
channels = 1,2
block = conv:3:4 relu maxpool:2
block = conv:3:4 relu gmaxpool

[cross 0]
Y -> Y = identity
UV -> UV = identity
Y -> UV = conv:1:2 relu
UV -> Y = conv:1:2 relu

[tail]
layers = flatten dense:16 relu dropout:0.25 dense:classes softmax
)";

struct Fixture {
  std::string config_path;
  NormalizedPair data;

  Fixture() {
    const auto dir = fs::temp_directory_path() / "xcnn_test_optim";
    fs::create_directories(dir);
    config_path = (dir / "small.net").string();
    std::ofstream(config_path) << small_net;
    SyntheticConfig sc;
    sc.train = 96;
    sc.test = 48;
    sc.size = 8;
    sc.signal = 0.3;
    sc.seed = 5;
    auto [train, test] = synthetic_cifar(sc);
    data = normalize_input(rgb_to_yuv(std::move(train)), rgb_to_yuv(std::move(test)));
  }

  TrainConfig config(Index epochs = 2) const {
    TrainConfig c;
    c.config_path = config_path;
    c.epochs = epochs;
    c.batch_size = 16;
    c.learning_rate = 0.01;
    c.seed = 3;
    return c;
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("xavier bound and samples") {
  CHECK(xavier_bound({512, 10}) == doctest::Approx(0.10721).epsilon(1e-4));
  CHECK(xavier_bound({64, 32, 3, 3}) == doctest::Approx(std::sqrt(6.0 / (9 * 32 + 9 * 64))));
  CHECK_THROWS_AS(xavier_bound({3}), std::invalid_argument);

  Rng rng = derive_rng({1});
  const auto w = xavier_init<double>({512, 10}, rng);
  const double b = xavier_bound({512, 10});
  CHECK((w.data().abs() <= b).all());
  // Uniform on [-b, b]: mean 0 with sd b/sqrt(3n), variance b^2/3.
  const double n = static_cast<double>(w.size());
  CHECK(std::abs(w.data().mean()) < 4 * b / std::sqrt(3 * n));
  const double var = w.data().square().mean();
  CHECK(std::abs(var - b * b / 3) < 0.05 * b * b / 3);
}

TEST_CASE("adam") {
  auto scalar = [](double x, bool grad) {
    auto v = Var<double>::leaf(Tensor<double>({1}, {x}), true);
    if (grad) v.accumulate_grad(Tensor<double>({1}, {2 * x}));
    return v;
  };

  SUBCASE("zero gradient leaves parameters in place") {
    std::vector<Var<double>> ps{Var<double>::leaf(Tensor<double>({2}, {1, -2}), true)};
    AdamState<double> st;
    for (int i = 0; i < 5; ++i) adam_step(ps, st);
    CHECK(ps[0].value()[0] == 1);
    CHECK(ps[0].value()[1] == -2);
  }
  SUBCASE("first step moves each coordinate by lr against its gradient sign") {
    auto p = Var<double>::leaf(Tensor<double>({3}, {0, 0, 0}), true);
    p.accumulate_grad(Tensor<double>({3}, {5, -0.001, 300}));
    std::vector<Var<double>> ps{p};
    AdamState<double> st;
    adam_step(ps, st);
    CHECK(p.value()[0] == doctest::Approx(-0.001).epsilon(1e-6));
    CHECK(p.value()[1] == doctest::Approx(0.001).epsilon(1e-4));
    CHECK(p.value()[2] == doctest::Approx(-0.001).epsilon(1e-6));
  }
  SUBCASE("matches the scalar recurrence on x^2") {
    double x = 1, m = 0, v = 0;
    auto p = scalar(1, false);
    std::vector<Var<double>> ps{p};
    AdamState<double> st;
    st.config.learning_rate = 0.1;
    std::vector<double> path;
    for (int t = 1; t <= 300; ++t) {
      p.zero_grad();
      p.accumulate_grad(Tensor<double>({1}, {2 * p.value()[0]}));
      adam_step(ps, st);
      const double g = 2 * x;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      REQUIRE(p.value()[0] == doctest::Approx(x).epsilon(1e-12));
      path.push_back(std::abs(x));
    }
    // Steady descent at first, then a damped oscillation around 0.
    for (int i = 0; i < 9; ++i) CHECK(path[static_cast<std::size_t>(i) + 1] < path[static_cast<std::size_t>(i)]);
    double previous = std::numeric_limits<double>::infinity();
    for (std::size_t w = 0; w < path.size(); w += 50) {
      const double peak = *std::max_element(path.begin() + static_cast<long>(w), path.begin() + static_cast<long>(w) + 50);
      CHECK(peak < previous);
      previous = peak;
    }
    CHECK(path.back() < 0.05);
  }
  SUBCASE("updates ignore the gradient scale") {
    auto a = Var<double>::leaf(Tensor<double>({2}, {0.3, -0.7}), true);
    auto b = Var<double>::leaf(Tensor<double>({2}, {0.3, -0.7}), true);
    std::vector<Var<double>> pa{a}, pb{b};
    AdamState<double> sa, sb;
    for (int i = 0; i < 20; ++i) {
      a.zero_grad();
      b.zero_grad();
      Tensor<double> g({2}, {std::sin(i + 1.0), std::cos(i * 0.5)});
      a.accumulate_grad(g);
      g.data() *= 1000;
      b.accumulate_grad(g);
      adam_step(pa, sa);
      adam_step(pb, sb);
    }
    CHECK(a.value().data().isApprox(b.value().data(), 1e-6));
  }
}

TEST_CASE("training") {
  Fixture fx;
  const auto& train_set = fx.data.train;
  const auto& test_set = fx.data.test;

  SUBCASE("regimes") {
    CHECK(TrainConfig::regime("kerasnet").epochs == 200);
    CHECK(TrainConfig::regime("x-kerasnet").batch_size == 32);
    CHECK(TrainConfig::regime("x-kerasnet").l2_lambda == 0.0);
    CHECK(TrainConfig::regime("fitnet4").epochs == 230);
    CHECK(TrainConfig::regime("x-fitnet4").batch_size == 128);
    CHECK(TrainConfig::regime("x-fitnet4").l2_lambda == 0.0005);
  }
  SUBCASE("zero learning rate leaves every parameter bit-identical") {
    auto cfg = fx.config(1);
    cfg.learning_rate = 0;
    cfg.l2_lambda = 0.01;
    auto g = build_for_training(cfg, 10);
    std::vector<Tensor<float>> before;
    for (const auto& p : g.parameters()) before.push_back(p.var.value());
    train(g, train_set, test_set, cfg);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK((g.parameters()[i].var.value().data() == before[i].data()).all());
  }
  SUBCASE("same seed gives byte-identical checkpoints") {
    const auto dir = fs::temp_directory_path() / "xcnn_test_optim";
    auto cfg = fx.config(2);
    cfg.augment = true;
    std::vector<std::string> bytes;
    for (int run = 0; run < 2; ++run) {
      auto g = build_for_training(cfg, 10);
      train(g, train_set, test_set, cfg);
      const auto path = (dir / ("run" + std::to_string(run) + ".ckpt")).string();
      save_checkpoint(path, g);
      bytes.push_back(slurp(path));
    }
    CHECK(bytes[0] == bytes[1]);
    auto cfg2 = cfg;
    cfg2.seed = 4;
    auto g = build_for_training(cfg2, 10);
    train(g, train_set, test_set, cfg2);
    save_checkpoint((dir / "other.ckpt").string(), g);
    CHECK(slurp((dir / "other.ckpt").string()) != bytes[0]);
  }
  SUBCASE("loss falls on learnable data") {
    auto cfg = fx.config(6);
    auto g = build_for_training(cfg, 10);
    std::vector<EpochRecord> seen;
    const auto r = train(g, train_set, test_set, cfg, [&](const EpochRecord& e) { seen.push_back(e); });
    REQUIRE(r.history.size() == 6);
    CHECK(seen.size() == 6);
    CHECK(r.history.back().train_loss < r.history.front().train_loss);
    CHECK(r.final_accuracy == r.history.back().test_accuracy);
    CHECK(r.params == count_params(g));
    for (const auto& e : r.history) {
      CHECK(std::isfinite(e.train_loss));
      CHECK(e.test_accuracy >= 0);
      CHECK(e.test_accuracy <= 1);
    }
  }
  SUBCASE("test_subset evaluates a prefix") {
    auto cfg = fx.config(1);
    cfg.test_subset = 7;
    auto g = build_for_training(cfg, 10);
    const double acc = train(g, train_set, test_set, cfg).final_accuracy;
    CHECK(std::abs(acc * 7 - std::round(acc * 7)) < 1e-9);
  }
  SUBCASE("an empty training set is rejected") {
    auto cfg = fx.config(1);
    auto g = build_for_training(cfg, 10);
    const std::vector<Index> none;
    CHECK_THROWS_AS(train(g, select(train_set, none), test_set, cfg), std::invalid_argument);
  }
  SUBCASE("a non-finite loss names the epoch and batch") {
    auto cfg = fx.config(1);
    auto g = build_for_training(cfg, 10);
    auto bad = train_set;
    bad.images[0] = std::numeric_limits<float>::quiet_NaN();
    cfg.augment = false;
    try {
      // Shuffling puts image 0 in some batch; the message must say which.
      train(g, bad, test_set, cfg);
      FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("non-finite loss at epoch 1, batch") != std::string::npos);
    }
  }
  SUBCASE("history csv") {
    const auto path = (fs::temp_directory_path() / "xcnn_test_optim" / "history.csv").string();
    write_history_csv(path, {{1, 2.25, 0.125}, {2, 2.0, 0.5}});
    std::ifstream in(path);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "epoch,train_loss,test_accuracy");
    CHECK(row.starts_with("1,2.25,0.125"));
  }
  fs::remove_all(fs::temp_directory_path() / "xcnn_test_optim");
}

TEST_CASE("a fresh ten-class network starts near chance loss") {
  SyntheticConfig sc;
  sc.train = 32;
  sc.test = 1;
  auto [train, test] = synthetic_cifar(sc);
  auto data = normalize_input(rgb_to_yuv(std::move(train)), rgb_to_yuv(std::move(test)));
  for (const std::string name : {"kerasnet", "x-kerasnet"}) {
    CAPTURE(name);
    TrainConfig cfg = TrainConfig::regime(name);
    auto g = build_for_training(cfg, 10);
    const double loss = batch_loss(g, data.train.images, data.train.labels, 0.0);
    CHECK(loss >= 2.0);
    CHECK(loss <= 2.6);
  }
}
