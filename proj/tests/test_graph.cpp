#include <doctest.h>

#include "oracles.hpp"
#include "xcnn/checkpoint.hpp"
#include "xcnn/grad_check.hpp"
#include "xcnn/network.hpp"
#include "xcnn/ops.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace xcnn;
using oracle::random_tensor;
namespace fs = std::filesystem;

namespace {

const char* tiny_config = R"(
name = tiny
classes = 3
input_size = 8
input_channels = 3

[superlayer A]
channels = 0
block = conv:3:4 relu maxpool:2
block = conv:3:4 bn relu gmaxpool

[superlayer B]
channels = 1,2
block = conv:3:2 relu maxpool:2
block = conv:3:2 relu gmaxpool

[cross 0]   # identity self edges plus a learned edge each way
A -> A = identity
B -> B = identity
A -> B = conv:1:2 relu
B -> A = conv:1:3 bn

[tail]
layers = flatten dense:6 relu dropout:0.3 dense:classes softmax
)";

NetworkGraph<double> tiny(std::uint64_t seed = 1) {
  Rng rng = derive_rng({seed});
  return NetworkGraph<double>::build(parse_config(tiny_config), rng);
}

template <typename S>
NetworkGraph<S> preset(const std::string& name, Index classes = 10, std::uint64_t seed = 0,
                       const PresetOptions& o = {}) {
  Rng rng = derive_rng({seed});
  return build_preset<S>(name, classes, rng, o);
}

Tensor<double> infer_to(NetworkGraph<double>& g, const Tensor<double>& x, const std::string& id) {
  Tape<double> t(false);
  Rng rng = derive_rng({0});
  return g.forward_to(t, Var<double>::leaf(x), id, Mode::infer, rng).value();
}

void zero_cross_weights(NetworkGraph<double>& g, std::size_t segment) {
  const std::string prefix = "x" + std::to_string(segment) + ".";
  for (auto& p : g.parameters()) {
    if (!p.name.starts_with(prefix)) continue;
    const auto dash = p.name.find('-');
    const bool self = p.name.substr(prefix.size(), dash - prefix.size()) ==
                      p.name.substr(dash + 1, p.name.find('.', dash) - dash - 1);
    if (!self && (p.role == ParamRole::weight || p.role == ParamRole::bias)) p.var.value().set_zero();
  }
}

}  // namespace

TEST_CASE("parameter counts match the closed form") {
  CHECK(count_params(preset<float>("kerasnet")) == oracle::kerasnet());
  CHECK(count_params(preset<float>("x-kerasnet")) == oracle::x_kerasnet());
  CHECK(count_params(preset<float>("fitnet4")) == oracle::fitnet4());
  CHECK(count_params(preset<float>("x-fitnet4")) == oracle::x_fitnet4());
  PresetOptions maxout_cross;
  maxout_cross.fitnet_cross = CrossActivation::maxout;
  CHECK(count_params(preset<float>("x-fitnet4", 10, 0, maxout_cross)) == oracle::x_fitnet4(10, true));
  CHECK(count_params(preset<float>("kerasnet", 100)) == oracle::kerasnet(100));
  CHECK(count_params(preset<float>("x-fitnet4", 100)) == oracle::x_fitnet4(100));
  // The hand-derived totals themselves.
  CHECK(oracle::kerasnet() == 4460106);
  CHECK(oracle::x_kerasnet() == 4337194);
  CHECK(oracle::fitnet4() == 2745982);
  CHECK(oracle::x_fitnet4() == 2676446);
  CHECK(oracle::x_fitnet4(10, true) == 2688638);
}

TEST_CASE("parameter counts sit near the published sizes") {
  const std::map<std::string, double> published{
      {"kerasnet", 4.46e6}, {"x-kerasnet", 4.37e6}, {"fitnet4", 2.75e6}, {"x-fitnet4", 2.72e6}};
  for (const auto& [name, size] : published) {
    CAPTURE(name);
    const double n = static_cast<double>(count_params(preset<float>(name)));
    CHECK(std::abs(n - size) / size < 0.02);
  }
  for (const std::string base : {"kerasnet", "fitnet4"}) {
    const double a = static_cast<double>(count_params(preset<float>(base)));
    const double b = static_cast<double>(count_params(preset<float>("x-" + base)));
    CHECK(std::abs(a - b) / a <= 0.03);
  }
  // Counting the FitNet4 widths as pre-maxout unit counts lands far away.
  CHECK(std::abs(static_cast<double>(oracle::fitnet4(10, false)) - 2.75e6) / 2.75e6 > 0.5);
}

TEST_CASE("layer bookkeeping") {
  auto g = preset<float>("kerasnet");
  CHECK(g.layer("YUV.b0.0.conv").params == 1792);
  CHECK(g.layer("tail.4.dense").params == 5130);
  CHECK(g.layer("tail.4.dense").output == Shape{10});
  CHECK(g.layer("tail.0.flatten").output == Shape{8192});
  CHECK_THROWS_AS(g.layer("nope"), std::invalid_argument);
  CHECK_THROWS_AS(g.parameter("nope.weight"), std::invalid_argument);
  Index total = 0;
  for (const auto& l : g.layers()) total += l.params;
  CHECK(total == count_params(g));
  CHECK(g.parameter("tail.1.dense.weight").var.shape() == Shape{8192, 512});
  CHECK(g.parameter("tail.1.dense.bias").var.value().data().isZero());
}

TEST_CASE("unknown preset names list the valid ones") {
  Rng rng = derive_rng({0});
  try {
    build_preset<float>("resnet", 10, rng);
    FAIL("expected a throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("x-fitnet4") != std::string::npos);
  }
}

TEST_CASE("every preset maps a zero image to a probability vector") {
  for (const auto& name : preset_names()) {
    CAPTURE(name);
    auto g = preset<float>(name);
    const auto probs = softmax(g.predict_logits(Tensor<float>({1, 3, 32, 32})));
    CHECK(probs.shape() == Shape{1, 10});
    CHECK((probs.data() >= 0).all());
    CHECK(std::abs(probs.data().sum() - 1.0f) < 1e-5f);
  }
}

TEST_CASE("cross_segment on X-KerasNet") {
  auto g = preset<double>("x-kerasnet");
  Tape<double> t;
  Rng rng = derive_rng({1});
  std::map<std::string, Var<double>> f{{"Y", Var<double>::leaf(random_tensor<double>({2, 32, 16, 16}, 2, 0, 1))},
                                       {"U", Var<double>::leaf(random_tensor<double>({2, 16, 16, 16}, 3, 0, 1))},
                                       {"V", Var<double>::leaf(random_tensor<double>({2, 16, 16, 16}, 4, 0, 1))}};
  auto out = g.cross_segment(t, 0, f, Mode::infer, rng);
  CHECK(out.at("Y").shape() == Shape{2, 64, 16, 16});
  CHECK(out.at("U").shape() == Shape{2, 48, 16, 16});
  CHECK(out.at("V").shape() == Shape{2, 48, 16, 16});

  SUBCASE("identity self edges pass their input through first") {
    for (const auto& [name, width] : std::vector<std::pair<std::string, Index>>{{"Y", 32}, {"U", 16}}) {
      const auto& in = f.at(name).value();
      const auto& o = out.at(name).value();
      for (Index n = 0; n < 2; ++n)
        for (Index c = 0; c < width; ++c)
          for (Index i = 0; i < 256; i += 17) CHECK(o[(n * o.dim(1) + c) * 256 + i] == in[(n * width + c) * 256 + i]);
    }
  }
  SUBCASE("incoming edges follow in superlayer order") {
    // Channels 32..47 of Y come from U, 48..63 from V: compare against the edge layers themselves.
    const auto u_to_y = infer_to(g, Tensor<double>({1, 3, 32, 32}), "x0.U-Y.1.relu");
    CHECK(u_to_y.shape() == Shape{1, 16, 16, 16});
    const auto& w = g.parameter("x0.U-Y.0.conv.weight").var.value();
    const auto& b = g.parameter("x0.U-Y.0.conv.bias").var.value();
    const auto expect = oracle::conv2d(f.at("U").value(), w, b, 1, 0);
    const auto& o = out.at("Y").value();
    for (Index c = 0; c < 16; ++c)
      for (Index i = 0; i < 256; i += 13)
        CHECK(o[(1 * 64 + 32 + c) * 256 + i] == doctest::Approx(std::max(0.0, expect[(16 + c) * 256 + i])));
  }
  SUBCASE("zero inputs give zero outputs") {
    std::map<std::string, Var<double>> z{{"Y", Var<double>::leaf(Tensor<double>({1, 32, 16, 16}))},
                                         {"U", Var<double>::leaf(Tensor<double>({1, 16, 16, 16}))},
                                         {"V", Var<double>::leaf(Tensor<double>({1, 16, 16, 16}))}};
    for (const auto& [name, v] : g.cross_segment(t, 0, z, Mode::infer, rng)) CHECK(v.value().data().isZero());
  }
  SUBCASE("spatial mismatch is rejected") {
    auto bad = f;
    bad["U"] = Var<double>::leaf(Tensor<double>({2, 16, 8, 8}));
    CHECK_THROWS_AS(g.cross_segment(t, 0, bad, Mode::infer, rng), std::invalid_argument);
    CHECK_THROWS_AS(g.cross_segment(t, 1, f, Mode::infer, rng), std::invalid_argument);
    f.erase("V");
    CHECK_THROWS_AS(g.cross_segment(t, 0, f, Mode::infer, rng), std::invalid_argument);
  }
}

TEST_CASE("merge widths of X-FitNet4") {
  auto g = preset<float>("x-fitnet4");
  CHECK(g.layer("x0.Y.concat").output == Shape{60, 16, 16});
  CHECK(g.layer("x0.U.concat").output == Shape{30, 16, 16});
  CHECK(g.layer("x1.Y.concat").output == Shape{96, 8, 8});
  CHECK(g.layer("x1.U.concat").output == Shape{48, 8, 8});
  CHECK(g.parameter("x0.Y-U.0.conv.weight").var.shape() == Shape{12, 36, 1, 1});
}

TEST_CASE("inference is deterministic and per-sample") {
  auto g = tiny();
  const auto x = random_tensor<double>({1, 3, 8, 8}, 5);
  const auto a = g.predict_logits(x), b = g.predict_logits(x);
  CHECK(a.data().isApprox(b.data(), 0.0));
  Tensor<double> twice({2, 3, 8, 8});
  twice.data().head(x.size()) = x.data();
  twice.data().tail(x.size()) = x.data();
  const auto c = g.predict_logits(twice);
  CHECK(c.data().head(3).isApprox(a.data(), 1e-12));
  CHECK(c.data().tail(3).isApprox(a.data(), 1e-12));
  CHECK_THROWS_AS(g.predict_logits(Tensor<double>({1, 4, 8, 8})), std::invalid_argument);
  CHECK_THROWS_AS(g.predict_logits(Tensor<double>({1, 3, 16, 16})), std::invalid_argument);
}

TEST_CASE("zeroed cross edges isolate the superlayers") {
  auto g = preset<double>("x-kerasnet");
  const auto x = random_tensor<double>({1, 3, 32, 32}, 6);
  auto poked = x;
  for (Index i = 0; i < 1024; ++i) poked[1024 + i] += 0.5;  // channel U only
  const std::string y_out = "Y.b1.3.relu";
  CHECK_FALSE(infer_to(g, x, y_out).data().isApprox(infer_to(g, poked, y_out).data(), 1e-12));
  zero_cross_weights(g, 0);
  CHECK(infer_to(g, x, y_out).data().isApprox(infer_to(g, poked, y_out).data(), 0.0));
  // The cross channels of the merge are exactly zero.
  const auto merged = infer_to(g, x, "x0.Y.concat");
  CHECK(merged.data().segment(32 * 256, 32 * 256).isZero());
  CHECK_FALSE(merged.data().head(32 * 256).isZero());
}

TEST_CASE("forward_to reaches every layer in order") {
  auto g = tiny();
  const auto x = random_tensor<double>({2, 3, 8, 8}, 7);
  for (const auto& info : g.layers()) {
    if (info.kind == LayerKind::softmax) continue;
    CAPTURE(info.id);
    const auto out = infer_to(g, x, info.id);
    Shape expect{2};
    expect.insert(expect.end(), info.output.begin(), info.output.end());
    CHECK(out.shape() == expect);
  }
  CHECK(infer_to(g, x, "tail.4.dense").data().isApprox(g.predict_logits(x).data(), 0.0));
  CHECK_THROWS_AS(infer_to(g, x, "tail.5.softmax"), std::invalid_argument);
  CHECK_THROWS_AS(infer_to(g, x, "missing"), std::invalid_argument);
}

TEST_CASE("whole-network gradients pass grad_check") {
  auto g = tiny(8);
  const auto x = random_tensor<double>({4, 3, 8, 8}, 9);
  const std::vector<int> labels{0, 2, 1, 2};
  auto params = g.trainable();
  auto input = Var<double>::leaf(x, true);
  params.push_back(input);
  GradCheckOptions opts;
  opts.max_elements_per_input = 12;
  opts.seed = 3;
  const auto r = grad_check<double>(
      [&](Tape<double>& t) {
        Rng rng = derive_rng({42});  // same dropout mask every evaluation
        return softmax_ce(t, g.forward(t, input, Mode::train, rng), labels).loss;
      },
      params, opts);
  CHECK(r.max_relative_error < 1e-4);
  CHECK(r.elements_checked > 100);
}

TEST_CASE("declarative config") {
  SUBCASE("presets round-trip through text") {
    for (const auto& name : preset_names()) {
      CAPTURE(name);
      const auto spec = preset_spec(name);
      CHECK(parse_config(format_config(spec)) == spec);
    }
  }
  SUBCASE("a config file builds the same network as its preset") {
    const auto path = fs::temp_directory_path() / "xcnn_test_config.txt";
    std::ofstream(path) << format_config(preset_spec("x-kerasnet"));
    Rng rng = derive_rng({0});
    CHECK(count_params(NetworkGraph<float>::build(load_config(path.string()), rng)) == oracle::x_kerasnet());
    fs::remove(path);
  }
  SUBCASE("errors name the line") {
    try {
      parse_config("name = a\nclasses = 10\nbogus = 1\n");
      FAIL("expected a throw");
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("[superlayer A]\nblock = conv:3\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("[cross x]\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_layer("warp:3"), std::invalid_argument);
  }
  SUBCASE("validation") {
    auto spec = parse_config(tiny_config);
    spec.cross[0].self_edges.pop_back();
    CHECK_THROWS_AS(validate(spec), std::invalid_argument);
    spec = parse_config(tiny_config);
    spec.superlayers[1].input_channels = {1, 3};
    CHECK_THROWS_AS(validate(spec), std::invalid_argument);
    spec = parse_config(tiny_config);
    spec.tail.back() = LayerSpec::dense(4);  // tail must end in num_classes
    spec.tail.push_back(LayerSpec::softmax());
    Rng rng = derive_rng({0});
    CHECK_THROWS_AS(NetworkGraph<double>::build(spec, rng), std::invalid_argument);
  }
}

TEST_CASE("checkpoints") {
  const auto dir = fs::temp_directory_path() / "xcnn_test_ckpt";
  fs::create_directories(dir);
  const auto path = (dir / "tiny.ckpt").string();
  auto g = tiny(10);
  // Move the BN statistics off their defaults so they must round-trip.
  {
    Tape<double> t;
    Rng rng = derive_rng({1});
    g.forward(t, Var<double>::leaf(random_tensor<double>({4, 3, 8, 8}, 11)), Mode::train, rng);
  }
  const auto x = random_tensor<double>({3, 3, 8, 8}, 12);
  save_checkpoint<double>(path, g, {{"input_norm.mean", Tensor<double>({3}, {0.1, 0.2, 0.3})}});

  SUBCASE("round trip restores identical predictions") {
    const auto ck = load_checkpoint<double>(path);
    CHECK(ck.spec == g.spec());
    CHECK(ck.at("input_norm.mean")[2] == 0.3);
    auto h = restore_network(ck);
    CHECK(h.predict_logits(x).data().isApprox(g.predict_logits(x).data(), 0.0));
  }
  SUBCASE("loads into the other precision") {
    auto h = restore_network(load_checkpoint<float>(path));
    CHECK(h.predict_logits(x.cast<float>()).cast<double>().data().isApprox(g.predict_logits(x).data(), 1e-4));
  }
  SUBCASE("truncation reports the byte offset") {
    const auto size = fs::file_size(path);
    fs::resize_file(path, size - 5);
    try {
      load_checkpoint<double>(path);
      FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("truncated at byte") != std::string::npos);
    }
  }
  SUBCASE("trailing bytes and foreign files are rejected") {
    std::ofstream(path, std::ios::app) << "x";
    CHECK_THROWS_AS(load_checkpoint<double>(path), std::runtime_error);
    std::ofstream(path) << "not a checkpoint at all";
    CHECK_THROWS_AS(load_checkpoint<double>(path), std::runtime_error);
  }
  SUBCASE("architecture mismatch is rejected") {
    auto other = preset<double>("x-kerasnet");
    CHECK_THROWS_AS(apply_checkpoint(load_checkpoint<double>(path), other), std::invalid_argument);
  }
  fs::remove_all(dir);
}
