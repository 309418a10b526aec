#include <doctest.h>

#include "oracles.hpp"
#include "xcnn/introspect.hpp"
#include "xcnn/ops.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace xcnn;
using oracle::random_tensor;
namespace fs = std::filesystem;

namespace {

Tensor<double> identity_kernel(Index n, double sign = 1) {
  Tensor<double> k({n, n, 1, 1});
  for (Index i = 0; i < n; ++i) k[i * n + i] = sign;
  return k;
}

// Single conv layer (+ optional ReLU) as an ascent target.
FeatureFn<double> conv_feature(const Tensor<double>& kernel, Index padding, bool rectify) {
  auto k = Var<double>::leaf(kernel);
  auto b = Var<double>::leaf(Tensor<double>({kernel.dim(0)}));
  return [=](Tape<double>& t, const Var<double>& x) {
    auto y = conv2d(t, x, k, b, 1, padding);
    return rectify ? relu(t, y) : y;
  };
}

double norm(const Tensor<double>& t) { return std::sqrt(t.data().square().sum()); }

double correlation(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
  const Eigen::ArrayXd x = a - a.mean(), y = b - b.mean();
  return (x * y).sum() / std::sqrt(x.square().sum() * y.square().sum());
}

}  // namespace

TEST_CASE("heatmap colours") {
  const auto zero = heatmap_colour(0, 1);
  CHECK(zero == std::array<std::uint8_t, 3>{255, 255, 255});
  CHECK(heatmap_colour(1, 1) == std::array<std::uint8_t, 3>{0, 255, 0});
  CHECK(heatmap_colour(-1, 1) == std::array<std::uint8_t, 3>{0, 0, 255});
  // Tiny weights stay distinguishable from exact zero.
  const auto faint = heatmap_colour(1e-9, 1);
  CHECK(decode_heatmap_colour(faint.data()).sign == 1);
  CHECK(decode_heatmap_colour(zero.data()).sign == 0);
  for (double w : {-0.8, -0.25, 0.1, 0.5, 0.999}) {
    const auto c = heatmap_colour(w, 1);
    const auto d = decode_heatmap_colour(c.data());
    CHECK(d.sign == (w > 0 ? 1 : -1));
    CHECK(std::abs(d.magnitude - std::abs(w)) <= 1.0 / 255);
  }
}

TEST_CASE("weight heatmaps") {
  SUBCASE("identity gives a green diagonal") {
    const auto h = weight_heatmap(identity_kernel(4));
    CHECK(h.rows == 4);
    CHECK(h.cols == 4);
    CHECK(h.image.width == 64);
    CHECK(h.image.height == 64);
    for (Index r = 0; r < 4; ++r)
      for (Index c = 0; c < 4; ++c) {
        const auto cell = decode_heatmap_cell(h, r, c);
        CHECK(cell.sign == (r == c ? 1 : 0));
        const auto* px = h.image.at(c * 16 + 7, r * 16 + 7);
        if (r == c) CHECK((px[0] == 0 && px[1] == 255 && px[2] == 0));
        else CHECK((px[0] == 255 && px[1] == 255 && px[2] == 255));
      }
  }
  SUBCASE("negated identity gives a blue diagonal") {
    const auto h = weight_heatmap(identity_kernel(3, -1));
    for (Index i = 0; i < 3; ++i) {
      const auto* px = h.image.at(i * 16, i * 16);
      CHECK((px[0] == 0 && px[1] == 0 && px[2] == 255));
      CHECK(decode_heatmap_cell(h, i, i).sign == -1);
    }
  }
  SUBCASE("X-FitNet4 first Y to U layer is 12 by 36") {
    Rng rng = derive_rng({0});
    auto g = build_preset<float>("x-fitnet4", 10, rng);
    const auto h = weight_heatmap(g, "x0.Y-U.0.conv");
    CHECK(h.rows == 12);
    CHECK(h.cols == 36);
    CHECK(h.image.width == 36 * 16);
    CHECK(h.image.height == 12 * 16);
    CHECK_THROWS_AS(weight_heatmap(g, "Y.b0.1.conv"), std::invalid_argument);
    CHECK_THROWS_AS(weight_heatmap(g, "x0.Y-U.1.bn"), std::invalid_argument);
  }
  SUBCASE("non-1x1 kernels are rejected") {
    CHECK_THROWS_AS(weight_heatmap(Tensor<double>({2, 2, 3, 3})), std::invalid_argument);
  }
  SUBCASE("PPM round trip recovers sign and magnitude") {
    const auto k = random_tensor<double>({7, 5, 1, 1}, 3);
    const auto h = weight_heatmap(k, 4);
    const auto path = (fs::temp_directory_path() / "xcnn_test_heatmap.ppm").string();
    write_ppm(path, h.image);
    Heatmap back = h;
    back.image = read_ppm(path);
    fs::remove(path);
    CHECK(back.image.pixels == h.image.pixels);
    CHECK(back.image.comments == h.image.comments);
    CHECK_FALSE(h.image.comments.empty());
    const double max_abs = k.data().abs().maxCoeff();
    CHECK(h.max_abs == doctest::Approx(max_abs));
    for (Index r = 0; r < 7; ++r)
      for (Index c = 0; c < 5; ++c) {
        const double w = k[r * 5 + c];
        const auto cell = decode_heatmap_cell(back, r, c);
        CHECK(cell.sign == (w > 0 ? 1 : -1));
        CHECK(std::abs(cell.magnitude - std::abs(w) / max_abs) <= 1.0 / 255);
      }
  }
}

TEST_CASE("ppm files") {
  RgbImage img;
  img.width = 3;
  img.height = 2;
  img.pixels = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18};
  img.comments = {"legend: green positive"};
  const auto path = (fs::temp_directory_path() / "xcnn_test_img.ppm").string();
  write_ppm(path, img);
  const auto back = read_ppm(path);
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.pixels == img.pixels);
  CHECK(back.at(2, 1)[2] == 18);
  std::ofstream(path) << "P3\n1 1\n255\n0 0 0\n";
  CHECK_THROWS(read_ppm(path));
  fs::remove(path);
}

TEST_CASE("activation maximization") {
  SUBCASE("linear target with no penalty converges on the kernel") {
    const auto k = random_tensor<double>({1, 1, 8, 8}, 4);
    AscentConfig cfg;
    cfg.lambda = 0;
    cfg.steps = 100;
    const auto r = activation_maximize(conv_feature(k, 0, false), {1, 1, 8, 8}, 0, cfg);
    CHECK(correlation(r.image.data(), k.data()) > 0.99);
    CHECK(r.steps_taken == 100);
  }
  SUBCASE("a dominant penalty shrinks the image") {
    const auto k = random_tensor<double>({2, 1, 3, 3}, 5);
    AscentConfig cfg;
    cfg.lambda = 100;
    cfg.steps = 50;
    cfg.step_size = 0.001;
    const auto r = activation_maximize(conv_feature(k, 1, true), {1, 1, 10, 10}, 1, cfg);
    CHECK(norm(r.image) < 0.1 * 0.1 * 10);  // well under the initial noise norm of about 1
  }
  SUBCASE("objective never decreases") {
    Rng rng = derive_rng({6});
    PresetOptions o;
    o.input_size = 8;
    auto g = build_preset<double>("x-kerasnet", 10, rng, o);
    AscentConfig cfg;
    cfg.steps = 40;
    for (const std::string layer : {"Y.b0.2.conv", "x0.Y-U.1.relu", "tail.1.dense"}) {
      CAPTURE(layer);
      const auto r = activation_maximize(g, layer, 3, cfg);
      REQUIRE(r.objective.size() >= 2);
      for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] >= r.objective[i - 1]);
      CHECK(r.objective.back() > r.objective.front());
      CHECK(r.display.shape() == Shape{3, 8, 8});
      CHECK(r.display.data().minCoeff() >= 0);
      CHECK(r.display.data().maxCoeff() <= 1);
    }
    CHECK_THROWS_AS(activation_maximize(g, "Y.b0.2.conv", 32, cfg), std::invalid_argument);
  }
  SUBCASE("an edge detector yields stripes across its orientation") {
    // Responds to left-right intensity changes.
    Tensor<double> vertical_edge({1, 1, 3, 3}, {-1, 0, 1, -2, 0, 2, -1, 0, 1});
    Tensor<double> horizontal_edge({1, 1, 3, 3}, {-1, -2, -1, 0, 0, 0, 1, 2, 1});
    AscentConfig cfg;
    cfg.steps = 60;
    cfg.lambda = 0.01;
    auto energy = [](const Tensor<double>& img, bool along_x) {
      double e = 0;
      const Index n = img.dim(2);
      for (Index y = 0; y + 1 < n; ++y)
        for (Index x = 0; x + 1 < n; ++x)
          e += std::pow(along_x ? img.at(0, 0, y, x + 1) - img.at(0, 0, y, x) : img.at(0, 0, y + 1, x) - img.at(0, 0, y, x), 2);
      return e;
    };
    const auto v = activation_maximize(conv_feature(vertical_edge, 1, true), {1, 1, 16, 16}, 0, cfg);
    CHECK(energy(v.image, true) > 2 * energy(v.image, false));
    const auto h = activation_maximize(conv_feature(horizontal_edge, 1, true), {1, 1, 16, 16}, 0, cfg);
    CHECK(energy(h.image, false) > 2 * energy(h.image, true));
  }
  SUBCASE("non-finite objectives abort with the step index") {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    FeatureFn<double> broken = [&](Tape<double>& t, const Var<double>& x) {
      return mul(t, x, Var<double>::leaf(Tensor<double>::constant(x.shape(), nan)));
    };
    try {
      activation_maximize(broken, {1, 1, 4, 4}, 0, AscentConfig{});
      FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
  }
  SUBCASE("seeded start") {
    const auto k = random_tensor<double>({1, 1, 3, 3}, 7);
    AscentConfig cfg;
    cfg.steps = 5;
    const auto a = activation_maximize(conv_feature(k, 1, true), {1, 1, 6, 6}, 0, cfg);
    const auto b = activation_maximize(conv_feature(k, 1, true), {1, 1, 6, 6}, 0, cfg);
    CHECK(a.image.data().isApprox(b.image.data(), 0.0));
  }
}

TEST_CASE("feature map colours") {
  SUBCASE("three channels map straight to RGB") {
    CHECK(colour_projection(3).isIdentity());
    const auto x = random_tensor<double>({3, 4, 5}, 8);
    const auto c = feature_map_colours(x);
    const double lo = x.data().minCoeff(), hi = x.data().maxCoeff();
    for (Index i = 0; i < x.size(); ++i) CHECK(c[i] == doctest::Approx((x[i] - lo) / (hi - lo)));
  }
  SUBCASE("zero features are mid-grey") {
    const auto c = feature_map_colours(Tensor<double>({7, 4, 4}));
    CHECK((c.data() == 0.5).all());
    const auto img = feature_map_rgb(Tensor<double>({7, 4, 4}));
    CHECK(img.width == 4);
    for (auto p : img.pixels) CHECK(p == 128);
  }
  SUBCASE("constant features give flat planes") {
    const auto c = feature_map_colours(Tensor<double>::constant({7, 4, 4}, 3.0));
    for (Index ch = 0; ch < 3; ++ch) {
      const auto plane = c.data().segment(ch * 16, 16);
      CHECK(plane.maxCoeff() == plane.minCoeff());
    }
  }
  SUBCASE("projection is seeded and row-normalized") {
    const auto p = colour_projection(64, 1);
    CHECK(p.rows() == 3);
    CHECK(p.cols() == 64);
    CHECK(p.isApprox(colour_projection(64, 1)));
    CHECK_FALSE(p.isApprox(colour_projection(64, 2)));
    for (Index r = 0; r < 3; ++r) CHECK(p.row(r).norm() == doctest::Approx(1.0));
  }
  SUBCASE("positive scaling does not change the picture") {
    const auto x = random_tensor<double>({32, 6, 6}, 9);
    Tensor<double> y = x;
    y.data() *= 4.5;
    CHECK(feature_map_colours(x).data().isApprox(feature_map_colours(y).data(), 1e-12));
    CHECK(feature_map_rgb(x).pixels == feature_map_rgb(y).pixels);
  }
}
