#include <doctest.h>

#include "oracles.hpp"
#include "xcnn/grad_check.hpp"
#include "xcnn/layers.hpp"
#include "xcnn/ops.hpp"

#include <cmath>

using namespace xcnn;
using oracle::random_tensor;

namespace {

double max_rel_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0;
  for (Index i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), 1e-12}));
  return worst;
}

Var<double> param(const Shape& s, std::uint64_t seed) { return Var<double>::leaf(random_tensor<double>(s, seed), true); }

// Weighted sum so every output element gets a distinct upstream gradient.
Var<double> probe(Tape<double>& t, const Var<double>& y, std::uint64_t seed) {
  auto w = Var<double>::leaf(random_tensor<double>(y.shape(), seed));
  return sum(t, mul(t, y, w));
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor<float> t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.data().isZero());
  CHECK_THROWS_AS(Tensor<float>({2, 2}, {1.f, 2.f, 3.f}), std::invalid_argument);
  const auto r = t.reshaped({6, 4});
  CHECK(r.shape() == Shape{6, 4});
  CHECK_THROWS_AS(t.reshaped({5, 5}), std::invalid_argument);
}

TEST_CASE("conv2d with a 1x1 identity kernel returns its input") {
  Tape<double> tape;
  auto x = Var<double>::leaf(random_tensor<double>({2, 4, 5, 5}, 1));
  Tensor<double> k({4, 4, 1, 1});
  for (Index i = 0; i < 4; ++i) k[i * 4 + i] = 1;
  auto y = conv2d(tape, x, Var<double>::leaf(k), Var<double>::leaf(Tensor<double>({4})));
  CHECK(y.value().data().isApprox(x.value().data(), 0.0));
}

TEST_CASE("conv2d counts overlap of an all-ones kernel") {
  Tape<double> tape;
  auto x = Var<double>::leaf(Tensor<double>::constant({1, 1, 3, 3}, 1));
  auto k = Var<double>::leaf(Tensor<double>::constant({1, 1, 3, 3}, 1));
  auto y = conv2d(tape, x, k, Var<double>::leaf(Tensor<double>({1})), 1, 1);
  CHECK(y.value().at(0, 0, 1, 1) == 9.0);
  CHECK(y.value().at(0, 0, 0, 0) == 4.0);
  CHECK(y.value().at(0, 0, 0, 1) == 6.0);
}

TEST_CASE("conv2d matches the nested-loop reference") {
  const auto x = random_tensor<double>({2, 3, 9, 9}, 2);
  const auto k = random_tensor<double>({4, 3, 3, 3}, 3);
  const auto b = random_tensor<double>({4}, 4);
  for (auto [stride, pad] : {std::pair<Index, Index>{1, 1}, {1, 0}, {2, 1}}) {
    Tape<double> tape;
    auto y = conv2d(tape, Var<double>::leaf(x), Var<double>::leaf(k), Var<double>::leaf(b), stride, pad);
    CHECK(max_rel_diff(y.value(), oracle::conv2d(x, k, b, stride, pad)) < 1e-6);
  }
  SUBCASE("1x1 channel-mix path") {
    const auto k1 = random_tensor<double>({5, 3, 1, 1}, 5);
    const auto b1 = random_tensor<double>({5}, 6);
    Tape<double> tape;
    auto y = conv2d(tape, Var<double>::leaf(x), Var<double>::leaf(k1), Var<double>::leaf(b1));
    CHECK(max_rel_diff(y.value(), oracle::conv2d(x, k1, b1, 1, 0)) < 1e-6);
  }
}

TEST_CASE("conv2d is linear in its input") {
  const auto x = random_tensor<double>({1, 3, 6, 6}, 7), y = random_tensor<double>({1, 3, 6, 6}, 8);
  const auto k = Var<double>::leaf(random_tensor<double>({2, 3, 3, 3}, 9));
  const auto zero = Var<double>::leaf(Tensor<double>({2}));
  const double a = 1.7, b = -0.4;
  Tensor<double> mix(x.shape());
  mix.data() = a * x.data() + b * y.data();
  Tape<double> t;
  auto lhs = conv2d(t, Var<double>::leaf(mix), k, zero, 1, 1).value();
  Tensor<double> rhs(lhs.shape());
  rhs.data() = a * conv2d(t, Var<double>::leaf(x), k, zero, 1, 1).value().data() +
               b * conv2d(t, Var<double>::leaf(y), k, zero, 1, 1).value().data();
  CHECK(max_rel_diff(lhs, rhs) < 1e-6);
}

TEST_CASE("conv2d rejects bad shapes with both shapes in the message") {
  Tape<float> t;
  auto x = Var<float>::leaf(Tensor<float>({1, 3, 8, 8}));
  auto k = Var<float>::leaf(Tensor<float>({4, 2, 3, 3}));
  auto b = Var<float>::leaf(Tensor<float>({4}));
  try {
    conv2d(t, x, k, b, 1, 1);
    FAIL("expected a throw");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1,3,8,8]") != std::string::npos);
    CHECK(msg.find("[4,2,3,3]") != std::string::npos);
  }
  auto k3 = Var<float>::leaf(Tensor<float>({4, 3, 3, 3}));
  auto x4 = Var<float>::leaf(Tensor<float>({1, 3, 4, 4}));
  CHECK_THROWS_AS(conv2d(t, x4, k3, b, 2, 0), std::invalid_argument);  // (4-3)/2 is not integral
}

TEST_CASE("maxpool2d") {
  Tape<double> t;
  SUBCASE("constant input") {
    auto y = maxpool2d(t, Var<double>::leaf(Tensor<double>::constant({1, 2, 4, 4}, 3.5)), 2, 2);
    CHECK(y.shape() == Shape{1, 2, 2, 2});
    CHECK((y.value().data() == 3.5).all());
  }
  SUBCASE("2x2 window") {
    auto y = maxpool2d(t, Var<double>::leaf(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4})), 2, 2);
    CHECK(y.value()[0] == 4);
  }
  SUBCASE("global pooling equals a full scan") {
    const auto x = random_tensor<double>({1, 2, 8, 8}, 11);
    auto y = maxpool2d(t, Var<double>::leaf(x), 8, 8);
    for (Index c = 0; c < 2; ++c) {
      double best = -1e300;
      for (Index i = 0; i < 64; ++i) best = std::max(best, x[c * 64 + i]);
      CHECK(y.value()[c] == best);
    }
  }
  SUBCASE("indivisible size is rejected") {
    CHECK_THROWS_AS(maxpool2d(t, Var<double>::leaf(Tensor<double>({1, 1, 5, 5})), 2, 2), std::invalid_argument);
  }
  SUBCASE("ties route to the first maximum") {
    auto x = Var<double>::leaf(Tensor<double>::constant({1, 1, 2, 2}, 1.0), true);
    auto y = maxpool2d(t, x, 2, 2);
    t.backward(sum(t, y));
    CHECK(x.grad().data().isApprox(Tensor<double>({1, 1, 2, 2}, {1, 0, 0, 0}).data()));
  }
  SUBCASE("backward conserves gradient mass") {
    auto x = Var<double>::leaf(random_tensor<double>({2, 3, 8, 8}, 12), true);
    auto y = maxpool2d(t, x, 2, 2);
    auto w = random_tensor<double>(y.shape(), 13);
    t.backward(sum(t, mul(t, y, Var<double>::leaf(w))));
    CHECK(x.grad().data().sum() == doctest::Approx(w.data().sum()).epsilon(1e-12));
  }
}

TEST_CASE("dense") {
  Tape<double> t;
  const auto x = random_tensor<double>({3, 5}, 14);
  SUBCASE("identity weights") {
    Tensor<double> eye({5, 5});
    for (Index i = 0; i < 5; ++i) eye[i * 5 + i] = 1;
    auto y = dense(t, Var<double>::leaf(x), Var<double>::leaf(eye), Var<double>::leaf(Tensor<double>({5})));
    CHECK(y.value().data().isApprox(x.data(), 0.0));
  }
  SUBCASE("zero weights give the bias in every row") {
    Tensor<double> b({4}, {1, 2, 3, 4});
    auto y = dense(t, Var<double>::leaf(x), Var<double>::leaf(Tensor<double>({5, 4})), Var<double>::leaf(b));
    for (Index r = 0; r < 3; ++r)
      for (Index c = 0; c < 4; ++c) CHECK(y.value()[r * 4 + c] == b[c]);
  }
  SUBCASE("matches the triple loop") {
    const auto w = random_tensor<double>({5, 4}, 15), b = random_tensor<double>({4}, 16);
    auto y = dense(t, Var<double>::leaf(x), Var<double>::leaf(w), Var<double>::leaf(b));
    CHECK(max_rel_diff(y.value(), oracle::dense(x, w, b)) < 1e-6);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(dense(t, Var<double>::leaf(x), Var<double>::leaf(Tensor<double>({4, 4})),
                          Var<double>::leaf(Tensor<double>({4}))),
                    std::invalid_argument);
  }
}

TEST_CASE("flatten is row-major") {
  Tape<double> t;
  const auto x = random_tensor<double>({2, 3, 2, 2}, 17);
  auto y = flatten(t, Var<double>::leaf(x));
  CHECK(y.shape() == Shape{2, 12});
  CHECK(y.value()[12 + 5] == x.at(1, 1, 0, 1));
}

TEST_CASE("backward") {
  SUBCASE("sum gives ones") {
    Tape<double> t;
    auto x = param({3, 4}, 18);
    t.backward(sum(t, x));
    CHECK((x.grad().data() == 1.0).all());
  }
  SUBCASE("sum of squares gives 2x") {
    Tape<double> t;
    auto x = param({3, 4}, 19);
    t.backward(sum(t, mul(t, x, x)));
    CHECK(x.grad().data().isApprox(2 * x.value().data()));
  }
  SUBCASE("fan-out accumulates both paths") {
    Tape<double> t;
    auto x = param({5}, 20);
    t.backward(sum(t, add(t, scale(t, x, 3.0), mul(t, x, x))));
    CHECK(x.grad().data().isApprox(3.0 + 2 * x.value().data()));
  }
  SUBCASE("a loss from another tape is rejected") {
    Tape<double> a, b;
    auto x = param({2}, 21);
    auto loss = sum(a, x);
    CHECK_THROWS_AS(b.backward(loss), std::invalid_argument);
    CHECK_THROWS_AS(b.backward(Var<double>::leaf(Tensor<double>({1}))), std::invalid_argument);
  }
  SUBCASE("a non-scalar loss is rejected") {
    Tape<double> t;
    auto x = param({2}, 22);
    CHECK_THROWS_AS(t.backward(scale(t, x, 2.0)), std::invalid_argument);
  }
}

TEST_CASE("grad_check on simple programs") {
  SUBCASE("linear program is exact to round-off") {
    auto x = param({4, 3}, 23);
    const auto w = Var<double>::leaf(random_tensor<double>({4, 3}, 24));
    auto r = grad_check<double>([&](Tape<double>& t) { return sum(t, mul(t, x, w)); }, {x});
    CHECK(r.max_relative_error < 1e-8);
  }
  SUBCASE("softmax cross-entropy of four logits") {
    auto z = param({1, 4}, 25);
    const std::vector<int> label{2};
    auto r = grad_check<double>([&](Tape<double>& t) { return softmax_ce(t, z, label).loss; }, {z});
    CHECK(r.max_relative_error < 1e-5);
  }
  SUBCASE("non-scalar programs are rejected") {
    auto x = param({3}, 26);
    CHECK_THROWS_AS(grad_check<double>([&](Tape<double>& t) { return scale(t, x, 2.0); }, {x}),
                    std::invalid_argument);
  }
}

TEST_CASE("every differentiable op passes grad_check") {
  const double tol = 1e-4;
  auto check = [&](const std::string& name, const std::vector<Var<double>>& inputs,
                   const std::function<Var<double>(Tape<double>&)>& f) {
    CAPTURE(name);
    CHECK(grad_check<double>(f, inputs).max_relative_error < tol);
  };
  auto x = param({2, 3, 6, 6}, 30);
  auto k3 = param({4, 3, 3, 3}, 31), k1 = param({5, 3, 1, 1}, 32);
  auto b4 = param({4}, 33), b5 = param({5}, 34);
  check("conv3x3 same", {x, k3, b4}, [&](Tape<double>& t) { return probe(t, conv2d(t, x, k3, b4, 1, 1), 1); });
  auto x7 = param({1, 3, 7, 7}, 39);
  check("conv3x3 stride 2", {x7, k3, b4}, [&](Tape<double>& t) { return probe(t, conv2d(t, x7, k3, b4, 2, 1), 2); });
  check("conv1x1", {x, k1, b5}, [&](Tape<double>& t) { return probe(t, conv2d(t, x, k1, b5), 3); });
  check("maxpool", {x}, [&](Tape<double>& t) { return probe(t, maxpool2d(t, x, 2, 2), 4); });
  check("global maxpool", {x}, [&](Tape<double>& t) { return probe(t, maxpool2d(t, x, 6, 6), 5); });
  auto d = param({3, 7}, 35), w = param({7, 4}, 36), b = param({4}, 37);
  check("dense", {d, w, b}, [&](Tape<double>& t) { return probe(t, dense(t, d, w, b), 6); });
  check("flatten", {x}, [&](Tape<double>& t) { return probe(t, flatten(t, x), 7); });
  check("reshape", {x}, [&](Tape<double>& t) { return probe(t, reshape(t, x, {6, 36}), 8); });
  auto y = param({2, 3, 6, 6}, 38);
  check("add", {x, y}, [&](Tape<double>& t) { return probe(t, add(t, x, y), 9); });
  check("mul", {x, y}, [&](Tape<double>& t) { return probe(t, mul(t, x, y), 10); });
  check("scale", {x}, [&](Tape<double>& t) { return probe(t, scale(t, x, -2.5), 11); });
  check("sum_squares", {x}, [&](Tape<double>& t) { return sum_squares(t, x); });
  check("slice_channels", {x}, [&](Tape<double>& t) { return probe(t, slice_channels(t, x, 1, 2), 12); });
  check("channel_mean", {x}, [&](Tape<double>& t) { return channel_mean(t, x, 2); });
}

TEST_CASE("float and double builds agree") {
  const auto xd = random_tensor<double>({1, 2, 5, 5}, 40), kd = random_tensor<double>({3, 2, 3, 3}, 41);
  const auto bd = random_tensor<double>({3}, 42);
  Tape<double> td;
  Tape<float> tf;
  auto yd = conv2d(td, Var<double>::leaf(xd), Var<double>::leaf(kd), Var<double>::leaf(bd), 1, 1).value();
  auto yf = conv2d(tf, Var<float>::leaf(xd.cast<float>()), Var<float>::leaf(kd.cast<float>()),
                   Var<float>::leaf(bd.cast<float>()), 1, 1)
                .value();
  CHECK(yf.cast<double>().data().isApprox(yd.data(), 1e-5));
}
