#include <cmath>
#include <cstring>
#include <limits>

#include "doctest.h"
#include "gtep/errors.hpp"
#include "gtep/nn.hpp"
#include "gtep/rng.hpp"
#include "oracles.hpp"

using namespace gtep;

TEST_CASE("parameter counts") {
  CHECK(param_count(kDefaultDims) == 7041);
  CHECK(param_count(std::vector<std::size_t>{1, 1}) == 2);
  CHECK(param_count(std::vector<std::size_t>{2, 3, 1}) == 13);
  CHECK_THROWS_AS(param_count(std::vector<std::size_t>{4}), std::invalid_argument);
  CHECK(Mlp::init({11, 64, 64, 32, 1}, 0).param_count() == 7041);
}

TEST_CASE("gelu matches the high-precision oracle") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(1.0) == doctest::Approx(0.841345).epsilon(1e-6));
  CHECK(std::abs(gelu(1.0) - 0.841345) < 1e-6);
  CHECK(std::abs(gelu(-1.0) + 0.158655) < 1e-6);
  CHECK(gelu(1.0) - gelu(-1.0) == doctest::Approx(1.0).epsilon(1e-15));
  double worst = 0.0;
  for (int i = -2000; i <= 2000; ++i) {
    const double x = i * 0.005;
    worst = std::max(worst, std::abs(gelu(x) - test::gelu_reference(x)));
  }
  CHECK(worst < 1e-12);
  // Tails: no cancellation blow-up.
  CHECK(gelu(-40.0) == doctest::Approx(0.0));
  CHECK(gelu(40.0) == 40.0);
}

TEST_CASE("gelu derivative matches central differences") {
  for (int i = -80; i <= 80; ++i) {
    const double x = i * 0.1;
    const double h = 1e-5;
    const double fd = (gelu(x + h) - gelu(x - h)) / (2 * h);
    CHECK(gelu_derivative(x) == doctest::Approx(fd).epsilon(1e-7));
  }
}

TEST_CASE("forward basics") {
  Mlp zero({11, 64, 64, 32, 1});
  std::vector<float> x(11, 3.0f);
  CHECK(zero.forward(x) == 0.0f);

  Mlp lin({2, 1});
  lin.mutable_layers()[0].weights = {1.0f, 1.0f};
  const std::vector<float> in = {2.0f, 3.0f};
  CHECK(lin.forward(in) == 5.0f);

  const auto m = Mlp::init({11, 64, 64, 32, 1}, 9);
  Rng rng(1);
  for (auto& v : x) v = static_cast<float>(rng.normal());
  const float a = m.forward(x);
  const float b = m.forward(x);
  CHECK(std::memcmp(&a, &b, sizeof a) == 0);
  ForwardWorkspace<float> ws;
  CHECK(m.forward(x, ws) == a);

  std::vector<float> bad(10);
  CHECK_THROWS_AS(m.forward(bad), std::invalid_argument);
  CHECK_THROWS_AS(Mlp({3, 2}), std::invalid_argument);
  CHECK_THROWS_AS(Mlp({3}), std::invalid_argument);
  CHECK_THROWS_AS(Mlp({3, 0, 1}), std::invalid_argument);
}

TEST_CASE("initialisation") {
  const auto a = Mlp::init({11, 64, 64, 32, 1}, 4);
  const auto b = Mlp::init({11, 64, 64, 32, 1}, 4);
  const auto c = Mlp::init({11, 64, 64, 32, 1}, 5);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (const auto& layer : a.layers()) {
    for (float x : layer.bias) CHECK(x == 0.0f);
  }
  // 10,000+ draws stay inside +-sqrt(6 / fan_in) and fill most of it.
  const auto wide = Mlp::init({100, 100, 1}, 8);
  const double bound = std::sqrt(6.0 / 100.0);
  float lo = 0.0f, hi = 0.0f;
  for (float w : wide.layers()[0].weights) {
    REQUIRE(std::abs(w) <= bound);
    lo = std::min(lo, w);
    hi = std::max(hi, w);
  }
  CHECK(wide.layers()[0].weights.size() == 10000);
  CHECK(hi > 0.99 * bound);
  CHECK(lo < -0.99 * bound);
}

TEST_CASE("dropout") {
  const auto mlp = Mlp::init({6, 16, 16, 1}, 2);
  std::vector<float> x = {0.3f, -1.0f, 0.5f, 2.0f, -0.2f, 0.0f};
  Rng rng(5);

  SUBCASE("p = 0 is the plain forward pass") {
    const auto pass = forward_train(mlp, std::span<const float>(x), DropoutSpec{0.0}, rng);
    const float f = mlp.forward(x);
    CHECK(std::memcmp(&pass.prediction, &f, sizeof f) == 0);
  }
  SUBCASE("fixed seed reproduces the mask") {
    Rng r1(7), r2(7);
    const auto p1 = forward_train(mlp, std::span<const float>(x), DropoutSpec{0.1}, r1);
    const auto p2 = forward_train(mlp, std::span<const float>(x), DropoutSpec{0.1}, r2);
    CHECK(p1.prediction == p2.prediction);
    CHECK(p1.masks == p2.masks);
  }
  SUBCASE("masks are unbiased") {
    const std::size_t draws = 10000;
    std::vector<double> mean(16, 0.0);
    for (std::size_t n = 0; n < draws; ++n) {
      const auto pass = forward_train(mlp, std::span<const float>(x), DropoutSpec{0.1}, rng);
      for (std::size_t k = 0; k < 16; ++k) {
        const double m = pass.masks[0][k];
        REQUIRE((m == 0.0 || std::abs(m - 1.0 / 0.9) < 1e-12));
        mean[k] += m / static_cast<double>(draws);
      }
    }
    for (double m : mean) CHECK(std::abs(m - 1.0) < 0.02);
  }
  SUBCASE("single hidden layer: mean dropped output equals undropped output") {
    const auto shallow = Mlp::init({6, 32, 1}, 3);
    const double target = shallow.forward(x);
    double sum = 0.0;
    for (int n = 0; n < 10000; ++n) {
      sum += forward_train(shallow, std::span<const float>(x), DropoutSpec{0.1}, rng).prediction;
    }
    CHECK(std::abs(sum / 10000 - target) < 0.02 * std::abs(target));
  }
  CHECK_THROWS_AS(DropoutSpec{1.0}.validate(), std::invalid_argument);
  CHECK_THROWS_AS(DropoutSpec{-0.1}.validate(), std::invalid_argument);
}

TEST_CASE("backward") {
  SUBCASE("zero loss gradient") {
    const auto mlp = Mlp::init({4, 8, 1}, 1);
    Rng rng(0);
    std::vector<float> x = {1, 2, 3, 4};
    const auto g = backward(mlp, forward_train(mlp, std::span<const float>(x), DropoutSpec{0.0}, rng), 0.0);
    for (std::size_t k = 0; k < g.size(); ++k) CHECK(g.flat(k) == 0.0);
  }
  SUBCASE("linear layer derivative is the input") {
    BasicMlp<double> mlp({1, 1});
    mlp.mutable_layers()[0].weights = {2.5};
    Rng rng(0);
    std::vector<double> x = {-1.75};
    const auto g = backward(mlp, forward_train(mlp, std::span<const double>(x), DropoutSpec{0.0}, rng), 1.0);
    CHECK(g.weights[0][0] == -1.75);
    CHECK(g.bias[0][0] == 1.0);
  }
  SUBCASE("finite differences, small dims") {
    const auto r = test::gradient_check(BasicMlp<double>::init({3, 4, 2, 1}, 11), 100, 3);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.checked == 100 * param_count(std::vector<std::size_t>{3, 4, 2, 1}));
  }
  SUBCASE("finite differences, full architecture") {
    auto mlp = BasicMlp<double>::init({11, 64, 64, 32, 1}, 12);
    // Non-zero biases exercise the bias paths too.
    Rng rng(4);
    for (auto& layer : mlp.mutable_layers())
      for (auto& b : layer.bias) b = 0.1 * rng.normal();
    CHECK(test::gradient_check(mlp, 5, 4).max_rel_error < 1e-4);
  }
  SUBCASE("stale pass is rejected") {
    auto mlp = Mlp::init({4, 8, 1}, 1);
    const auto other = Mlp::init({4, 8, 1}, 1);
    Rng rng(0);
    std::vector<float> x = {1, 2, 3, 4};
    const auto pass = forward_train(mlp, std::span<const float>(x), DropoutSpec{0.0}, rng);
    CHECK_THROWS_AS(backward(other, pass, 1.0), InvalidState);
    auto grads = backward(mlp, pass, 1.0);
    auto state = AdamState::for_model(mlp);
    adam_step(mlp, grads, state, 1e-3);
    CHECK_THROWS_AS(backward(mlp, pass, 1.0), InvalidState);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradients leave parameters and advance the step") {
    auto mlp = Mlp::init({3, 4, 1}, 1);
    const auto before = mlp;
    auto grads = Gradients::like(mlp);
    auto state = AdamState::for_model(mlp);
    adam_step(mlp, grads, state, 1e-3);
    CHECK(mlp == before);
    CHECK(state.step == 1);
  }
  SUBCASE("first step moves by about lr") {
    for (double g : {0.37, -2.0, 1e-3}) {
      BasicMlp<double> mlp({1, 1});
      mlp.mutable_layers()[0].weights = {0.5};
      auto grads = Gradients::like(mlp);
      grads.weights[0][0] = g;
      auto state = AdamState::for_model(mlp);
      const double lr = 1e-3;
      adam_step(mlp, grads, state, lr);
      // m_hat = g, v_hat = g^2 after bias correction.
      const double expected = 0.5 - lr * g / (std::abs(g) + 1e-8);
      CHECK(mlp.layers()[0].weights[0] == doctest::Approx(expected).epsilon(1e-12));
      CHECK(std::abs(0.5 - mlp.layers()[0].weights[0]) == doctest::Approx(lr).epsilon(1e-4));
    }
  }
  SUBCASE("deterministic over 100 steps") {
    auto run = [] {
      auto mlp = Mlp::init({4, 8, 8, 1}, 3);
      auto state = AdamState::for_model(mlp);
      Rng rng(9);
      std::vector<float> x(4);
      for (int step = 0; step < 100; ++step) {
        for (auto& v : x) v = static_cast<float>(rng.normal());
        const auto pass = forward_train(mlp, std::span<const float>(x), DropoutSpec{0.1}, rng);
        adam_step(mlp, backward(mlp, pass, 2.0 * (pass.prediction - 1.0)), state, 1e-3);
      }
      return mlp;
    };
    CHECK(run() == run());
  }
  SUBCASE("shape mismatch") {
    auto mlp = Mlp::init({3, 4, 1}, 1);
    const auto other = Mlp::init({3, 5, 1}, 1);
    auto state = AdamState::for_model(mlp);
    CHECK_THROWS_AS(adam_step(mlp, Gradients::like(other), state, 1e-3), std::invalid_argument);
    CHECK_THROWS_AS(adam_step(mlp, Gradients::like(mlp), state, 0.0), std::invalid_argument);
  }
}

TEST_CASE("parameter accessors share the gradient order") {
  auto mlp = BasicMlp<double>::init({2, 3, 1}, 6);
  for (std::size_t k = 0; k < mlp.param_count(); ++k) mlp.set_parameter(k, static_cast<double>(k));
  CHECK(mlp.layers()[0].weights[0] == 0.0);
  CHECK(mlp.layers()[0].bias[0] == 6.0);
  CHECK(mlp.layers()[1].weights[0] == 9.0);
  CHECK(mlp.layers()[1].bias[0] == 12.0);
  CHECK_THROWS_AS(mlp.parameter(13), std::out_of_range);
  const auto g = Gradients::like(mlp);
  CHECK(g.size() == 13);
}

TEST_CASE("non-finite detection and precision cast") {
  auto mlp = Mlp::init({3, 4, 1}, 1);
  CHECK(mlp.all_finite());
  const auto d = mlp.cast<double>();
  CHECK(d.cast<float>() == mlp);
  mlp.set_parameter(2, std::numeric_limits<float>::quiet_NaN());
  CHECK_FALSE(mlp.all_finite());
}
