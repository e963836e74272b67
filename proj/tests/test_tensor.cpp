#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bsnet/ops.hpp"
#include "bsnet/optim.hpp"
#include "bsnet/rng.hpp"
#include "bsnet/tensor.hpp"

using namespace bsnet;

TEST_CASE("tensor construction and access") {
  auto t = Tensor<float>::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  t.at({1, 2}) = 5.0f;
  CHECK(t.at({1, 2}) == 5.0f);
  CHECK_THROWS_AS(Tensor<float>::from({1.0f, 2.0f}, {3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<float>::zeros({0, 2}), std::invalid_argument);
  CHECK_THROWS_AS(t.at({2, 0}), std::invalid_argument);
}

TEST_CASE("copies share storage") {
  auto a = Tensor<float>::zeros({4});
  Tensor<float> b = a;
  b.data()[0] = 3.0f;
  CHECK(a.data()[0] == 3.0f);
  CHECK(a.same_storage(b));
}

TEST_CASE("check_finite flags NaN and Inf") {
  auto t = Tensor<float>::zeros({2});
  t.check_finite("t");
  t.data()[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(t.check_finite("t"), std::invalid_argument);
  t.data()[1] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(t.check_finite("t"), std::invalid_argument);
}

TEST_CASE("backward computes d(sum(x*x))/dx = 2x") {
  auto x = Tensor<double>::from({1.0, -2.0, 3.0}, {3});
  x.set_requires_grad(true);
  Tape<double> tape;
  auto y = ops::sum(tape, ops::mul(tape, x, x));
  CHECK(y.value() == doctest::Approx(14.0));
  tape.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(-4.0));
  CHECK(x.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("backward requires a scalar loss") {
  auto x = Tensor<double>::from({1.0, 2.0}, {2});
  x.set_requires_grad(true);
  Tape<double> tape;
  auto y = ops::mul(tape, x, x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("gradients accumulate across backward calls") {
  auto x = Tensor<double>::from({2.0}, {1});
  x.set_requires_grad(true);
  Tape<double> tape;
  auto y = ops::mul(tape, x, x);
  auto s = ops::sum(tape, y);
  tape.backward(s);
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  s.zero_grad();
  y.zero_grad();
  tape.backward(s);
  CHECK(x.grad()[0] == doctest::Approx(8.0));
}

TEST_CASE("disabled tape records nothing and detaches outputs") {
  auto x = Tensor<double>::from({1.0, 2.0}, {2});
  x.set_requires_grad(true);
  Tape<double> tape(false);
  auto y = ops::mul(tape, x, x);
  CHECK(tape.size() == 0);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("requires_grad propagates through ops") {
  auto x = Tensor<double>::from({1.0}, {1});
  auto c = Tensor<double>::from({2.0}, {1});
  Tape<double> tape;
  auto y = ops::mul(tape, x, c);
  CHECK_FALSE(y.requires_grad());
  x.set_requires_grad(true);
  auto z = ops::mul(tape, x, c);
  CHECK(z.requires_grad());
}

TEST_CASE("frozen inputs receive no gradient work") {
  auto x = Tensor<double>::from({1.0, 2.0}, {2});
  auto w = Tensor<double>::from({3.0, 4.0}, {2});
  x.set_requires_grad(true);
  Tape<double> tape;
  auto y = ops::sum(tape, ops::mul(tape, x, w));
  tape.backward(y);
  CHECK_FALSE(w.has_grad());
  CHECK(x.grad()[0] == doctest::Approx(3.0));
}

TEST_CASE("adam: single step matches the closed form") {
  auto w = Tensor<float>::from({1.0f}, {1});
  w.set_requires_grad(true);
  w.grad()[0] = 1.0f;
  Adam<float> opt(0.01f);
  opt.attach({{"w", w}});
  opt.step();
  // First step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
  CHECK(w.data()[0] == doctest::Approx(1.0f - 0.01f).epsilon(1e-5));
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  auto w = Tensor<float>::from({1.5f, -0.5f}, {2});
  w.set_requires_grad(true);
  w.ensure_grad();
  Adam<float> opt(0.1f);
  opt.attach({{"w", w}});
  opt.step();
  CHECK(w.data()[0] == 1.5f);
  CHECK(w.data()[1] == -0.5f);
}

TEST_CASE("adam: missing gradient is a contract error") {
  auto w = Tensor<float>::from({1.0f}, {1});
  w.set_requires_grad(true);
  Adam<float> opt(0.1f);
  opt.attach({{"w", w}});
  CHECK_THROWS_AS(opt.step(), std::invalid_argument);
}

TEST_CASE("adam: frozen parameters are not attached") {
  auto a = Tensor<float>::from({1.0f}, {1});
  auto b = Tensor<float>::from({1.0f}, {1});
  a.set_requires_grad(true);
  Adam<float> opt(0.1f);
  opt.attach({{"a", a}, {"b", b}});
  CHECK(opt.attached() == 1);
}

TEST_CASE("adam: identical runs are bit-identical") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    auto w = Tensor<float>::zeros({8});
    for (auto& v : w.data()) v = static_cast<float>(rng.uniform(-1, 1));
    w.set_requires_grad(true);
    Adam<float> opt(0.05f);
    opt.attach({{"w", w}});
    for (int it = 0; it < 20; ++it) {
      opt.zero_grad();
      Tape<float> tape;
      auto loss = ops::sum(tape, ops::mul(tape, w, w));
      tape.backward(loss);
      opt.step();
    }
    return w.data();
  };
  auto a = run(7);
  auto b = run(7);
  CHECK(a == b);
}

TEST_CASE("rng determinism and derive independence") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42);
  CHECK(c.derive(1).next_u64() != c.derive(2).next_u64());
  double mean = 0;
  Rng d(3);
  for (int i = 0; i < 10000; ++i) mean += d.uniform();
  CHECK(mean / 10000 == doctest::Approx(0.5).epsilon(0.05));
}
