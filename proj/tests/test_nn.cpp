#include "fedsel/analysis.hpp"
#include "fedsel/nn.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace fedsel;
using fedsel::testing::random_batch;
using fedsel::testing::random_params;
using fedsel::testing::rel_err;

TEST_CASE("param_count") {
  CHECK(param_count({784, {200, 200}, 10}) == 199210);
  CHECK(param_count({3072, {200, 200}, 10}) == 656810);
  CHECK(param_count({1, {}, 1}) == 2);
  CHECK_THROWS_AS(param_count({0, {}, 3}), DimensionError);
  CHECK_THROWS_AS(param_count({4, {0}, 3}), DimensionError);
}

TEST_CASE("init_params") {
  const MlpArchitecture arch{20, {7, 5}, 3};
  const ParamVector a = init_params(arch, 1);
  CHECK(a == init_params(arch, 1));
  CHECK_FALSE(a == init_params(arch, 2));
  for (const auto& s : layer_slices(arch)) {
    const double limit = std::sqrt(6.0 / static_cast<double>(s.fan_in + s.fan_out));
    for (std::size_t i = 0; i < s.fan_in * s.fan_out; ++i) {
      CHECK(std::abs(a[s.weight_offset + i]) <= limit);
    }
    for (std::size_t o = 0; o < s.fan_out; ++o) {
      CHECK(a[s.bias_offset + o] == 0.0);
    }
  }
}

TEST_CASE("forward_loss: uniform logits give ln(classes)") {
  const MlpArchitecture arch{4, {}, 10};
  const ParamVector zero(param_count(arch));
  CHECK(forward_loss(arch, zero, random_batch(6, 4, 10, 3)) == doctest::Approx(std::log(10.0)).epsilon(1e-15));
}

TEST_CASE("forward_loss: confident correct prediction gives ~0") {
  const MlpArchitecture arch{1, {}, 2};
  ParamVector w(param_count(arch));
  w[2] = -50.0;  // bias class 0
  w[3] = 50.0;   // bias class 1
  Batch b;
  b.inputs = RowMatrix::Zero(1, 1);
  b.labels = {1};
  CHECK(forward_loss(arch, w, b) < 1e-40);
}

TEST_CASE("forward_loss matches the 50-digit oracle") {
  // tests/oracles/oracles.py: cross_entropy_oracle()
  const MlpArchitecture arch{3, {4}, 3};
  ParamVector w(param_count(arch));
  for (std::size_t j = 0; j < w.size(); ++j) {
    w[j] = static_cast<double>(static_cast<int>((j * 7) % 11) - 5) / 10.0;
  }
  Batch b;
  b.inputs = RowMatrix(2, 3);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 3; ++j) {
      b.inputs(i, j) = static_cast<double>((i * 3 + j * 5) % 7 - 3) / 4.0;
    }
  }
  b.labels = {1, 2};
  CHECK(rel_err(forward_loss(arch, w, b), 1.098059589234273980312182) < 1e-14);
}

TEST_CASE("forward_loss and backward reject dimension mismatches") {
  const MlpArchitecture arch{3, {2}, 2};
  const ParamVector w(param_count(arch));
  CHECK_THROWS_AS(forward_loss(arch, ParamVector(3), random_batch(2, 3, 2, 1)), DimensionError);
  CHECK_THROWS_AS(backward(arch, w, random_batch(2, 4, 2, 1)), DimensionError);
  Batch bad = random_batch(2, 3, 2, 1);
  bad.labels[0] = 5;
  CHECK_THROWS_AS(forward_loss(arch, w, bad), DimensionError);
}

TEST_CASE("backward: zero linear model gives softmax-minus-onehot bias gradient") {
  const MlpArchitecture arch{5, {}, 4};
  const ParamVector zero(param_count(arch));
  Batch b = random_batch(8, 5, 4, 9);
  b.labels = {0, 1, 2, 3, 0, 1, 2, 3};
  const auto lg = backward(arch, zero, b);
  const auto slice = layer_slices(arch).front();
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(std::abs(lg.grad[slice.bias_offset + c]) < 1e-16);
  }
  b.labels = {0, 0, 0, 0, 1, 1, 1, 1};
  const auto skewed = backward(arch, zero, b);
  CHECK(skewed.grad[slice.bias_offset + 0] == doctest::Approx(0.25 - 0.5));
  CHECK(skewed.grad[slice.bias_offset + 2] == doctest::Approx(0.25));
}

TEST_CASE("backward matches central differences on 50 random architectures") {
  rng::Stream s(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    MlpArchitecture arch;
    for (;;) {
      arch.input_dim = 1 + s.below(8);
      arch.hidden_dims.assign(s.below(3), 0);
      for (auto& h : arch.hidden_dims) {
        h = 1 + s.below(10);
      }
      arch.output_dim = 2 + s.below(5);
      if (param_count(arch) <= 500) {
        break;
      }
    }
    const Batch b = random_batch(1 + s.below(12), arch.input_dim, static_cast<int>(arch.output_dim), s.next());
    const ParamVector w = random_params(param_count(arch), s.next());
    const auto analytic = backward(arch, w, b).grad;
    const auto numeric = finite_difference_gradient(arch, w, b, 1e-5);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-6});
      worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("backward: duplicating the batch leaves loss and gradient unchanged") {
  const MlpArchitecture arch{6, {5}, 3};
  const ParamVector w = random_params(param_count(arch), 4);
  const Batch b = random_batch(7, 6, 3, 5);
  Batch twice;
  twice.inputs = RowMatrix(14, 6);
  twice.inputs << b.inputs, b.inputs;
  twice.labels = b.labels;
  twice.labels.insert(twice.labels.end(), b.labels.begin(), b.labels.end());
  const auto one = backward(arch, w, b);
  const auto two = backward(arch, w, twice);
  CHECK(one.loss == doctest::Approx(two.loss).epsilon(1e-14));
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(one.grad[i] == doctest::Approx(two.grad[i]).epsilon(1e-12).scale(1e-15));
  }
}

TEST_CASE("vector_norm") {
  CHECK(vector_norm(ParamVector(5)) == 0.0);
  const std::vector<double> v{3.0, 4.0};
  CHECK(vector_norm(v) == 5.0);

  // Neumaier-compensated sum of squares in long double.
  const ParamVector r = random_params(10000, 77, 3.0);
  long double sum = 0.0L;
  long double comp = 0.0L;
  for (double x : r.values()) {
    const long double term = static_cast<long double>(x) * x;
    const long double t = sum + term;
    comp += std::abs(sum) >= std::abs(term) ? (sum - t) + term : (term - t) + sum;
    sum = t;
  }
  const double oracle = static_cast<double>(std::sqrt(sum + comp));
  CHECK(rel_err(vector_norm(r), oracle) <= 1e-12);
}

TEST_CASE("axpy") {
  const ParamVector w(std::vector<double>{1.0, 1.0});
  const ParamVector g(std::vector<double>{2.0, -2.0});
  CHECK(axpy(w, g, 0.0) == w);
  CHECK(axpy(w, ParamVector(2), 0.3) == w);
  const ParamVector out = axpy(w, g, 0.1);
  CHECK(out[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(1.2).epsilon(1e-15));
  CHECK_THROWS_AS(axpy(w, ParamVector(3), 0.1), DimensionError);
}
