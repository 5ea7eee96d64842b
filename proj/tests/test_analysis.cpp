#include "fedsel/analysis.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace fedsel;

namespace {

ConvergenceConstants example() {
  ConvergenceConstants c;
  c.f0 = 1.0;
  c.f_star = 0.0;
  c.T_plus_1 = 100;
  c.eta = 0.1;
  c.mu = 1.0;
  c.R_bar = 0.0;
  c.L = 1.0;
  c.G = 1.0;
  return c;
}

}  // namespace

TEST_CASE("proposition1_bound") {
  CHECK(proposition1_bound(example()) == doctest::Approx(0.15).epsilon(1e-14));

  ConvergenceConstants tiny = example();
  tiny.eta = 1e-12;
  CHECK(proposition1_bound(tiny) > 1e9);

  ConvergenceConstants bad = example();
  bad.L = 0.0;
  CHECK_THROWS(proposition1_bound(bad));
  bad = example();
  bad.f0 = NAN;
  CHECK_THROWS(proposition1_bound(bad));
}

TEST_CASE("bound_minimizing_eta") {
  ConvergenceConstants c = example();
  c.R_bar = 0.02;
  c.f0 = 2.5;
  c.f_star = 0.5;
  c.L = 3.0;
  c.G = 1.7;
  const double eta = bound_minimizing_eta(c);
  CHECK(eta == doctest::Approx(std::sqrt(2.0 * 2.0 / (3.0 * 1.7 * 1.7 * 100.0))));
  c.eta = eta;
  const double best = proposition1_bound(c);
  CHECK(best == doctest::Approx(0.02 + std::sqrt(2.0 * 3.0 * 1.7 * 1.7 * 2.0 / 100.0)).epsilon(1e-12));
  for (double factor : {0.5, 0.9, 1.1, 2.0}) {
    ConvergenceConstants other = c;
    other.eta = eta * factor;
    CHECK(proposition1_bound(other) > best);
  }
}

TEST_CASE("proposition1_bound monotonicity") {
  rng::Stream s(8);
  for (int trial = 0; trial < 200; ++trial) {
    ConvergenceConstants c;
    c.f_star = s.uniform();
    c.f0 = c.f_star + 0.1 + s.uniform() * 3.0;
    c.eta = 0.001 + s.uniform();
    c.mu = 0.1 + s.uniform();
    c.L = 0.1 + 5.0 * s.uniform();
    c.G = 0.1 + 5.0 * s.uniform();
    c.R_bar = s.uniform();
    c.T_plus_1 = 1 + s.below(1000);
    const double base = proposition1_bound(c);
    const double bump = 0.05 + s.uniform();
    auto with = [&](auto mutate) {
      ConvergenceConstants d = c;
      mutate(d);
      return proposition1_bound(d);
    };
    CHECK(with([&](auto& d) { d.f0 += bump; }) > base);
    CHECK(with([&](auto& d) { d.G += bump; }) > base);
    CHECK(with([&](auto& d) { d.L += bump; }) > base);
    CHECK(with([&](auto& d) { d.R_bar += bump; }) > base);
    CHECK(with([&](auto& d) { d.mu += bump; }) < base);
    CHECK(with([&](auto& d) { d.f_star += bump * 0.01; }) < base);
  }
}

TEST_CASE("finite_difference_gradient") {
  const MlpArchitecture linear{1, {}, 2};
  ParamVector w(param_count(linear));
  w[0] = 0.3;
  w[1] = -0.2;
  Batch b;
  b.inputs = RowMatrix::Constant(1, 1, 1.5);
  b.labels = {0};
  const auto fd = finite_difference_gradient(linear, w, b, 1e-5);
  const auto exact = backward(linear, w, b).grad;
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(std::abs(fd[i] - exact[i]) < 1e-9);
  }

  // Zero weights and a balanced batch: the gradient vanishes.
  const MlpArchitecture arch{2, {}, 2};
  Batch sym;
  sym.inputs = RowMatrix(2, 2);
  sym.inputs << 1.0, 1.0, 1.0, 1.0;
  sym.labels = {0, 1};
  const auto zero = finite_difference_gradient(arch, ParamVector(param_count(arch)), sym, 1e-5);
  CHECK(vector_norm(zero) < 1e-10);
}

TEST_CASE("full_gradient is the size-weighted mean of shard gradients") {
  const Dataset ds = synthetic_logistic(900, 6, 4, 2);
  const MlpArchitecture arch{6, {5}, 4};
  const ParamVector w = testing::random_params(param_count(arch), 3);
  const auto shards = dirichlet_partition(ds, {7, 0.4, 1, 10});
  const auto full = full_gradient(arch, w, ds);
  ParamVector combined(w.size());
  for (const auto& shard : shards) {
    const auto g = full_gradient(arch, w, ds, shard.indices).grad;
    const double weight = static_cast<double>(shard.indices.size()) / 900.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      combined[i] += weight * g[i];
    }
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(std::abs(combined[i] - full.grad[i]) <= 1e-10);
  }
}

TEST_CASE("logistic_smoothness bounds the Hessian along random directions") {
  const Dataset ds = synthetic_logistic(300, 4, 3, 5);
  const MlpArchitecture arch{4, {}, 3};
  const double L = logistic_smoothness(ds);
  CHECK(L > 0.0);
  rng::Stream s(12);
  for (int trial = 0; trial < 20; ++trial) {
    const ParamVector w = testing::random_params(param_count(arch), s.next(), 1.0);
    const ParamVector v = testing::random_params(param_count(arch), s.next(), 1.0);
    const double h = 1e-5 / vector_norm(v);
    const ParamVector wp = axpy(w, v, -h);
    const ParamVector wm = axpy(w, v, h);
    const auto gp = full_gradient(arch, wp, ds).grad;
    const auto gm = full_gradient(arch, wm, ds).grad;
    double curvature = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      curvature += v[i] * (gp[i] - gm[i]) / (2.0 * h);
    }
    curvature /= vector_norm(v) * vector_norm(v);
    CHECK(curvature <= L * (1.0 + 1e-6));
  }
}

TEST_CASE("audit_trajectory") {
  const Dataset ds = synthetic_logistic(200, 3, 2, 4);
  const MlpArchitecture arch{3, {}, 2};
  const auto shards = dirichlet_partition(ds, {4, 1.0, 0, 10});
  const ParamVector w = testing::random_params(param_count(arch), 9);
  const std::vector<Checkpoint> still{{0, w}, {1, w}, {2, w}};
  AuditOptions opts;
  opts.eta = 0.1;
  opts.gradient_bound = 1.0;
  const auto report = audit_trajectory({}, shards, ds, arch, still, opts);
  CHECK(report.stats.grad_sq_norms.size() == 3);
  CHECK(report.stats.min() == doctest::Approx(report.stats.mean()));
  CHECK(report.informational);
  REQUIRE(report.bound.has_value());
  CHECK(report.constants->T_plus_1 == 3);

  const std::vector<Checkpoint> missing{{5, w}};
  CHECK_THROWS_AS(audit_trajectory({}, shards, ds, arch, missing, opts), AuditError);

  const MlpArchitecture mlp{3, {4}, 2};
  const std::vector<Checkpoint> mlp_cp{{0, ParamVector(param_count(mlp))}};
  CHECK_FALSE(audit_trajectory({}, shards, ds, mlp, mlp_cp, opts).bound.has_value());
}

TEST_CASE("lemma1_audit flags tampering") {
  std::vector<RoundRecord> records(10);
  for (std::size_t t = 0; t < records.size(); ++t) {
    records[t].round = t + 1;
    records[t].per_client_norm = {0.5, 2.0 + static_cast<double>(t), 1.0};
    records[t].step_norm = 0.05 * (2.0 + static_cast<double>(t));
  }
  CHECK(lemma1_audit(records, 0.05).passed());
  records[6].step_norm *= 1.0 + 1e-7;
  const auto report = lemma1_audit(records, 0.05);
  CHECK(report.rounds_checked == 10);
  CHECK(report.violations == std::vector<std::size_t>{7});
}

TEST_CASE("loglog_slope") {
  const std::vector<double> x{100, 400, 1600};
  const std::vector<double> y{0.1, 0.05, 0.025};
  CHECK(loglog_slope(x, y) == doctest::Approx(-0.5));
}
