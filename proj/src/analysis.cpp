#include "fedsel/analysis.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace fedsel {

namespace {

constexpr std::size_t kChunk = 1000;

}  // namespace

void ConvergenceConstants::validate() const {
  const double values[] = {f0, f_star, eta, mu, L, G, R_bar};
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("convergence constants must be finite");
    }
  }
  if (!(eta > 0.0 && mu > 0.0 && L > 0.0 && G > 0.0) || T_plus_1 == 0) {
    throw std::invalid_argument("eta, mu, L, G and T+1 must be positive");
  }
}

double proposition1_bound(const ConvergenceConstants& c) {
  c.validate();
  const auto t = static_cast<double>(c.T_plus_1);
  return (c.f0 - c.f_star) / (t * c.eta * c.mu) + c.R_bar / c.mu + c.L * c.eta * c.G * c.G / (2.0 * c.mu);
}

double bound_minimizing_eta(const ConvergenceConstants& c) {
  c.validate();
  return std::sqrt(2.0 * (c.f0 - c.f_star) / (c.L * c.G * c.G * static_cast<double>(c.T_plus_1)));
}

LossAndGradient full_gradient(const MlpArchitecture& arch, const ParamVector& w, const Dataset& ds,
                              std::span<const std::size_t> rows) {
  std::vector<std::size_t> all;
  if (rows.empty()) {
    all.resize(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    rows = all;
  }
  ParamVector grad(w.size());
  double loss = 0.0;
  const auto n = static_cast<double>(rows.size());
  for (std::size_t begin = 0; begin < rows.size(); begin += kChunk) {
    const std::size_t end = std::min(rows.size(), begin + kChunk);
    const auto part = backward(arch, w, ds.gather(rows.subspan(begin, end - begin)));
    const double weight = static_cast<double>(end - begin) / n;
    loss += weight * part.loss;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      grad[i] += weight * part.grad[i];
    }
  }
  return {loss, std::move(grad)};
}

double logistic_smoothness(const Dataset& ds) {
  const auto dim = static_cast<Eigen::Index>(ds.input_dim());
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(dim + 1, dim + 1);
  Eigen::VectorXd row(dim + 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ds.copy_row(i, {row.data(), ds.input_dim()});
    row[dim] = 1.0;
    gram.selfadjointView<Eigen::Lower>().rankUpdate(row);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram.selfadjointView<Eigen::Lower>(),
                                                         Eigen::EigenvaluesOnly);
  return solver.eigenvalues().maxCoeff() / (2.0 * static_cast<double>(ds.size()));
}

AuditReport audit_trajectory(std::span<const RoundRecord> records, std::span<const ClientShard> shards,
                             const Dataset& ds, const MlpArchitecture& arch, std::span<const Checkpoint> checkpoints,
                             const AuditOptions& options) {
  if (checkpoints.empty() || checkpoints.front().round != 0) {
    throw AuditError("audit needs a checkpoint of w^0");
  }
  std::vector<std::size_t> rows;
  for (const auto& shard : shards) {
    rows.insert(rows.end(), shard.indices.begin(), shard.indices.end());
  }
  std::sort(rows.begin(), rows.end());

  AuditReport report;
  double sum = 0.0;
  double best = INFINITY;
  for (const Checkpoint& cp : checkpoints) {
    const auto [loss, grad] = full_gradient(arch, cp.w, ds, rows);
    if (cp.round == 0) {
      report.f0 = loss;
    }
    const double norm = vector_norm(grad);
    const double sq = norm * norm;
    sum += sq;
    best = std::min(best, sq);
    report.stats.rounds.push_back(cp.round);
    report.stats.grad_sq_norms.push_back(sq);
    report.stats.running_mean.push_back(sum / static_cast<double>(report.stats.rounds.size()));
    report.stats.running_min.push_back(best);
  }

  double g_bound = 0.0;
  if (options.gradient_bound) {
    g_bound = *options.gradient_bound;
  } else {
    for (const auto& r : records) {
      g_bound = std::max(g_bound, r.max_grad_norm());
    }
  }
  std::optional<double> smoothness = options.smoothness;
  if (!smoothness && arch.hidden_dims.empty()) {
    smoothness = logistic_smoothness(ds);
  }
  if (smoothness && g_bound > 0.0 && options.eta > 0.0) {
    ConvergenceConstants c;
    c.f0 = report.f0;
    c.f_star = options.f_star;
    c.eta = options.eta;
    c.mu = 1.0;
    c.R_bar = 0.0;
    c.L = *smoothness;
    c.G = g_bound;
    c.T_plus_1 = checkpoints.back().round + 1;
    report.constants = c;
    report.bound = proposition1_bound(c);
    report.bound_holds = report.stats.mean() <= *report.bound;
    report.informational = !(options.unbiased_regime && arch.hidden_dims.empty());
  }
  return report;
}

std::string AuditReport::to_text() const {
  std::ostringstream out;
  out.precision(10);
  out << "checkpoints: " << stats.rounds.size() << "\n";
  out << "f(w^0): " << f0 << "\n";
  out << "mean ||grad f||^2: " << stats.mean() << "\n";
  out << "min ||grad f||^2: " << stats.min() << "\n";
  if (constants) {
    out << "constants: eta=" << constants->eta << " mu=" << constants->mu << " L=" << constants->L
        << " G=" << constants->G << " R=" << constants->R_bar << " f*=" << constants->f_star
        << " T+1=" << constants->T_plus_1 << "\n";
    out << "bound: " << *bound << " (" << (bound_holds ? "holds" : "violated") << ")"
        << (informational ? " [informational: mu=1, R=0 not established for this run]" : "") << "\n";
  } else {
    out << "bound: not computed (no smoothness constant for this architecture)\n";
  }
  return out.str();
}

Lemma1Report lemma1_audit(std::span<const RoundRecord> records, double eta, double rel_tol) {
  Lemma1Report report;
  for (const auto& r : records) {
    ++report.rounds_checked;
    const double expected = eta * r.max_grad_norm();
    const double scale = std::max(std::abs(expected), std::numeric_limits<double>::min());
    if (!(std::abs(r.step_norm - expected) <= rel_tol * scale)) {
      report.violations.push_back(r.round);
    }
  }
  return report;
}

ParamVector finite_difference_gradient(const MlpArchitecture& arch, const ParamVector& w, const Batch& batch,
                                       double step) {
  if (!(step > 0.0)) {
    throw std::invalid_argument("finite-difference step must be positive");
  }
  ParamVector probe = w;
  ParamVector grad(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + step;
    const double up = forward_loss(arch, probe, batch);
    probe[i] = original - step;
    const double down = forward_loss(arch, probe, batch);
    probe[i] = original;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

double heterogeneity_score(std::span<const ClientShard> shards, const Dataset& ds) {
  if (shards.empty()) {
    throw std::invalid_argument("heterogeneity_score needs at least one shard");
  }
  const auto classes = static_cast<std::size_t>(ds.num_classes());
  std::vector<double> global(classes, 0.0);
  std::size_t total = 0;
  for (const auto& shard : shards) {
    for (std::size_t i : shard.indices) {
      global[static_cast<std::size_t>(ds.label(i))] += 1.0;
    }
    total += shard.indices.size();
  }
  for (double& g : global) {
    g /= static_cast<double>(total);
  }
  double score = 0.0;
  std::vector<double> local(classes);
  for (const auto& shard : shards) {
    if (shard.indices.empty()) {
      throw std::invalid_argument("empty shard in heterogeneity_score");
    }
    std::fill(local.begin(), local.end(), 0.0);
    for (std::size_t i : shard.indices) {
      local[static_cast<std::size_t>(ds.label(i))] += 1.0;
    }
    double l1 = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      l1 += std::abs(local[c] / static_cast<double>(shard.indices.size()) - global[c]);
    }
    score += l1;
  }
  return score / static_cast<double>(shards.size());
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("loglog_slope needs two equal-length series of at least two points");
  }
  const auto n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace fedsel
