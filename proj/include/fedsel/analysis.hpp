#pragma once

// Post-hoc numerical checks of a run: the nonconvex convergence
// bound, the max-step identity for single-client gradient-norm selection,
// finite-difference gradients and partition heterogeneity.

#include "fedsel/data.hpp"
#include "fedsel/federation.hpp"
#include "fedsel/nn.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedsel {

struct ConvergenceConstants {
  double f0 = 0.0;      // f(w^0)
  double f_star = 0.0;  // lower bound of f
  double eta = 0.0;
  double mu = 1.0;
  double L = 0.0;       // smoothness
  double G = 0.0;       // bound on the step-direction norm
  double R_bar = 0.0;   // mean residual
  std::size_t T_plus_1 = 1;

  void validate() const;
};

/// (f0 - f*) / ((T+1) eta mu) + R_bar / mu + L eta G^2 / (2 mu)
double proposition1_bound(const ConvergenceConstants& c);

/// Step size minimising the eta-dependent part of the bound:
/// sqrt(2 (f0 - f*) / (L G^2 (T+1))).
double bound_minimizing_eta(const ConvergenceConstants& c);

/// Mean loss and its gradient over `rows` of ds (all rows when empty).
LossAndGradient full_gradient(const MlpArchitecture& arch, const ParamVector& w, const Dataset& ds,
                              std::span<const std::size_t> rows = {});

/// Analytic smoothness constant of mean softmax cross-entropy for a model with
/// no hidden layers: lambda_max([X 1]^T [X 1]) / (2 n).
double logistic_smoothness(const Dataset& ds);

struct TrajectoryStats {
  std::vector<std::size_t> rounds;
  std::vector<double> grad_sq_norms;  // ||grad f(w^t)||^2 per checkpoint
  std::vector<double> running_mean;
  std::vector<double> running_min;

  double mean() const { return running_mean.empty() ? 0.0 : running_mean.back(); }
  double min() const { return running_min.empty() ? 0.0 : running_min.back(); }
};

struct AuditOptions {
  double eta = 0.0;
  /// Full participation with full local batches and |D_k| weighting: the
  /// step direction is the exact gradient, so mu = 1 and R = 0.
  bool unbiased_regime = false;
  /// Smoothness constant. Computed analytically for hidden-layer-free models
  /// when absent; for MLPs the comparison stays informational.
  std::optional<double> smoothness;
  /// Bound on the step-direction norm; defaults to the largest client norm
  /// found in the records.
  std::optional<double> gradient_bound;
  double f_star = 0.0;  // cross-entropy is nonnegative
};

struct AuditReport {
  TrajectoryStats stats;
  double f0 = 0.0;
  std::optional<ConvergenceConstants> constants;
  std::optional<double> bound;
  bool informational = true;  // true when mu / R / L are not known to hold
  bool bound_holds = false;

  std::string to_text() const;
};

class AuditError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exact full-dataset squared gradient norms at each checkpoint, compared
/// against proposition1_bound. Throws AuditError without a round-0 checkpoint.
AuditReport audit_trajectory(std::span<const RoundRecord> records, std::span<const ClientShard> shards,
                             const Dataset& ds, const MlpArchitecture& arch, std::span<const Checkpoint> checkpoints,
                             const AuditOptions& options);

struct Lemma1Report {
  std::size_t rounds_checked = 0;
  std::vector<std::size_t> violations;  // record round numbers

  bool passed() const { return violations.empty(); }
};

/// Checks step_norm == eta * max_k per_client_norm for every record.
Lemma1Report lemma1_audit(std::span<const RoundRecord> records, double eta, double rel_tol = 1e-9);

/// Central differences of forward_loss, one coordinate at a time.
ParamVector finite_difference_gradient(const MlpArchitecture& arch, const ParamVector& w, const Batch& batch,
                                       double step);

/// Mean over clients of the L1 distance between the client's label
/// distribution and the distribution over all shards. In [0, 2].
double heterogeneity_score(std::span<const ClientShard> shards, const Dataset& ds);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace fedsel
