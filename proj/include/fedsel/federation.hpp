#pragma once

// The communication-round loop: broadcast w^t, every client computes one
// stochastic gradient, the server selects S^t from the reported scores,
// averages the selected gradients and takes w^{t+1} = w^t - eta * g.

#include "fedsel/data.hpp"
#include "fedsel/nn.hpp"
#include "fedsel/selection.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace fedsel {

struct FederationState {
  std::size_t round = 0;  // t, number of completed rounds
  ParamVector w;
  MlpArchitecture arch;
  std::vector<ClientShard> shards;
  SelectionStrategy strategy;
  double eta = 0.1;
  std::size_t batch_size = 64;
  std::uint64_t master_seed = 0;
  /// Off: plain mean over S^t. On: mean weighted by |D_k|.
  bool weighted_aggregation = false;

  std::size_t clients() const { return shards.size(); }
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

struct RoundRecord {
  std::size_t round = 0;  // 1-based: the record of the round that produced w^round
  std::vector<int> selected;
  std::vector<double> per_client_norm;
  std::vector<double> per_client_loss;
  double aggregated_norm = 0.0;
  double step_norm = 0.0;
  double train_loss = 0.0;  // mean of the K client batch losses
  std::optional<double> full_train_loss;
  std::optional<Evaluation> test;  // evaluated rounds only, at w^{round}
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;

  double mean_grad_norm() const;
  double max_grad_norm() const;
};

struct ClientUpdate {
  ParamVector grad;
  double loss = 0.0;
  double norm = 0.0;
};

/// Seed for client `client_id`'s batch in round `round`.
std::uint64_t client_batch_seed(std::uint64_t master_seed, std::size_t round, int client_id);

/// One local stochastic gradient at the current w. Independent of every other
/// client's computation.
ClientUpdate client_round(const FederationState& state, const Dataset& train, int client_id);

/// Elementwise mean, summed in the order given.
ParamVector aggregate(std::span<const ParamVector> grads);
ParamVector aggregate(std::span<const ParamVector* const> grads);
/// sum_i weights[i] * grads[i] / sum_i weights[i]
ParamVector aggregate_weighted(std::span<const ParamVector* const> grads, std::span<const double> weights);

/// Mean cross-entropy and argmax accuracy (ties go to the lowest class).
Evaluation evaluate(const MlpArchitecture& arch, const ParamVector& w, const Dataset& test);

struct CommunicationCost {
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
};

/// downlink = K d b (broadcast of w^t); uplink = K b (one score per client,
/// when scores are reported) + C d b (selected gradients).
CommunicationCost communication_cost(std::uint64_t clients, std::uint64_t selected, std::uint64_t dim,
                                     std::uint64_t bytes_per_scalar, bool scores_uplinked = true);

struct RoundOptions {
  const Dataset* test = nullptr;  // evaluate when non-null
  bool full_train_loss = false;
  std::size_t threads = 1;
};

/// Executes one round and advances `state` (w and t).
RoundRecord run_round(FederationState& state, const Dataset& train, const RoundOptions& options = {});

struct Checkpoint {
  std::size_t round = 0;
  ParamVector w;
};

struct ExperimentPlan {
  FederationState initial;
  std::size_t rounds = 0;
  std::size_t eval_stride = 1;
  std::size_t checkpoint_stride = 0;  // 0 disables checkpoints
  bool full_train_loss = false;
  std::size_t threads = 1;
};

struct ExperimentResult {
  std::vector<RoundRecord> records;
  std::vector<Checkpoint> checkpoints;
  ParamVector final_w;
  double max_client_norm = 0.0;  // over every client and round
};

/// Thrown when a round fails mid-run; carries everything completed so far.
class ExperimentAborted : public std::runtime_error {
 public:
  ExperimentAborted(const std::string& what, ExperimentResult partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const ExperimentResult& partial() const { return partial_; }

 private:
  ExperimentResult partial_;
};

using RecordCallback = std::function<void(const RoundRecord&)>;

ExperimentResult run_experiment(const ExperimentPlan& plan, const Dataset& train, const Dataset& test,
                                const RecordCallback& on_record = {});

}  // namespace fedsel
