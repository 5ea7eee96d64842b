#include "fedsel/federation.hpp"

#include "fedsel/rng.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace fedsel {

namespace {

constexpr std::size_t kEvalChunk = 1000;
constexpr std::uint64_t kBytesPerScalar = sizeof(double);

// Runs fn(i) for i in [0, count). Work is strided over threads; each index
// writes only its own output slot, so scheduling never affects results.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(count, 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) {
      fn(i);
    }
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> workers;
    workers.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      workers.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < count; i += threads) {
            fn(i);
          }
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) {
            failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
}

ParamVector difference(const ParamVector& a, const ParamVector& b) {
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = a[i] - b[i];
  }
  return out;
}

double full_dataset_loss(const MlpArchitecture& arch, const ParamVector& w, const Dataset& ds) {
  double total = 0.0;
  std::vector<std::size_t> rows;
  for (std::size_t begin = 0; begin < ds.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(ds.size(), begin + kEvalChunk);
    rows.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      rows[i - begin] = i;
    }
    total += forward_loss(arch, w, ds.gather(rows)) * static_cast<double>(end - begin);
  }
  return total / static_cast<double>(ds.size());
}

}  // namespace

double RoundRecord::mean_grad_norm() const {
  if (per_client_norm.empty()) {
    return 0.0;
  }
  double sum = 0.0;
  for (double n : per_client_norm) {
    sum += n;
  }
  return sum / static_cast<double>(per_client_norm.size());
}

double RoundRecord::max_grad_norm() const {
  return per_client_norm.empty() ? 0.0 : *std::max_element(per_client_norm.begin(), per_client_norm.end());
}

std::uint64_t client_batch_seed(std::uint64_t master_seed, std::size_t round, int client_id) {
  return rng::derive(master_seed, {0xba7c4, static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(client_id)});
}

ClientUpdate client_round(const FederationState& state, const Dataset& train, int client_id) {
  if (client_id < 0 || static_cast<std::size_t>(client_id) >= state.shards.size()) {
    throw std::out_of_range("client id " + std::to_string(client_id) + " out of range");
  }
  const ClientShard& shard = state.shards[static_cast<std::size_t>(client_id)];
  const Batch batch =
      sample_batch(train, shard, state.batch_size, client_batch_seed(state.master_seed, state.round, client_id));
  auto [loss, grad] = backward(state.arch, state.w, batch);
  const double norm = vector_norm(grad);
  return {std::move(grad), loss, norm};
}

ParamVector aggregate(std::span<const ParamVector* const> grads) {
  if (grads.empty()) {
    throw std::invalid_argument("aggregate needs at least one gradient");
  }
  const std::size_t d = grads.front()->size();
  ParamVector sum(d);
  for (const ParamVector* g : grads) {
    if (g->size() != d) {
      throw DimensionError("aggregate length mismatch");
    }
    for (std::size_t i = 0; i < d; ++i) {
      sum[i] += (*g)[i];
    }
  }
  const auto count = static_cast<double>(grads.size());
  for (std::size_t i = 0; i < d; ++i) {
    sum[i] /= count;
  }
  return sum;
}

ParamVector aggregate(std::span<const ParamVector> grads) {
  std::vector<const ParamVector*> pointers;
  pointers.reserve(grads.size());
  for (const auto& g : grads) {
    pointers.push_back(&g);
  }
  return aggregate(std::span<const ParamVector* const>(pointers));
}

ParamVector aggregate_weighted(std::span<const ParamVector* const> grads, std::span<const double> weights) {
  if (grads.empty()) {
    throw std::invalid_argument("aggregate needs at least one gradient");
  }
  if (weights.size() != grads.size()) {
    throw std::invalid_argument("one weight per gradient required");
  }
  const std::size_t d = grads.front()->size();
  ParamVector sum(d);
  double total = 0.0;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k]->size() != d) {
      throw DimensionError("aggregate length mismatch");
    }
    for (std::size_t i = 0; i < d; ++i) {
      sum[i] += weights[k] * (*grads[k])[i];
    }
    total += weights[k];
  }
  for (std::size_t i = 0; i < d; ++i) {
    sum[i] /= total;
  }
  return sum;
}

Evaluation evaluate(const MlpArchitecture& arch, const ParamVector& w, const Dataset& test) {
  if (test.input_dim() != arch.input_dim) {
    throw DimensionError("test set has input_dim " + std::to_string(test.input_dim()) + ", model expects " +
                         std::to_string(arch.input_dim));
  }
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> rows;
  for (std::size_t begin = 0; begin < test.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(test.size(), begin + kEvalChunk);
    rows.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      rows[i - begin] = i;
    }
    const Batch batch = test.gather(rows);
    const RowMatrix z = logits(arch, w, batch.inputs);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      Eigen::Index best = 0;
      for (Eigen::Index j = 1; j < z.cols(); ++j) {
        if (z(i, j) > z(i, best)) {
          best = j;
        }
      }
      if (best == batch.labels[static_cast<std::size_t>(i)]) {
        ++correct;
      }
    }
    loss_sum += forward_loss(arch, w, batch) * static_cast<double>(end - begin);
  }
  const auto n = static_cast<double>(test.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

CommunicationCost communication_cost(std::uint64_t clients, std::uint64_t selected, std::uint64_t dim,
                                     std::uint64_t bytes_per_scalar, bool scores_uplinked) {
  CommunicationCost cost;
  cost.downlink_bytes = clients * dim * bytes_per_scalar;
  cost.uplink_bytes = selected * dim * bytes_per_scalar + (scores_uplinked ? clients * bytes_per_scalar : 0);
  return cost;
}

RoundRecord run_round(FederationState& state, const Dataset& train, const RoundOptions& options) {
  const std::size_t k = state.clients();
  if (k == 0) {
    throw std::invalid_argument("federation has no clients");
  }
  std::vector<ClientUpdate> updates(k);
  parallel_for(k, options.threads,
               [&](std::size_t i) { updates[i] = client_round(state, train, static_cast<int>(i)); });

  RoundRecord record;
  record.round = state.round + 1;
  record.per_client_norm.reserve(k);
  record.per_client_loss.reserve(k);
  std::vector<ClientScore> scores;
  scores.reserve(k);
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    record.per_client_norm.push_back(updates[i].norm);
    record.per_client_loss.push_back(updates[i].loss);
    loss_sum += updates[i].loss;
    const double score = state.strategy.kind == StrategyKind::HighestLoss
                             ? updates[i].loss
                             : (state.strategy.kind == StrategyKind::HighestGradientNorm ? updates[i].norm : 0.0);
    scores.push_back({static_cast<int>(i), score});
  }
  record.train_loss = loss_sum / static_cast<double>(k);
  record.selected = select(state.strategy, scores, state.round);

  std::vector<const ParamVector*> chosen;
  std::vector<double> weights;
  for (int id : record.selected) {
    chosen.push_back(&updates[static_cast<std::size_t>(id)].grad);
    weights.push_back(static_cast<double>(state.shards[static_cast<std::size_t>(id)].indices.size()));
  }
  const ParamVector g = state.weighted_aggregation ? aggregate_weighted(chosen, weights) : aggregate(chosen);
  record.aggregated_norm = vector_norm(g);
  double largest_selected = 0.0;
  for (int id : record.selected) {
    largest_selected = std::max(largest_selected, updates[static_cast<std::size_t>(id)].norm);
  }
  if (record.aggregated_norm > largest_selected * (1.0 + 1e-12)) {
    throw std::logic_error("aggregated gradient norm exceeds the largest selected norm");
  }

  ParamVector next = axpy(state.w, g, state.eta);
  record.step_norm = vector_norm(difference(next, state.w));
  state.w = std::move(next);
  state.round += 1;

  const bool scored = state.strategy.kind == StrategyKind::HighestGradientNorm ||
                      state.strategy.kind == StrategyKind::HighestLoss;
  const auto cost = communication_cost(k, record.selected.size(), state.w.size(), kBytesPerScalar, scored);
  record.uplink_bytes = cost.uplink_bytes;
  record.downlink_bytes = cost.downlink_bytes;

  if (options.full_train_loss) {
    record.full_train_loss = full_dataset_loss(state.arch, state.w, train);
  }
  if (options.test != nullptr) {
    record.test = evaluate(state.arch, state.w, *options.test);
  }
  return record;
}

ExperimentResult run_experiment(const ExperimentPlan& plan, const Dataset& train, const Dataset& test,
                                const RecordCallback& on_record) {
  FederationState state = plan.initial;
  ExperimentResult result;
  result.records.reserve(plan.rounds);
  auto checkpoint_due = [&](std::size_t t) {
    return plan.checkpoint_stride > 0 && (t % plan.checkpoint_stride == 0 || t == plan.rounds);
  };
  if (checkpoint_due(0)) {
    result.checkpoints.push_back({0, state.w});
  }
  for (std::size_t t = 1; t <= plan.rounds; ++t) {
    RoundOptions options;
    options.threads = plan.threads;
    const bool evaluated = plan.eval_stride > 0 && t % plan.eval_stride == 0;
    options.test = evaluated ? &test : nullptr;
    options.full_train_loss = evaluated && plan.full_train_loss;
    RoundRecord record;
    try {
      record = run_round(state, train, options);
    } catch (const std::exception& e) {
      result.final_w = state.w;
      throw ExperimentAborted("round " + std::to_string(t) + " failed: " + e.what(), std::move(result));
    }
    result.max_client_norm = std::max(result.max_client_norm, record.max_grad_norm());
    if (checkpoint_due(t)) {
      result.checkpoints.push_back({t, state.w});
    }
    if (on_record) {
      on_record(record);
    }
    result.records.push_back(std::move(record));
  }
  result.final_w = std::move(state.w);
  return result;
}

}  // namespace fedsel
