#pragma once

// Per-round client selection: top-C by gradient norm (the method under study),
// top-C by local loss, uniform random, and full participation.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedsel {

enum class StrategyKind { HighestGradientNorm, HighestLoss, Random, Full };

/// Config spelling: grad_norm, loss, random, full.
std::string_view strategy_name(StrategyKind kind);
std::optional<StrategyKind> parse_strategy(std::string_view name);

struct SelectionStrategy {
  StrategyKind kind = StrategyKind::HighestGradientNorm;
  std::size_t clients_per_round = 1;  // C; ignored by Full
  std::uint64_t seed = 0;             // Random only
};

struct ClientScore {
  int client_id;
  double score;
};

/// Score a client reports for `kind`: ||grad|| for HighestGradientNorm, the
/// batch loss for HighestLoss, 0 otherwise.
double score_for(StrategyKind kind, std::span<const double> grad, double loss);

/// Returns min(C, K) distinct client ids sorted ascending. Score-based kinds
/// take the C highest scores with ties going to the lowest id; Random draws
/// without replacement from a (seed, round) stream; Full returns everyone.
/// Throws std::invalid_argument on duplicate ids, non-finite scores or C < 1.
std::vector<int> select(const SelectionStrategy& strategy, std::span<const ClientScore> scores, std::uint64_t round);

}  // namespace fedsel
