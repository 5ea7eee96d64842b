#include "fedsel/selection.hpp"

#include "fedsel/nn.hpp"
#include "fedsel/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace fedsel {

std::string_view strategy_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::HighestGradientNorm:
      return "grad_norm";
    case StrategyKind::HighestLoss:
      return "loss";
    case StrategyKind::Random:
      return "random";
    case StrategyKind::Full:
      return "full";
  }
  return "unknown";
}

std::optional<StrategyKind> parse_strategy(std::string_view name) {
  for (auto kind : {StrategyKind::HighestGradientNorm, StrategyKind::HighestLoss, StrategyKind::Random,
                    StrategyKind::Full}) {
    if (strategy_name(kind) == name) {
      return kind;
    }
  }
  return std::nullopt;
}

double score_for(StrategyKind kind, std::span<const double> grad, double loss) {
  switch (kind) {
    case StrategyKind::HighestGradientNorm:
      return vector_norm(grad);
    case StrategyKind::HighestLoss:
      return loss;
    case StrategyKind::Random:
    case StrategyKind::Full:
      return 0.0;
  }
  return 0.0;
}

std::vector<int> select(const SelectionStrategy& strategy, std::span<const ClientScore> scores, std::uint64_t round) {
  std::unordered_set<int> seen;
  for (const ClientScore& s : scores) {
    if (!seen.insert(s.client_id).second) {
      throw std::invalid_argument("duplicate client id " + std::to_string(s.client_id) + " in scores");
    }
    if (!std::isfinite(s.score)) {
      throw std::invalid_argument("non-finite score for client " + std::to_string(s.client_id));
    }
  }
  if (strategy.kind != StrategyKind::Full && strategy.clients_per_round < 1) {
    throw std::invalid_argument("clients_per_round must be at least 1");
  }

  std::vector<ClientScore> ranked(scores.begin(), scores.end());
  std::sort(ranked.begin(), ranked.end(),
            [](const ClientScore& a, const ClientScore& b) { return a.client_id < b.client_id; });
  const std::size_t take =
      strategy.kind == StrategyKind::Full ? ranked.size() : std::min(strategy.clients_per_round, ranked.size());

  switch (strategy.kind) {
    case StrategyKind::HighestGradientNorm:
    case StrategyKind::HighestLoss:
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const ClientScore& a, const ClientScore& b) { return a.score > b.score; });
      break;
    case StrategyKind::Random: {
      rng::Stream stream(rng::derive(strategy.seed, {0x5e1ec7, round}));
      for (std::size_t i = 0; i < take; ++i) {
        std::swap(ranked[i], ranked[i + stream.below(ranked.size() - i)]);
      }
      break;
    }
    case StrategyKind::Full:
      break;
  }

  std::vector<int> selected;
  selected.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    selected.push_back(ranked[i].client_id);
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

}  // namespace fedsel
