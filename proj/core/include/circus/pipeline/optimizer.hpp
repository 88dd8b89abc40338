#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace circus::pipeline {

struct Objective {
  enum class Kind { maximize, minimize, target } kind = Kind::minimize;
  double value = 0.0;  // only for target
};

struct ParamRange {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;
  /// Proposals are snapped to lo + k*step when set.
  std::optional<double> step;
};

enum class OptimizerKind { automatic, golden_section, coordinate };

struct FeedbackSpec {
  std::string observable;
  Objective objective;
  OptimizerKind optimizer = OptimizerKind::automatic;
  std::vector<ParamRange> params;
  std::uint32_t budget = 20;
  /// Cost at or below which the loop counts as converged.
  double tolerance = 0.0;

  /// Throws InvalidArgument.
  void validate() const;
};

using ParamSet = std::map<std::string, double>;

struct HistoryEntry {
  ParamSet params;
  double observable = 0.0;
};

/// Lower is better: obs, -obs or |obs - target|.
double cost(const Objective& objective, double observable);

/// Next parameter set. The optimizers are replayed from the history, which is
/// assumed to hold the evaluations of earlier proposals in order. The first
/// proposal is the center of the bounds. Throws OptimizerExhausted once the
/// history has reached the budget.
ParamSet propose_parameters(const FeedbackSpec& spec, const std::vector<HistoryEntry>& history);

/// Index of the lowest-cost entry; nullopt for an empty history.
std::optional<std::size_t> best_entry(const FeedbackSpec& spec, const std::vector<HistoryEntry>& history);
bool converged(const FeedbackSpec& spec, const std::vector<HistoryEntry>& history);

nlohmann::json feedback_to_json(const FeedbackSpec& spec);
/// Throws SchemaViolation on a malformed document.
FeedbackSpec feedback_from_json(const nlohmann::json& j);

}  // namespace circus::pipeline
