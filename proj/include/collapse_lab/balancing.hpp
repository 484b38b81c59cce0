#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "collapse_lab/dataset.hpp"

namespace collapse_lab {

enum class BalanceAxis { class_label, group };

enum class PlanKind { subset_indices, sampling_probabilities, loss_weights };

std::string to_string(BalanceAxis axis);
std::string to_string(PlanKind kind);
BalanceAxis parse_balance_axis(const std::string& name);

/// Output of a balancing strategy. Exactly one payload is populated,
/// according to `kind`.
struct BalancePlan {
  PlanKind kind = PlanKind::loss_weights;
  BalanceAxis axis = BalanceAxis::class_label;
  std::uint64_t seed = 0;
  std::vector<std::size_t> indices;  // subset_indices, ascending
  std::vector<double> values;        // probabilities or weights, length m

  /// Throws ValidationError if the payload breaks the plan invariants.
  void validate(std::size_t num_examples) const;
};

nlohmann::ordered_json to_json(const BalancePlan& plan);
BalancePlan plan_from_json(const nlohmann::json& j);

/// Uniformly subsamples every partition along `axis` down to the size of the
/// smallest one.
BalancePlan plan_subsetting(const EmbeddingDataset& d, BalanceAxis axis, std::uint64_t seed);

/// Two-step sampling law: pick a partition uniformly, then an example
/// uniformly inside it. p_i = 1 / (num_partitions * |partition(i)|).
BalancePlan plan_upsampling(const EmbeddingDataset& d, BalanceAxis axis);

/// Loss weight largest_partition_size / |partition(i)|; the largest
/// partition gets weight 1.
BalancePlan plan_upweighting(const EmbeddingDataset& d, BalanceAxis axis);

/// Draws `count` example indices with replacement from a sampling plan.
std::vector<std::size_t> draw_from_plan(const BalancePlan& plan, std::size_t count,
                                        std::uint64_t seed);

/// Example weighting for loss-based reweighting of held-out data:
///   w_i = beta_{y_i} exp(-gamma p_i) / sum_j beta_{y_j} exp(-gamma p_j)
/// where beta_y is 1 / (count of class y) and p_i the model probability of
/// the true class. `gamma` is the inverse temperature, unrelated to the
/// class-imbalance ratio used by plan_upweighting.
struct AfrWeights {
  std::vector<double> weights;
  double gamma = 0.0;
  std::vector<double> class_factors;  // beta_y
};

AfrWeights afr_weights(std::span<const double> correct_class_probs,
                       std::span<const std::uint32_t> class_labels, double gamma,
                       std::size_t num_classes);

/// Same formula with caller-supplied class factors (used to check
/// invariance under a common rescaling of beta).
std::vector<double> afr_weights_with_factors(std::span<const double> correct_class_probs,
                                             std::span<const std::uint32_t> class_labels,
                                             double gamma,
                                             std::span<const double> class_factors);

/// Partition id of each example along an axis, and the partition count.
std::vector<std::uint32_t> partition_labels(const EmbeddingDataset& d, BalanceAxis axis);
std::size_t partition_count(const EmbeddingDataset& d, BalanceAxis axis);

}  // namespace collapse_lab
