#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "collapse_lab/balancing.hpp"
#include "collapse_lab/dataset.hpp"
#include "collapse_lab/kernels.hpp"

namespace collapse_lab {

/// Multiclass linear layer: score_c(x) = <theta_c, x> + b_c. The decision is
/// the argmax over classes with ties going to the lowest class id.
struct LinearClassifier {
  RowMatrix weights;  // |Y| x N
  Vector bias;        // |Y|

  static LinearClassifier zeros(std::size_t num_classes, std::size_t dim);

  std::size_t num_classes() const noexcept { return static_cast<std::size_t>(weights.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(weights.cols()); }

  RowMatrix scores(const RowMatrix& features,
                   kernels::Backend backend = kernels::Backend::parallel) const;
  std::vector<std::uint32_t> predict(const RowMatrix& features,
                                     kernels::Backend backend = kernels::Backend::parallel) const;
  /// Softmax probability of `labels[i]` for every row.
  std::vector<double> true_class_probability(const RowMatrix& features,
                                             std::span<const std::uint32_t> labels) const;

  LinearClassifier scaled(double factor) const;
};

/// Binary (+1/-1) form of a two-class classifier: theta = theta_1 - theta_0,
/// b = b_1 - b_0. Class 1 maps to +1.
struct BinaryLinear {
  Vector theta;
  double bias = 0.0;
};

BinaryLinear to_binary(const LinearClassifier& clf);
LinearClassifier from_binary(const BinaryLinear& binary);

struct TrainConfig {
  double learning_rate = 0.01;
  /// Total gradient steps; ignored when `epochs` > 0.
  std::size_t steps = 1000;
  /// Passes over the (possibly subset) training set; each epoch is
  /// ceil(m / batch_size) steps.
  std::size_t epochs = 0;
  /// 0 means full-batch gradient descent.
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t total_steps(std::size_t num_examples) const;
};

/// Per-example loss weights or sampling law applied during training.
struct TrainingPlan {
  std::optional<BalancePlan> balance;
  std::optional<std::vector<double>> weights;  // e.g. AfrWeights::weights

  static TrainingPlan none() { return {}; }
  static TrainingPlan from(BalancePlan plan);
  static TrainingPlan from_weights(std::vector<double> weights);
};

/// Called after every step with (step, classifier); step counts from 1.
using StepCallback = std::function<void(std::size_t, const LinearClassifier&)>;

/// Weighted mean cross-entropy sum_i w_i l_i / sum_i w_i over `rows`
/// (all rows when `rows` is empty), and its gradient.
struct LossAndGradient {
  double loss = 0.0;
  RowMatrix grad_weights;
  Vector grad_bias;
};

LossAndGradient cross_entropy(const LinearClassifier& clf, const RowMatrix& features,
                              std::span<const std::uint32_t> labels,
                              std::span<const double> weights);

/// Trains a zero-initialized linear layer by (mini-batch) gradient descent
/// on the unregularized, optionally weighted, cross-entropy.
///
/// - loss_weights plans and explicit weights rescale each example's loss;
///   weights are normalized to mean one so the objective is
///   sum_i w_i l_i / sum_i w_i.
/// - sampling_probabilities plans draw each mini-batch with replacement.
/// - subset_indices plans restrict training to the subset; epochs count
///   over the subset.
///
/// Throws NumericalError if the loss becomes non-finite.
LinearClassifier train_linear(const EmbeddingDataset& d, const TrainConfig& cfg,
                              const TrainingPlan& plan = {},
                              const StepCallback& on_step = {});

/// Same, on raw features and labels.
LinearClassifier train_linear(const RowMatrix& features, std::span<const std::uint32_t> labels,
                              std::size_t num_classes, const TrainConfig& cfg,
                              const TrainingPlan& plan = {}, const StepCallback& on_step = {});

/// Normalized training weights that train_linear would use (mean one),
/// or all ones when the plan carries no weights.
std::vector<double> effective_weights(const TrainingPlan& plan, std::size_t num_examples);

struct EvalReport {
  std::vector<std::optional<double>> group_accuracy;  // absent for empty groups
  std::vector<std::size_t> group_counts;
  std::vector<std::size_t> group_correct;
  double worst_group_accuracy = 0.0;
  double average_accuracy = 0.0;
  std::vector<std::optional<double>> group_min_margin;  // binary tasks only
  std::vector<std::string> warnings;
};

EvalReport evaluate(const LinearClassifier& clf, const EmbeddingDataset& d,
                    kernels::Backend backend = kernels::Backend::parallel);

nlohmann::ordered_json to_json(const EvalReport& report);
/// Header line and one data row.
std::string to_csv(const EvalReport& report);

/// Per group, the minimum of y_i (<x_i, theta> + b) over correctly classified
/// points; absent when a group has no correctly classified point.
std::vector<std::optional<double>> min_group_margins(const BinaryLinear& clf,
                                                     const EmbeddingDataset& d);
std::vector<std::optional<double>> min_group_margins(const LinearClassifier& clf,
                                                     const EmbeddingDataset& d);

/// Sample Pearson correlation. Throws ValidationError for fewer than two
/// points, mismatched lengths or a constant input.
double pearson(std::span<const double> x, std::span<const double> y);

void save_classifier(const LinearClassifier& clf, const std::filesystem::path& stem);
LinearClassifier load_classifier(const std::filesystem::path& header_path);

}  // namespace collapse_lab
