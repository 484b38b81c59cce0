#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "collapse_lab/balancing.hpp"
#include "collapse_lab/retrain.hpp"
#include "collapse_lab/synth.hpp"

namespace collapse_lab {

/// How the retraining stage rebalances its held-out set.
struct RetrainMethod {
  enum class Kind { none, subset, upsample, upweight, afr };
  Kind kind = Kind::none;
  BalanceAxis axis = BalanceAxis::group;
  double afr_gamma = 0.0;

  /// "none", "subset-group", "upweight-class", "afr", "afr:4.0", ...
  static RetrainMethod parse(const std::string& text);
  std::string name() const;
};

/// Training plan for a method on held-out data. AFR needs the stage-one
/// classifier to score the held-out examples.
TrainingPlan make_training_plan(const RetrainMethod& method, const EmbeddingDataset& heldout,
                                std::uint64_t seed, const LinearClassifier* reference);

/// Full factorial two-stage experiment on the synthetic testbed.
///
/// For each seed and stage-one ratio e, a training set with group ratio e
/// trains the reference classifier, and a separate held-out set with ratio L
/// is drawn for every retraining ratio. All cells of a seed share one
/// group-balanced test set.
struct SweepConfig {
  SpuriousSpec testbed;  // counts and seed are overridden per cell
  std::vector<double> erm_ratios{0.05, 0.1, 0.2, 0.5, 1.0};
  std::vector<double> llr_ratios{0.05, 0.1, 0.2, 0.5, 1.0};
  std::vector<RetrainMethod> methods{RetrainMethod{}};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t erm_majority = 500;
  std::size_t heldout_majority = 500;
  std::size_t test_per_group = 500;
  TrainConfig erm_train{0.01, 0, 20, 32, 0};
  TrainConfig llr_train{0.01, 0, 20, 32, 0};
  /// Worker threads over cells; 0 uses the global thread limit.
  int workers = 0;

  void validate() const;
};

struct CellResult {
  double erm_ratio = 0.0;
  std::optional<double> llr_ratio;  // absent for stage-one rows
  std::string method;
  std::uint64_t seed = 0;
  std::string status = "ok";
  std::optional<double> wga;
  std::optional<double> aa;
  std::vector<std::optional<double>> group_accuracy;
};

struct AggregateRow {
  std::string stage;  // "erm" or "llr"
  double erm_ratio = 0.0;
  std::optional<double> llr_ratio;
  std::string method;
  std::size_t n = 0;
  std::optional<double> wga_mean;
  std::optional<double> wga_std;
  std::optional<double> aa_mean;
  std::optional<double> aa_std;
};

/// Correlation across stage-one ratios between mean reference WGA and mean
/// retrained WGA at one retraining ratio. A row with no llr_ratio is the
/// average over retraining ratios, undefined if any of its inputs is.
struct PearsonRow {
  std::string method;
  std::optional<double> llr_ratio;
  std::optional<double> r;
  std::string status = "ok";
};

struct SweepResult {
  std::size_t num_groups = 0;
  std::vector<CellResult> erm_rows;
  std::vector<CellResult> rows;
  std::vector<AggregateRow> aggregates;
  std::vector<PearsonRow> pearson;
};

SweepResult run_sweep(const SweepConfig& cfg);

/// Aggregates and Pearson rows recomputed from cell rows.
std::vector<AggregateRow> aggregate_rows(const SweepConfig& cfg, const SweepResult& r);
std::vector<PearsonRow> pearson_rows(const SweepConfig& cfg, const SweepResult& r);

std::string rows_csv(const SweepResult& r);
std::string erm_rows_csv(const SweepResult& r);
std::string aggregate_csv(const SweepResult& r);
std::string pearson_csv(const SweepResult& r);

/// Seeds of the per-cell datasets.
std::uint64_t train_seed(std::uint64_t seed, double erm_ratio);
std::uint64_t heldout_seed(std::uint64_t seed, double erm_ratio, double llr_ratio);
std::uint64_t test_seed(std::uint64_t seed);

}  // namespace collapse_lab
