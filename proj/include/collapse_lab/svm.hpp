#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "collapse_lab/dataset.hpp"
#include "collapse_lab/retrain.hpp"

namespace collapse_lab {

struct SvmOptions {
  /// KKT violation tolerance of the dual solver. Hard margin measures it
  /// relative to the squared data radius.
  double tol = 1e-14;
  std::size_t max_iter = 1'000'000;
  /// Fit an unpenalized intercept b. When false the separator passes
  /// through the origin (no equality constraint in the dual).
  bool intercept = true;
  /// Box constraint. Infinity gives the hard-margin problem.
  double c = std::numeric_limits<double>::infinity();
  /// Perceptron passes used as a quick separability certificate.
  std::size_t perceptron_passes = 1000;
};

struct SvmSolution {
  Vector theta;
  double bias = 0.0;
  std::vector<std::size_t> support_vectors;
  std::vector<double> dual;  // alpha_i
  double geometric_margin = 0.0;  // 1 / ||theta||
  std::size_t iterations = 0;
  bool soft_margin = false;
  bool perceptron_certified = false;
};

/// Max-margin separator of points X (n x N) with labels in {-1, +1}.
///
/// Hard margin is solved as the nearest-points problem between the convex
/// hulls of the two classes (of the points y_i x_i without an intercept) by
/// pairwise updates; theta = 2 u / ||u||^2 for the hull gap u. A gap below
/// 1e-6 of the data radius, or a violated primal constraint, throws
/// InfeasibleError. With finite `c` the soft-margin dual is solved by SMO
/// instead and `soft_margin` is set.
SvmSolution fit_hard_margin(const RowMatrix& x, std::span<const double> y,
                            const SvmOptions& opts = {});

/// ||a/||a|| - b/||b|| ||_2. Throws ValidationError on a zero vector.
double directional_error(const Vector& a, const Vector& b);

/// Binary labels (+1 for class 1, -1 for class 0) of a two-class dataset.
std::vector<double> signed_labels(const EmbeddingDataset& d);

struct TracePoint {
  std::size_t step = 0;
  double directional_error = 0.0;
  double train_loss = 0.0;
};

struct ImplicitBiasTrace {
  std::vector<TracePoint> points;
  SvmSolution reference;  // max-margin solution in the trained parameterization
};

/// Trains the unregularized logistic classifier with intercept and records
/// the directional error between its weight vector and the max-margin
/// separator at each checkpoint. Gradient descent with an unpenalized
/// intercept converges in direction to the max-margin separator of the
/// features augmented with a constant 1, so that is the reference; only the
/// weight part (not the intercept) enters the directional error.
ImplicitBiasTrace implicit_bias_trace(const EmbeddingDataset& d, const TrainConfig& cfg,
                                      std::span<const std::size_t> checkpoints,
                                      const SvmOptions& svm_opts = {});

}  // namespace collapse_lab
