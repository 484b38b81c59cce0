#pragma once

#include <cstddef>
#include <memory>
#include <string>

#include "collapse_lab/dataset.hpp"
#include "collapse_lab/kernels.hpp"

namespace collapse_lab {

struct ClassStatistics {
  RowMatrix class_means;  // |Y| x N, row y is mu_y
  Vector global_mean;     // unweighted mean of the class means
  std::vector<std::size_t> class_counts;
  std::size_t num_examples = 0;

  std::size_t num_classes() const noexcept { return class_counts.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(global_mean.size()); }
};

/// Exact class means from one data pass. Throws ValidationError on an empty class.
ClassStatistics compute_class_statistics(const EmbeddingDataset& d,
                                         kernels::Backend backend = kernels::Backend::parallel);

enum class OperatorKind { sigma_a, sigma_r };

enum class PinvMethod { gram_exact, iterative };

std::string to_string(PinvMethod method);
PinvMethod parse_pinv_method(const std::string& name);

struct SolveReport {
  Vector solution;
  /// ||Sigma_R x - P z|| with P the orthogonal projector onto range(Sigma_R).
  double residual_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  /// Set when all class means coincide and Sigma_R is the zero operator.
  bool degenerate = false;
};

struct SolveOptions {
  PinvMethod method = PinvMethod::gram_exact;
  double tol = 1e-8;
  /// 0 selects the default 10 * |Y| + 50.
  std::size_t max_iter = 0;
};

inline constexpr std::size_t kDefaultDenseLimit = 2048;
inline constexpr double kRankCutoff = 1e-10;

/// Matrix-free access to the within-class covariance Sigma_A and the
/// between-class covariance Sigma_R of a dataset.
///
/// Sigma_A x streams over the examples; Sigma_R x touches only the class
/// means. Neither operator is ever materialized unless build_dense is called.
class CovarianceOperators {
 public:
  explicit CovarianceOperators(std::shared_ptr<const EmbeddingDataset> data,
                               kernels::Backend backend = kernels::Backend::parallel);

  const EmbeddingDataset& data() const noexcept { return *data_; }
  const ClassStatistics& stats() const noexcept { return stats_; }
  std::size_t dim() const noexcept { return stats_.dim(); }
  std::size_t num_classes() const noexcept { return stats_.num_classes(); }
  kernels::Backend backend() const noexcept { return backend_; }

  /// Centered class means as columns (N x |Y|).
  const Matrix& centered_means() const noexcept { return centered_; }

  Vector apply_sigma_a(const Vector& x) const;
  /// Applies Sigma_A to the K columns of `block` in a single data pass.
  Matrix apply_sigma_a_block(const Matrix& block) const;

  Vector apply_sigma_r(const Vector& x) const;
  Matrix apply_sigma_r_block(const Matrix& block) const;

  Vector apply(OperatorKind kind, const Vector& x) const;

  /// Orthogonal projection onto span{mu_y - mu_G}.
  Vector project_onto_range(const Vector& z) const;

  /// Minimum-norm least-squares solution of Sigma_R x = z.
  SolveReport apply_sigma_r_pinv(const Vector& z, const SolveOptions& opts = {}) const;

  /// Materializes an operator as a dense N x N matrix (test oracle and exact NC1).
  Matrix build_dense(OperatorKind kind, std::size_t dense_limit = kDefaultDenseLimit) const;

  std::size_t default_max_iter() const noexcept { return 10 * num_classes() + 50; }

 private:
  SolveReport solve_gram(const Vector& z) const;
  SolveReport solve_iterative(const Vector& z, double tol, std::size_t max_iter) const;

  std::shared_ptr<const EmbeddingDataset> data_;
  kernels::Backend backend_;
  ClassStatistics stats_;
  Matrix centered_;  // N x |Y|

  // Eigendecomposition of the Gram matrix M^T M of the centered means,
  // restricted to eigenvalues above the rank cutoff.
  Matrix gram_vectors_;
  Vector gram_values_;
};

}  // namespace collapse_lab
