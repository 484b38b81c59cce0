#include "collapse_lab/linalg_ops.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "collapse_lab/error.hpp"

namespace collapse_lab {

ClassStatistics compute_class_statistics(const EmbeddingDataset& d, kernels::Backend backend) {
  auto cm = kernels::class_means(d.features(), d.class_labels(), d.num_classes(), backend);
  for (std::size_t c = 0; c < cm.counts.size(); ++c) {
    if (cm.counts[c] == 0) throw ValidationError("class " + std::to_string(c) + " is empty");
  }
  ClassStatistics s;
  s.class_means = std::move(cm.means);
  s.class_counts = std::move(cm.counts);
  s.num_examples = d.size();
  s.global_mean = s.class_means.colwise().sum().transpose() /
                  static_cast<double>(s.class_counts.size());
  return s;
}

std::string to_string(PinvMethod method) {
  return method == PinvMethod::gram_exact ? "gram_exact" : "iterative";
}

PinvMethod parse_pinv_method(const std::string& name) {
  if (name == "gram_exact" || name == "gram") return PinvMethod::gram_exact;
  if (name == "iterative" || name == "cgls") return PinvMethod::iterative;
  throw ValidationError("unknown solver '" + name + "' (expected gram_exact or iterative)");
}

CovarianceOperators::CovarianceOperators(std::shared_ptr<const EmbeddingDataset> data,
                                         kernels::Backend backend)
    : data_(std::move(data)), backend_(backend) {
  if (!data_) throw ValidationError("null dataset");
  stats_ = compute_class_statistics(*data_, backend_);
  const auto classes = static_cast<Eigen::Index>(num_classes());
  centered_.resize(static_cast<Eigen::Index>(dim()), classes);
  for (Eigen::Index c = 0; c < classes; ++c) {
    centered_.col(c) = stats_.class_means.row(c).transpose() - stats_.global_mean;
  }

  const Matrix gram = centered_.transpose() * centered_;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  const Vector& values = eig.eigenvalues();
  const double lambda_max = values.size() ? values.maxCoeff() : 0.0;
  double mean_scale = 0.0;
  for (Eigen::Index c = 0; c < classes; ++c) {
    mean_scale = std::max(mean_scale, stats_.class_means.row(c).norm());
  }
  const bool degenerate =
      !(lambda_max > 0.0) || std::sqrt(lambda_max) <= 1e-12 * std::max(1.0, mean_scale);
  if (degenerate) {
    gram_vectors_.resize(classes, 0);
    gram_values_.resize(0);
    return;
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values[i] > kRankCutoff * lambda_max) keep.push_back(i);
  }
  gram_vectors_.resize(classes, static_cast<Eigen::Index>(keep.size()));
  gram_values_.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    gram_vectors_.col(static_cast<Eigen::Index>(k)) = eig.eigenvectors().col(keep[k]);
    gram_values_[static_cast<Eigen::Index>(k)] = values[keep[k]];
  }
}

Vector CovarianceOperators::apply_sigma_a(const Vector& x) const {
  return apply_sigma_a_block(x);
}

Matrix CovarianceOperators::apply_sigma_a_block(const Matrix& block) const {
  if (static_cast<std::size_t>(block.rows()) != dim()) {
    throw ValidationError("dimension mismatch: operator is " + std::to_string(dim()) +
                          "-dimensional, input has " + std::to_string(block.rows()) + " rows");
  }
  return kernels::within_class_apply(data_->features(), data_->class_labels(),
                                     stats_.class_means, block, backend_);
}

Vector CovarianceOperators::apply_sigma_r(const Vector& x) const { return apply_sigma_r_block(x); }

Matrix CovarianceOperators::apply_sigma_r_block(const Matrix& block) const {
  if (static_cast<std::size_t>(block.rows()) != dim()) {
    throw ValidationError("dimension mismatch: operator is " + std::to_string(dim()) +
                          "-dimensional, input has " + std::to_string(block.rows()) + " rows");
  }
  const Matrix coeff = centered_.transpose() * block;
  return centered_ * coeff / static_cast<double>(num_classes());
}

Vector CovarianceOperators::apply(OperatorKind kind, const Vector& x) const {
  return kind == OperatorKind::sigma_a ? apply_sigma_a(x) : apply_sigma_r(x);
}

Vector CovarianceOperators::project_onto_range(const Vector& z) const {
  if (static_cast<std::size_t>(z.size()) != dim()) throw ValidationError("dimension mismatch");
  if (gram_values_.size() == 0) return Vector::Zero(z.size());
  const Vector c = gram_vectors_.transpose() * (centered_.transpose() * z);
  return centered_ * (gram_vectors_ * c.cwiseQuotient(gram_values_));
}

SolveReport CovarianceOperators::apply_sigma_r_pinv(const Vector& z,
                                                    const SolveOptions& opts) const {
  if (static_cast<std::size_t>(z.size()) != dim()) {
    throw ValidationError("dimension mismatch in pseudo-inverse application");
  }
  if (!z.allFinite()) throw ValidationError("right-hand side contains NaN or Inf");
  if (gram_values_.size() == 0) {
    SolveReport r;
    r.solution = Vector::Zero(z.size());
    r.converged = true;
    r.degenerate = true;
    return r;
  }
  if (opts.method == PinvMethod::gram_exact) return solve_gram(z);
  if (!(opts.tol > 0.0)) throw ValidationError("solver tolerance must be positive");
  return solve_iterative(z, opts.tol, opts.max_iter ? opts.max_iter : default_max_iter());
}

// Sigma_R = (1/|Y|) M M^T, so Sigma_R^+ = |Y| M (M^T M)^{+2} M^T.
SolveReport CovarianceOperators::solve_gram(const Vector& z) const {
  const Vector c = gram_vectors_.transpose() * (centered_.transpose() * z);
  const Vector scaled = c.cwiseQuotient(gram_values_.cwiseProduct(gram_values_));
  SolveReport r;
  r.solution = static_cast<double>(num_classes()) * (centered_ * (gram_vectors_ * scaled));
  r.residual_norm = (apply_sigma_r(r.solution) - project_onto_range(z)).norm();
  r.iterations = 0;
  r.converged = true;
  return r;
}

// CGLS on the normal equations Sigma_R^2 x = Sigma_R z from x = 0; iterates
// stay in range(Sigma_R), so the limit is the minimum-norm solution.
SolveReport CovarianceOperators::solve_iterative(const Vector& z, double tol,
                                                 std::size_t max_iter) const {
  const Vector pz = project_onto_range(z);
  const double target = tol * pz.norm();
  SolveReport rep;
  rep.solution = Vector::Zero(z.size());
  Vector ax = Vector::Zero(z.size());
  Vector r = z;
  Vector s = apply_sigma_r(r);
  Vector p = s;
  double gamma = s.squaredNorm();
  rep.residual_norm = pz.norm();
  if (rep.residual_norm <= target || gamma == 0.0) {
    rep.converged = true;
    return rep;
  }
  for (std::size_t it = 1; it <= max_iter; ++it) {
    const Vector q = apply_sigma_r(p);
    const double qq = q.squaredNorm();
    if (qq == 0.0) break;
    const double alpha = gamma / qq;
    rep.solution += alpha * p;
    ax += alpha * q;
    r -= alpha * q;
    rep.iterations = it;
    rep.residual_norm = (pz - ax).norm();
    if (rep.residual_norm <= target) {
      rep.converged = true;
      break;
    }
    s = apply_sigma_r(r);
    const double gamma_next = s.squaredNorm();
    if (gamma_next == 0.0) break;
    p = s + (gamma_next / gamma) * p;
    gamma = gamma_next;
  }
  rep.residual_norm = (apply_sigma_r(rep.solution) - pz).norm();
  if (!rep.converged) rep.converged = rep.residual_norm <= target;
  return rep;
}

Matrix CovarianceOperators::build_dense(OperatorKind kind, std::size_t dense_limit) const {
  if (dim() > dense_limit) {
    throw ValidationError("feature dimension " + std::to_string(dim()) +
                          " exceeds the dense limit " + std::to_string(dense_limit));
  }
  const auto n = static_cast<Eigen::Index>(dim());
  if (kind == OperatorKind::sigma_a) return apply_sigma_a_block(Matrix::Identity(n, n));
  return centered_ * centered_.transpose() / static_cast<double>(num_classes());
}

}  // namespace collapse_lab
