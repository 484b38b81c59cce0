#include "collapse_lab/kernels.hpp"

#include "collapse_lab/error.hpp"

namespace collapse_lab::kernels::serial {

ClassMeans class_means(const RowMatrix& features, std::span<const std::uint32_t> labels,
                       std::size_t num_classes) {
  const auto m = static_cast<std::size_t>(features.rows());
  const auto n = static_cast<std::size_t>(features.cols());
  ClassMeans out{RowMatrix::Zero(static_cast<Eigen::Index>(num_classes), features.cols()),
                 std::vector<std::size_t>(num_classes, 0)};
  for (std::size_t i = 0; i < m; ++i) {
    const double* f = features.data() + i * n;
    double* acc = out.means.data() + labels[i] * n;
    for (std::size_t j = 0; j < n; ++j) acc[j] += f[j];
    ++out.counts[labels[i]];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (out.counts[c] == 0) continue;
    const double inv = 1.0 / static_cast<double>(out.counts[c]);
    double* acc = out.means.data() + c * n;
    for (std::size_t j = 0; j < n; ++j) acc[j] *= inv;
  }
  return out;
}

Matrix within_class_apply(const RowMatrix& features, std::span<const std::uint32_t> labels,
                          const RowMatrix& means, const Matrix& x) {
  const auto m = static_cast<std::size_t>(features.rows());
  const auto n = static_cast<std::size_t>(features.cols());
  const auto k = static_cast<std::size_t>(x.cols());
  if (static_cast<std::size_t>(x.rows()) != n) {
    throw ValidationError("dimension mismatch in Sigma_A application");
  }
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  std::vector<double> centered(n);
  std::vector<double> coeff(k);
  for (std::size_t i = 0; i < m; ++i) {
    const double* f = features.data() + i * n;
    const double* mu = means.data() + labels[i] * n;
    for (std::size_t j = 0; j < n; ++j) centered[j] = f[j] - mu[j];
    for (std::size_t c = 0; c < k; ++c) {
      const double* xc = x.data() + c * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += centered[j] * xc[j];
      coeff[c] = s;
    }
    for (std::size_t c = 0; c < k; ++c) {
      double* oc = out.data() + c * n;
      const double a = coeff[c];
      for (std::size_t j = 0; j < n; ++j) oc[j] += centered[j] * a;
    }
  }
  out *= 1.0 / static_cast<double>(m);
  return out;
}

RowMatrix linear_scores(const RowMatrix& features, const RowMatrix& weights,
                        const Vector& bias) {
  const auto m = static_cast<std::size_t>(features.rows());
  const auto n = static_cast<std::size_t>(features.cols());
  const auto classes = static_cast<std::size_t>(weights.rows());
  RowMatrix out(features.rows(), weights.rows());
  for (std::size_t i = 0; i < m; ++i) {
    const double* f = features.data() + i * n;
    for (std::size_t c = 0; c < classes; ++c) {
      const double* w = weights.data() + c * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += f[j] * w[j];
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = s + bias[c];
    }
  }
  return out;
}

}  // namespace collapse_lab::kernels::serial
