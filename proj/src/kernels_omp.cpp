#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "collapse_lab/error.hpp"
#include "collapse_lab/kernels.hpp"

namespace collapse_lab::kernels {

namespace parallel {

namespace {
constexpr std::ptrdiff_t kColBlock = 64;
}  // namespace

ClassMeans class_means(const RowMatrix& features, std::span<const std::uint32_t> labels,
                       std::size_t num_classes) {
  const auto m = static_cast<std::ptrdiff_t>(features.rows());
  const auto n = static_cast<std::ptrdiff_t>(features.cols());
  ClassMeans out{RowMatrix::Zero(static_cast<Eigen::Index>(num_classes), features.cols()),
                 std::vector<std::size_t>(num_classes, 0)};
  for (std::ptrdiff_t i = 0; i < m; ++i) ++out.counts[labels[i]];

  // Each thread owns a slice of feature columns and sweeps the rows in order.
  double* acc = out.means.data();
  const double* f = features.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j0 = 0; j0 < n; j0 += kColBlock) {
    const std::ptrdiff_t j1 = std::min(n, j0 + kColBlock);
    for (std::ptrdiff_t i = 0; i < m; ++i) {
      const double* row = f + i * n;
      double* a = acc + static_cast<std::ptrdiff_t>(labels[i]) * n;
      for (std::ptrdiff_t j = j0; j < j1; ++j) a[j] += row[j];
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (out.counts[c] == 0) continue;
    const double inv = 1.0 / static_cast<double>(out.counts[c]);
    double* a = acc + static_cast<std::ptrdiff_t>(c) * n;
    for (std::ptrdiff_t j = 0; j < n; ++j) a[j] *= inv;
  }
  return out;
}

Matrix within_class_apply(const RowMatrix& features, std::span<const std::uint32_t> labels,
                          const RowMatrix& means, const Matrix& x) {
  const auto m = static_cast<std::ptrdiff_t>(features.rows());
  const auto n = static_cast<std::ptrdiff_t>(features.cols());
  const auto k = static_cast<std::ptrdiff_t>(x.cols());
  if (x.rows() != n) throw ValidationError("dimension mismatch in Sigma_A application");

  Matrix out = Matrix::Zero(x.rows(), x.cols());
  const auto tile = static_cast<std::ptrdiff_t>(kTileRows);
  // Per tile: centered rows (tile x N) and their probe coefficients (tile x K).
  RowMatrix centered(tile, n);
  RowMatrix coeff(tile, k);
  const double* f = features.data();
  const double* mu = means.data();
  const double* xd = x.data();
  double* od = out.data();

  for (std::ptrdiff_t t0 = 0; t0 < m; t0 += tile) {
    const std::ptrdiff_t rows = std::min(tile, m - t0);
#pragma omp parallel
    {
#pragma omp for schedule(static)
      for (std::ptrdiff_t r = 0; r < rows; ++r) {
        const double* fr = f + (t0 + r) * n;
        const double* mr = mu + static_cast<std::ptrdiff_t>(labels[t0 + r]) * n;
        double* cr = centered.data() + r * n;
        for (std::ptrdiff_t j = 0; j < n; ++j) cr[j] = fr[j] - mr[j];
        for (std::ptrdiff_t c = 0; c < k; ++c) {
          const double* xc = xd + c * n;
          double s = 0.0;
          for (std::ptrdiff_t j = 0; j < n; ++j) s += cr[j] * xc[j];
          coeff(r, c) = s;
        }
      }
      // Output rows are disjoint across threads; rows of the tile are added
      // in example order, matching the serial accumulation order.
#pragma omp for schedule(static)
      for (std::ptrdiff_t j0 = 0; j0 < n; j0 += kColBlock) {
        const std::ptrdiff_t j1 = std::min(n, j0 + kColBlock);
        for (std::ptrdiff_t r = 0; r < rows; ++r) {
          const double* cr = centered.data() + r * n;
          for (std::ptrdiff_t c = 0; c < k; ++c) {
            const double a = coeff(r, c);
            double* oc = od + c * n;
            for (std::ptrdiff_t j = j0; j < j1; ++j) oc[j] += cr[j] * a;
          }
        }
      }
    }
  }
  out *= 1.0 / static_cast<double>(m);
  return out;
}

RowMatrix linear_scores(const RowMatrix& features, const RowMatrix& weights,
                        const Vector& bias) {
  const auto m = static_cast<std::ptrdiff_t>(features.rows());
  const auto n = static_cast<std::ptrdiff_t>(features.cols());
  const auto classes = static_cast<std::ptrdiff_t>(weights.rows());
  RowMatrix out(features.rows(), weights.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    const double* f = features.data() + i * n;
    for (std::ptrdiff_t c = 0; c < classes; ++c) {
      const double* w = weights.data() + c * n;
      double s = 0.0;
      for (std::ptrdiff_t j = 0; j < n; ++j) s += f[j] * w[j];
      out(i, c) = s + bias[c];
    }
  }
  return out;
}

}  // namespace parallel

ClassMeans class_means(const RowMatrix& features, std::span<const std::uint32_t> labels,
                       std::size_t num_classes, Backend backend) {
  return backend == Backend::serial ? serial::class_means(features, labels, num_classes)
                                    : parallel::class_means(features, labels, num_classes);
}

Matrix within_class_apply(const RowMatrix& features, std::span<const std::uint32_t> labels,
                          const RowMatrix& means, const Matrix& x, Backend backend) {
  return backend == Backend::serial ? serial::within_class_apply(features, labels, means, x)
                                    : parallel::within_class_apply(features, labels, means, x);
}

RowMatrix linear_scores(const RowMatrix& features, const RowMatrix& weights, const Vector& bias,
                        Backend backend) {
  return backend == Backend::serial ? serial::linear_scores(features, weights, bias)
                                    : parallel::linear_scores(features, weights, bias);
}

void set_thread_limit(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int thread_limit() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace collapse_lab::kernels
