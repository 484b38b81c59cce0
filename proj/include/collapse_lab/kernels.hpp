#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "collapse_lab/dataset.hpp"

// Streaming data-pass kernels. Each kernel has a serial reference version
// and an OpenMP version. The OpenMP versions partition work so that every
// output element is accumulated over examples in the same order as the
// serial loop, which makes the two bit-identical for any thread count.
namespace collapse_lab::kernels {

enum class Backend { serial, parallel };

struct ClassMeans {
  RowMatrix means;  // |Y| x N
  std::vector<std::size_t> counts;
};

/// Rows of `probe_coeffs` for one tile of examples are formed in this many rows.
inline constexpr std::size_t kTileRows = 256;

namespace serial {

ClassMeans class_means(const RowMatrix& features, std::span<const std::uint32_t> labels,
                       std::size_t num_classes);

/// out = (1/m) * sum_i (f_i - mu_{y_i}) (f_i - mu_{y_i})^T X, X is N x K.
Matrix within_class_apply(const RowMatrix& features, std::span<const std::uint32_t> labels,
                          const RowMatrix& means, const Matrix& x);

/// scores(i, c) = <f_i, weights.row(c)> + bias(c).
RowMatrix linear_scores(const RowMatrix& features, const RowMatrix& weights,
                        const Vector& bias);

}  // namespace serial

namespace parallel {

ClassMeans class_means(const RowMatrix& features, std::span<const std::uint32_t> labels,
                       std::size_t num_classes);

Matrix within_class_apply(const RowMatrix& features, std::span<const std::uint32_t> labels,
                          const RowMatrix& means, const Matrix& x);

RowMatrix linear_scores(const RowMatrix& features, const RowMatrix& weights,
                        const Vector& bias);

}  // namespace parallel

ClassMeans class_means(const RowMatrix& features, std::span<const std::uint32_t> labels,
                       std::size_t num_classes, Backend backend);

Matrix within_class_apply(const RowMatrix& features, std::span<const std::uint32_t> labels,
                          const RowMatrix& means, const Matrix& x, Backend backend);

RowMatrix linear_scores(const RowMatrix& features, const RowMatrix& weights, const Vector& bias,
                        Backend backend);

/// Caps the OpenMP worker count (no-op when built without OpenMP).
void set_thread_limit(int threads);
int thread_limit();

}  // namespace collapse_lab::kernels
