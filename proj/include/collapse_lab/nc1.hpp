#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "collapse_lab/linalg_ops.hpp"

namespace collapse_lab {

enum class ProbeDistribution { rademacher, gaussian };

std::string to_string(ProbeDistribution dist);
ProbeDistribution parse_probe_distribution(const std::string& name);

struct SolverDiagnostics {
  std::string method;
  std::size_t solves = 0;
  std::size_t failures = 0;
  std::size_t max_iterations = 0;
  double max_residual = 0.0;
  std::vector<bool> converged;  // per probe
};

struct Nc1Report {
  double value = 0.0;
  std::string mode;  // "exact" or "hutchinson"
  std::size_t probes = 0;
  ProbeDistribution distribution = ProbeDistribution::rademacher;
  std::vector<double> samples;
  double std_error = 0.0;
  SolverDiagnostics solver;
  std::uint64_t seed = 0;
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::size_t num_examples = 0;
  std::vector<std::string> warnings;

  bool all_converged() const noexcept { return solver.failures == 0; }
};

nlohmann::ordered_json to_json(const Nc1Report& report);

/// tr(Sigma_A Sigma_R^+) / |Y| from dense matrices; Sigma_R^+ via SVD with a
/// relative singular-value cutoff of 1e-10.
Nc1Report nc1_exact(const EmbeddingDataset& d, std::size_t dense_limit = kDefaultDenseLimit,
                    kernels::Backend backend = kernels::Backend::parallel);

struct HutchinsonOptions {
  std::size_t probes = 10;
  ProbeDistribution distribution = ProbeDistribution::rademacher;
  std::uint64_t seed = 0;
  SolveOptions solve;
  /// Push all probes through one data pass (O(N K) memory) instead of one
  /// pass per probe (O(N) memory).
  bool block = true;
};

/// Fills `out` with probe j: z_j depends only on (seed, j).
void fill_probe(Vector& out, ProbeDistribution dist, std::uint64_t seed, std::size_t j);

/// Applies a linear map to the columns of a block.
using BlockOperator = std::function<Matrix(const Matrix&)>;

/// Generic Hutchinson trace samples s_j = z_j^T A z_j for an N x N operator.
std::vector<double> hutchinson_samples(std::size_t dim, const BlockOperator& op,
                                       std::size_t probes, ProbeDistribution dist,
                                       std::uint64_t seed);

/// Stochastic NC1 estimate: x_j = Sigma_R^+ z_j, y_j = Sigma_A x_j,
/// s_j = z_j^T y_j, value = mean(s_j) / |Y|.
Nc1Report nc1_hutchinson(const CovarianceOperators& ops, const HutchinsonOptions& opts);
Nc1Report nc1_hutchinson(const EmbeddingDataset& d, const HutchinsonOptions& opts,
                         kernels::Backend backend = kernels::Backend::parallel);

struct MemoryEstimate {
  std::uint64_t feature_dim = 0;
  std::uint64_t exact_bytes = 0;      // two N x N double matrices
  std::uint64_t streaming_bytes = 0;  // three N-vectors of doubles
  std::string exact_gib;
  std::string streaming_mib;
};

MemoryEstimate memory_requirements(std::uint64_t n);

/// Shortest fixed-point rendering of `value` whose relative error is at
/// most `rel_tol` (at most `max_decimals` digits after the point).
std::string format_compact(double value, double rel_tol = 1e-4, int max_decimals = 6);

nlohmann::ordered_json to_json(const MemoryEstimate& est);

}  // namespace collapse_lab
