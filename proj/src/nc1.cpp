#include "collapse_lab/nc1.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include <Eigen/SVD>

#include "collapse_lab/error.hpp"
#include "collapse_lab/rng.hpp"

namespace collapse_lab {

namespace {

std::shared_ptr<const EmbeddingDataset> borrow(const EmbeddingDataset& d) {
  return {std::shared_ptr<void>{}, &d};
}

void finish_statistics(Nc1Report& rep, std::size_t num_classes) {
  const auto k = rep.samples.size();
  const double sum = std::accumulate(rep.samples.begin(), rep.samples.end(), 0.0);
  const double mean = sum / static_cast<double>(k);
  rep.value = mean / static_cast<double>(num_classes);
  if (k > 1) {
    double ss = 0.0;
    for (double s : rep.samples) ss += (s - mean) * (s - mean);
    const double sample_std = std::sqrt(ss / static_cast<double>(k - 1));
    // Standard error of the NC1 value, i.e. of mean(s_j) / |Y|.
    rep.std_error = sample_std / std::sqrt(static_cast<double>(k)) /
                    static_cast<double>(num_classes);
  } else {
    rep.std_error = 0.0;
  }
}

}  // namespace

std::string to_string(ProbeDistribution dist) {
  return dist == ProbeDistribution::rademacher ? "rademacher" : "gaussian";
}

ProbeDistribution parse_probe_distribution(const std::string& name) {
  if (name == "rademacher") return ProbeDistribution::rademacher;
  if (name == "gaussian" || name == "normal") return ProbeDistribution::gaussian;
  throw ValidationError("unknown probe distribution '" + name + "'");
}

void fill_probe(Vector& out, ProbeDistribution dist, std::uint64_t seed, std::size_t j) {
  CounterRng rng(seed, j);
  if (dist == ProbeDistribution::rademacher) {
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = rng.rademacher();
  } else {
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = rng.normal();
  }
}

std::vector<double> hutchinson_samples(std::size_t dim, const BlockOperator& op,
                                       std::size_t probes, ProbeDistribution dist,
                                       std::uint64_t seed) {
  if (probes == 0) throw ValidationError("probe count K must be at least 1");
  const auto n = static_cast<Eigen::Index>(dim);
  Matrix z(n, static_cast<Eigen::Index>(probes));
  Vector col(n);
  for (std::size_t j = 0; j < probes; ++j) {
    fill_probe(col, dist, seed, j);
    z.col(static_cast<Eigen::Index>(j)) = col;
  }
  const Matrix az = op(z);
  std::vector<double> s(probes);
  for (std::size_t j = 0; j < probes; ++j) {
    s[j] = z.col(static_cast<Eigen::Index>(j)).dot(az.col(static_cast<Eigen::Index>(j)));
  }
  return s;
}

Nc1Report nc1_exact(const EmbeddingDataset& d, std::size_t dense_limit,
                    kernels::Backend backend) {
  CovarianceOperators ops(borrow(d), backend);
  const Matrix sigma_a = ops.build_dense(OperatorKind::sigma_a, dense_limit);
  const Matrix sigma_r = ops.build_dense(OperatorKind::sigma_r, dense_limit);

  Nc1Report rep;
  rep.mode = "exact";
  rep.num_classes = d.num_classes();
  rep.dim = d.dim();
  rep.num_examples = d.size();
  rep.solver.method = "dense_svd";

  Eigen::BDCSVD<Matrix> svd(sigma_r, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double smax = sv.size() ? sv[0] : 0.0;
  Vector inv = Vector::Zero(sv.size());
  if (smax > 0.0) {
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
      if (sv[i] > kRankCutoff * smax) inv[i] = 1.0 / sv[i];
    }
  }
  if (!(smax > 0.0) || inv.isZero()) {
    rep.warnings.push_back("degenerate geometry: all class means coincide, Sigma_R = 0");
    rep.value = 0.0;
    return rep;
  }
  const Matrix pinv = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  // tr(A B) = sum_ij A_ij B_ji
  rep.value = sigma_a.cwiseProduct(pinv.transpose()).sum() / static_cast<double>(d.num_classes());
  return rep;
}

Nc1Report nc1_hutchinson(const CovarianceOperators& ops, const HutchinsonOptions& opts) {
  if (opts.probes == 0) throw ValidationError("probe count K must be at least 1");
  Nc1Report rep;
  rep.mode = "hutchinson";
  rep.probes = opts.probes;
  rep.distribution = opts.distribution;
  rep.seed = opts.seed;
  rep.num_classes = ops.num_classes();
  rep.dim = ops.dim();
  rep.num_examples = ops.data().size();
  rep.solver.method = to_string(opts.solve.method);
  rep.solver.converged.assign(opts.probes, true);
  rep.samples.assign(opts.probes, 0.0);

  const auto n = static_cast<Eigen::Index>(ops.dim());
  bool degenerate = false;
  auto record = [&](std::size_t j, const SolveReport& sr) {
    ++rep.solver.solves;
    rep.solver.converged[j] = sr.converged;
    if (!sr.converged) ++rep.solver.failures;
    rep.solver.max_iterations = std::max(rep.solver.max_iterations, sr.iterations);
    rep.solver.max_residual = std::max(rep.solver.max_residual, sr.residual_norm);
    degenerate = degenerate || sr.degenerate;
  };

  Vector z(n);
  if (opts.block) {
    Matrix zs(n, static_cast<Eigen::Index>(opts.probes));
    Matrix xs(n, static_cast<Eigen::Index>(opts.probes));
    for (std::size_t j = 0; j < opts.probes; ++j) {
      fill_probe(z, opts.distribution, opts.seed, j);
      const SolveReport sr = ops.apply_sigma_r_pinv(z, opts.solve);
      record(j, sr);
      zs.col(static_cast<Eigen::Index>(j)) = z;
      xs.col(static_cast<Eigen::Index>(j)) = sr.solution;
    }
    const Matrix ys = ops.apply_sigma_a_block(xs);
    for (std::size_t j = 0; j < opts.probes; ++j) {
      rep.samples[j] =
          zs.col(static_cast<Eigen::Index>(j)).dot(ys.col(static_cast<Eigen::Index>(j)));
    }
  } else {
    for (std::size_t j = 0; j < opts.probes; ++j) {
      fill_probe(z, opts.distribution, opts.seed, j);
      const SolveReport sr = ops.apply_sigma_r_pinv(z, opts.solve);
      record(j, sr);
      rep.samples[j] = z.dot(ops.apply_sigma_a(sr.solution));
    }
  }
  if (degenerate) {
    rep.warnings.push_back("degenerate geometry: all class means coincide, Sigma_R = 0");
  }
  if (rep.solver.failures > 0) {
    rep.warnings.push_back(std::to_string(rep.solver.failures) +
                           " probe solve(s) did not reach the tolerance");
  }
  finish_statistics(rep, ops.num_classes());
  return rep;
}

Nc1Report nc1_hutchinson(const EmbeddingDataset& d, const HutchinsonOptions& opts,
                         kernels::Backend backend) {
  if (opts.probes == 0) throw ValidationError("probe count K must be at least 1");
  CovarianceOperators ops(borrow(d), backend);
  return nc1_hutchinson(ops, opts);
}

nlohmann::ordered_json to_json(const Nc1Report& r) {
  nlohmann::ordered_json j;
  j["value"] = r.value;
  j["mode"] = r.mode;
  j["probes"] = r.probes;
  j["probe_distribution"] = to_string(r.distribution);
  j["seed"] = r.seed;
  j["std_error"] = r.std_error;
  j["per_probe_samples"] = r.samples;
  j["num_classes"] = r.num_classes;
  j["feature_dim"] = r.dim;
  j["num_examples"] = r.num_examples;
  nlohmann::ordered_json s;
  s["method"] = r.solver.method;
  s["solves"] = r.solver.solves;
  s["failures"] = r.solver.failures;
  s["max_iterations"] = r.solver.max_iterations;
  s["max_residual"] = r.solver.max_residual;
  s["converged"] = r.solver.converged;
  j["solver"] = s;
  j["warnings"] = r.warnings;
  return j;
}

std::string format_compact(double value, double rel_tol, int max_decimals) {
  char buf[64];
  for (int d = 0; d <= max_decimals; ++d) {
    std::snprintf(buf, sizeof buf, "%.*f", d, value);
    const double back = std::strtod(buf, nullptr);
    const double err = value == 0.0 ? std::abs(back) : std::abs(back - value) / std::abs(value);
    if (err <= rel_tol) return buf;
  }
  return buf;
}

MemoryEstimate memory_requirements(std::uint64_t n) {
  if (n == 0) throw ValidationError("feature dimension must be at least 1");
  MemoryEstimate e;
  e.feature_dim = n;
  e.exact_bytes = 2 * n * n * 8;
  e.streaming_bytes = 3 * n * 8;
  e.exact_gib = format_compact(static_cast<double>(e.exact_bytes) / 1073741824.0) + " GiB";
  e.streaming_mib = format_compact(static_cast<double>(e.streaming_bytes) / 1048576.0) + " MiB";
  return e;
}

nlohmann::ordered_json to_json(const MemoryEstimate& e) {
  nlohmann::ordered_json j;
  j["feature_dim"] = e.feature_dim;
  j["exact_bytes"] = e.exact_bytes;
  j["streaming_bytes"] = e.streaming_bytes;
  j["exact"] = e.exact_gib;
  j["streaming"] = e.streaming_mib;
  return j;
}

}  // namespace collapse_lab
