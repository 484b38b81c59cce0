#pragma once

// Straightforward reference implementations used as test oracles. They share
// no code with the library: plain loops, long double accumulation, and
// Eigen's JacobiSVD where a decomposition is needed.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "collapse_lab/dataset.hpp"

namespace oracle {

using collapse_lab::EmbeddingDataset;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd class_means(const EmbeddingDataset& d) {
  const auto c = d.num_classes();
  const auto n = d.dim();
  std::vector<std::vector<long double>> sum(c, std::vector<long double>(n, 0.0L));
  std::vector<long double> count(c, 0.0L);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto y = d.class_labels()[i];
    count[y] += 1.0L;
    for (std::size_t j = 0; j < n; ++j) sum[y][j] += d.row(i)[j];
  }
  MatrixXd mu(c, n);
  for (std::size_t y = 0; y < c; ++y) {
    for (std::size_t j = 0; j < n; ++j) mu(y, j) = static_cast<double>(sum[y][j] / count[y]);
  }
  return mu;
}

inline MatrixXd sigma_a(const EmbeddingDataset& d) {
  const auto n = d.dim();
  const MatrixXd mu = class_means(d);
  std::vector<long double> acc(n * n, 0.0L);
  std::vector<long double> dev(n);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto y = d.class_labels()[i];
    for (std::size_t j = 0; j < n; ++j) dev[j] = d.row(i)[j] - mu(y, j);
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = 0; b < n; ++b) acc[a * n + b] += dev[a] * dev[b];
    }
  }
  MatrixXd out(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      out(a, b) = static_cast<double>(acc[a * n + b] / static_cast<long double>(d.size()));
    }
  }
  return out;
}

inline MatrixXd sigma_r(const EmbeddingDataset& d) {
  const auto n = d.dim();
  const auto c = d.num_classes();
  const MatrixXd mu = class_means(d);
  VectorXd g = VectorXd::Zero(n);
  for (std::size_t y = 0; y < c; ++y) g += mu.row(y).transpose();
  g /= static_cast<double>(c);
  MatrixXd out = MatrixXd::Zero(n, n);
  for (std::size_t y = 0; y < c; ++y) {
    const VectorXd v = mu.row(y).transpose() - g;
    out += v * v.transpose();
  }
  return out / static_cast<double>(c);
}

inline MatrixXd pinv(const MatrixXd& a, double rel_cutoff = 1e-10) {
  Eigen::JacobiSVD<MatrixXd> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const VectorXd s = svd.singularValues();
  const double cut = s.size() ? rel_cutoff * s(0) : 0.0;
  VectorXd inv = VectorXd::Zero(s.size());
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    if (s(k) > cut && s(k) > 0.0) inv(k) = 1.0 / s(k);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

// Orthogonal projector onto the column space of `a` from its SVD.
inline MatrixXd range_projector(const MatrixXd& a, double rel_cutoff = 1e-10) {
  Eigen::JacobiSVD<MatrixXd> svd(a, Eigen::ComputeFullU);
  const VectorXd s = svd.singularValues();
  MatrixXd p = MatrixXd::Zero(a.rows(), a.rows());
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    if (s(k) > rel_cutoff * s(0) && s(k) > 0.0) p += svd.matrixU().col(k) * svd.matrixU().col(k).transpose();
  }
  return p;
}

inline double nc1(const EmbeddingDataset& d) {
  return (sigma_a(d) * pinv(sigma_r(d))).trace() / static_cast<double>(d.num_classes());
}

struct Eval {
  std::vector<std::optional<double>> acc;
  double wga = 0.0;
  double aa = 0.0;
};

// scores(i, c) computed one product at a time; ties resolve to the lower class.
inline Eval evaluate(const MatrixXd& w, const VectorXd& b, const EmbeddingDataset& d) {
  std::vector<long> hit(d.num_groups(), 0), tot(d.num_groups(), 0);
  long all_hit = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < w.rows(); ++c) {
      double s = b(c);
      for (std::size_t j = 0; j < d.dim(); ++j) s += w(c, static_cast<Eigen::Index>(j)) * d.row(i)[j];
      if (s > best_score) {
        best_score = s;
        best = static_cast<std::size_t>(c);
      }
    }
    const auto g = d.group_labels()[i];
    ++tot[g];
    if (best == d.class_labels()[i]) {
      ++hit[g];
      ++all_hit;
    }
  }
  Eval e;
  e.wga = 1.0;
  for (std::size_t g = 0; g < d.num_groups(); ++g) {
    if (tot[g] == 0) {
      e.acc.push_back(std::nullopt);
      continue;
    }
    const double a = static_cast<double>(hit[g]) / static_cast<double>(tot[g]);
    e.acc.push_back(a);
    e.wga = std::min(e.wga, a);
  }
  e.aa = static_cast<double>(all_hit) / static_cast<double>(d.size());
  return e;
}

// Binary margins y (theta.x + b) over correctly classified points per group.
inline std::vector<std::optional<double>> margins(const VectorXd& theta, double b,
                                                  const EmbeddingDataset& d) {
  std::vector<std::optional<double>> out(d.num_groups());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double y = d.class_labels()[i] == 1 ? 1.0 : -1.0;
    double f = b;
    for (std::size_t j = 0; j < d.dim(); ++j) f += theta(static_cast<Eigen::Index>(j)) * d.row(i)[j];
    const double m = y * f;
    if (m <= 0.0) continue;
    auto& slot = out[d.group_labels()[i]];
    slot = slot ? std::min(*slot, m) : m;
  }
  return out;
}

// Covariance over product of standard deviations, all sums in long double.
inline std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t k = x.size();
  if (k < 2 || y.size() != k) return std::nullopt;
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < k; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= k;
  my /= k;
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < k; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

inline double directional_error(const VectorXd& a, const VectorXd& b) {
  long double na = 0, nb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    na += static_cast<long double>(a(i)) * a(i);
    nb += static_cast<long double>(b(i)) * b(i);
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  long double s = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const long double d = a(i) / na - b(i) / nb;
    s += d * d;
  }
  return static_cast<double>(std::sqrt(s));
}

struct Svm2d {
  bool feasible = false;
  VectorXd theta;
  double bias = 0.0;
};

// Max-margin separator in the plane by active-set enumeration: the optimum
// has at most three active constraints with an intercept (two without), so
// solving every such equality system and keeping the feasible candidate of
// least norm recovers it.
inline Svm2d svm_2d(const MatrixXd& x, const std::vector<double>& y, bool intercept) {
  const auto n = static_cast<std::size_t>(x.rows());
  Svm2d best;
  double best_norm = std::numeric_limits<double>::infinity();
  auto consider = [&](const VectorXd& th, double b) {
    if (!th.allFinite() || !std::isfinite(b)) return;
    for (std::size_t i = 0; i < n; ++i) {
      if (y[i] * (x.row(static_cast<Eigen::Index>(i)).dot(th) + b) < 1.0 - 1e-9) return;
    }
    if (th.norm() < best_norm) {
      best_norm = th.norm();
      best.feasible = true;
      best.theta = th;
      best.bias = b;
    }
  };
  if (intercept) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (y[i] <= 0 || y[j] >= 0) continue;
        const VectorXd d = (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).transpose();
        if (d.squaredNorm() == 0.0) continue;
        const VectorXd th = 2.0 * d / d.squaredNorm();
        const double b = -th.dot((x.row(static_cast<Eigen::Index>(i)) + x.row(static_cast<Eigen::Index>(j))).transpose()) / 2.0;
        consider(th, b);
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        for (std::size_t k = j + 1; k < n; ++k) {
          Eigen::Matrix3d a;
          Eigen::Vector3d r;
          const std::size_t idx[3] = {i, j, k};
          for (int t = 0; t < 3; ++t) {
            const auto p = static_cast<Eigen::Index>(idx[t]);
            a(t, 0) = y[idx[t]] * x(p, 0);
            a(t, 1) = y[idx[t]] * x(p, 1);
            a(t, 2) = y[idx[t]];
            r(t) = 1.0;
          }
          if (std::abs(a.determinant()) < 1e-12) continue;
          const Eigen::Vector3d s = a.partialPivLu().solve(r);
          consider(s.head<2>(), s(2));
        }
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const VectorXd v = y[i] * x.row(static_cast<Eigen::Index>(i)).transpose();
      if (v.squaredNorm() > 0.0) consider(v / v.squaredNorm(), 0.0);
      for (std::size_t j = i + 1; j < n; ++j) {
        Eigen::Matrix2d a;
        a.row(0) = y[i] * x.row(static_cast<Eigen::Index>(i));
        a.row(1) = y[j] * x.row(static_cast<Eigen::Index>(j));
        if (std::abs(a.determinant()) < 1e-12) continue;
        consider(a.partialPivLu().solve(Eigen::Vector2d(1.0, 1.0)), 0.0);
      }
    }
  }
  return best;
}

}  // namespace oracle
