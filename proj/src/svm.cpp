#include "collapse_lab/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "collapse_lab/error.hpp"

namespace collapse_lab {

namespace {

constexpr double kTau = 1e-12;
// Hull distances below this fraction of the data radius count as touching.
constexpr double kSeparationFloor = 1e-6;

double dot_row(const RowMatrix& x, std::size_t a, std::size_t b) {
  return x.row(static_cast<Eigen::Index>(a)).dot(x.row(static_cast<Eigen::Index>(b)));
}

// Bounded perceptron run; returns true if it found a separating hyperplane.
bool perceptron_separates(const RowMatrix& x, std::span<const double> y, bool intercept,
                          std::size_t passes) {
  const auto n = static_cast<std::size_t>(x.rows());
  Vector w = Vector::Zero(x.cols());
  double b = 0.0;
  for (std::size_t pass = 0; pass < passes; ++pass) {
    bool clean = true;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = x.row(static_cast<Eigen::Index>(i));
      if (y[i] * (row.dot(w) + b) <= 0.0) {
        w += y[i] * row.transpose();
        if (intercept) b += y[i];
        clean = false;
      }
    }
    if (clean) return true;
  }
  return false;
}

struct DualState {
  std::vector<double> alpha;
  std::vector<double> grad;  // G_t = y_t <w, x_t> - 1
  Vector w;
  std::size_t iterations = 0;
  bool converged = false;
};

void refresh_gradient(const RowMatrix& x, std::span<const double> y, DualState& s) {
  for (std::size_t t = 0; t < s.grad.size(); ++t) {
    s.grad[t] = y[t] * x.row(static_cast<Eigen::Index>(t)).dot(s.w) - 1.0;
  }
}

void apply_delta(const RowMatrix& x, std::span<const double> y, DualState& s,
                 const Vector& dw) {
  s.w += dw;
  for (std::size_t t = 0; t < s.grad.size(); ++t) {
    s.grad[t] += y[t] * x.row(static_cast<Eigen::Index>(t)).dot(dw);
  }
}

// SMO with second-order working-set selection for
//   min 1/2 a^T Q a - e^T a  s.t.  y^T a = 0, 0 <= a <= c.
void solve_pairwise(const RowMatrix& x, std::span<const double> y, const SvmOptions& opts,
                    DualState& s) {
  const auto n = static_cast<std::size_t>(x.rows());
  const double c = opts.c;
  const bool boxed = std::isfinite(c);
  std::vector<double> diag(n);
  for (std::size_t t = 0; t < n; ++t) diag[t] = dot_row(x, t, t);
  auto below_upper = [&](std::size_t t) { return !boxed || s.alpha[t] < c; };
  auto above_lower = [&](std::size_t t) { return s.alpha[t] > 0.0; };

  for (; s.iterations < opts.max_iter; ++s.iterations) {
    double gmax = -std::numeric_limits<double>::infinity();
    std::size_t i = n;
    for (std::size_t t = 0; t < n; ++t) {
      const bool in_up = y[t] > 0 ? below_upper(t) : above_lower(t);
      if (in_up && -y[t] * s.grad[t] >= gmax) {
        gmax = -y[t] * s.grad[t];
        i = t;
      }
    }
    if (i == n) break;
    double gmax2 = -std::numeric_limits<double>::infinity();
    double obj_min = std::numeric_limits<double>::infinity();
    std::size_t j = n;
    for (std::size_t t = 0; t < n; ++t) {
      const bool in_low = y[t] > 0 ? above_lower(t) : below_upper(t);
      if (!in_low) continue;
      const double yg = y[t] * s.grad[t];
      gmax2 = std::max(gmax2, yg);
      const double grad_diff = gmax + yg;
      if (grad_diff > 0.0) {
        double quad = diag[i] + diag[t] - 2.0 * dot_row(x, i, t);
        if (quad <= 0.0) quad = kTau;
        const double obj = -(grad_diff * grad_diff) / quad;
        if (obj <= obj_min) {
          obj_min = obj;
          j = t;
        }
      }
    }
    if (gmax + gmax2 < opts.tol || j == n) {
      s.converged = true;
      break;
    }

    const double old_i = s.alpha[i];
    const double old_j = s.alpha[j];
    double quad = diag[i] + diag[j] - 2.0 * dot_row(x, i, j);
    if (quad <= 0.0) quad = kTau;
    double ai = old_i;
    double aj = old_j;
    if (y[i] != y[j]) {
      const double delta = (-s.grad[i] - s.grad[j]) / quad;
      const double diff = ai - aj;
      ai += delta;
      aj += delta;
      if (diff > 0.0) {
        if (aj < 0.0) { aj = 0.0; ai = diff; }
      } else {
        if (ai < 0.0) { ai = 0.0; aj = -diff; }
      }
      if (boxed) {
        if (diff > 0.0) {
          if (ai > c) { ai = c; aj = c - diff; }
        } else {
          if (aj > c) { aj = c; ai = c + diff; }
        }
      }
    } else {
      const double delta = (s.grad[i] - s.grad[j]) / quad;
      const double sum = ai + aj;
      ai -= delta;
      aj += delta;
      if (boxed && sum > c) {
        if (ai > c) { ai = c; aj = sum - c; }
      } else {
        if (aj < 0.0) { aj = 0.0; ai = sum; }
      }
      if (boxed && sum > c) {
        if (aj > c) { aj = c; ai = sum - c; }
      } else {
        if (ai < 0.0) { ai = 0.0; aj = sum; }
      }
    }
    s.alpha[i] = ai;
    s.alpha[j] = aj;
    const Vector dw = y[i] * (ai - old_i) * x.row(static_cast<Eigen::Index>(i)).transpose() +
                      y[j] * (aj - old_j) * x.row(static_cast<Eigen::Index>(j)).transpose();
    apply_delta(x, y, s, dw);
    // Periodic exact refresh bounds the drift of incremental updates.
    if ((s.iterations + 1) % 1000 == 0) refresh_gradient(x, y, s);
  }
}

// Greedy coordinate descent for the same dual without the equality constraint.
void solve_coordinate(const RowMatrix& x, std::span<const double> y, const SvmOptions& opts,
                      DualState& s) {
  const auto n = static_cast<std::size_t>(x.rows());
  const double c = opts.c;
  const bool boxed = std::isfinite(c);
  std::vector<double> diag(n);
  for (std::size_t t = 0; t < n; ++t) {
    diag[t] = dot_row(x, t, t);
  }
  for (; s.iterations < opts.max_iter; ++s.iterations) {
    double worst = 0.0;
    std::size_t pick = n;
    for (std::size_t t = 0; t < n; ++t) {
      double v = s.grad[t];
      if (s.alpha[t] <= 0.0) v = std::min(v, 0.0);
      else if (boxed && s.alpha[t] >= c) v = std::max(v, 0.0);
      if (std::abs(v) > worst) {
        worst = std::abs(v);
        pick = t;
      }
    }
    if (pick == n || worst < opts.tol) {
      s.converged = true;
      break;
    }
    const double old = s.alpha[pick];
    double a = old - s.grad[pick] / std::max(diag[pick], kTau);
    a = std::max(a, 0.0);
    if (boxed) a = std::min(a, c);
    s.alpha[pick] = a;
    apply_delta(x, y, s, y[pick] * (a - old) * x.row(static_cast<Eigen::Index>(pick)).transpose());
    if ((s.iterations + 1) % 1000 == 0) refresh_gradient(x, y, s);
  }
}

// Hard margin in convex-hull form: the minimum-norm point u of
// conv{y_t x_t} (one simplex per class when there is an intercept, which
// makes u the shortest segment between the two class hulls). The problem is
// bounded whether or not the data is separable, and u = 0 certifies that it
// is not.
struct HullState {
  std::vector<double> beta;
  std::vector<double> grad;  // g_t = y_t <x_t, u>
  Vector u;
  std::size_t iterations = 0;
  bool converged = false;
};

void solve_hull(const RowMatrix& x, std::span<const double> y, bool intercept, double eps,
                std::size_t max_iter, HullState& s) {
  const auto n = static_cast<std::size_t>(x.rows());
  const std::size_t blocks = intercept ? 2 : 1;
  auto block_of = [&](std::size_t t) -> std::size_t { return intercept && y[t] < 0 ? 1 : 0; };
  std::vector<std::size_t> size(blocks, 0);
  for (std::size_t t = 0; t < n; ++t) ++size[block_of(t)];
  std::vector<double> diag(n);
  s.beta.assign(n, 0.0);
  s.u = Vector::Zero(x.cols());
  for (std::size_t t = 0; t < n; ++t) {
    diag[t] = dot_row(x, t, t);
    s.beta[t] = 1.0 / static_cast<double>(size[block_of(t)]);
    s.u += s.beta[t] * y[t] * x.row(static_cast<Eigen::Index>(t)).transpose();
  }
  s.grad.assign(n, 0.0);
  auto refresh = [&] {
    for (std::size_t t = 0; t < n; ++t) {
      s.grad[t] = y[t] * x.row(static_cast<Eigen::Index>(t)).dot(s.u);
    }
  };
  refresh();

  for (; s.iterations < max_iter; ++s.iterations) {
    double best_viol = 0.0;
    std::size_t bi = n;
    std::size_t bj = n;
    double best_gain = -1.0;
    for (std::size_t b = 0; b < blocks; ++b) {
      std::size_t j = n;
      double gmin = std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < n; ++t) {
        if (block_of(t) != b) continue;
        gmin = std::min(gmin, s.grad[t]);
        if (s.beta[t] > 0.0 && (j == n || s.grad[t] > s.grad[j])) j = t;
      }
      if (j == n) continue;
      best_viol = std::max(best_viol, s.grad[j] - gmin);
      for (std::size_t t = 0; t < n; ++t) {
        if (block_of(t) != b || !(s.grad[t] < s.grad[j])) continue;
        const double diff = s.grad[j] - s.grad[t];
        double a = diag[j] + diag[t] - 2.0 * y[j] * y[t] * dot_row(x, j, t);
        if (a <= 0.0) a = kTau;
        const double gain = diff * diff / a;
        if (gain > best_gain) {
          best_gain = gain;
          bi = t;
          bj = j;
        }
      }
    }
    if (best_viol <= eps || bi == n) {
      s.converged = true;
      break;
    }
    double a = diag[bi] + diag[bj] - 2.0 * y[bi] * y[bj] * dot_row(x, bi, bj);
    if (a <= 0.0) a = kTau;
    double delta = (s.grad[bj] - s.grad[bi]) / a;
    if (delta >= s.beta[bj]) {
      delta = s.beta[bj];
      s.beta[bj] = 0.0;
    } else {
      s.beta[bj] -= delta;
    }
    s.beta[bi] += delta;
    const Vector du = delta * (y[bi] * x.row(static_cast<Eigen::Index>(bi)).transpose() -
                               y[bj] * x.row(static_cast<Eigen::Index>(bj)).transpose());
    s.u += du;
    for (std::size_t t = 0; t < n; ++t) {
      s.grad[t] += y[t] * x.row(static_cast<Eigen::Index>(t)).dot(du);
    }
    if ((s.iterations + 1) % 1000 == 0) {
      s.u.setZero();
      for (std::size_t t = 0; t < n; ++t) {
        s.u += s.beta[t] * y[t] * x.row(static_cast<Eigen::Index>(t)).transpose();
      }
      refresh();
    }
  }
  s.u.setZero();
  for (std::size_t t = 0; t < n; ++t) {
    s.u += s.beta[t] * y[t] * x.row(static_cast<Eigen::Index>(t)).transpose();
  }
}

SvmSolution fit_hull(const RowMatrix& x, std::span<const double> y, const SvmOptions& opts) {
  const auto n = static_cast<std::size_t>(x.rows());
  SvmSolution sol;
  sol.perceptron_certified = perceptron_separates(x, y, opts.intercept, opts.perceptron_passes);
  // Data radius; centered when translations leave the problem unchanged.
  Vector center = Vector::Zero(x.cols());
  if (opts.intercept) center = x.colwise().mean().transpose();
  double radius = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    radius = std::max(radius, (x.row(static_cast<Eigen::Index>(t)).transpose() - center).norm());
  }
  if (radius == 0.0) {
    throw InfeasibleError("data is not linearly separable: all points coincide");
  }
  HullState s;
  solve_hull(x, y, opts.intercept, opts.tol * radius * radius, opts.max_iter, s);
  sol.iterations = s.iterations;
  const double dist = s.u.norm();
  if (dist <= kSeparationFloor * radius) {
    std::ostringstream msg;
    msg << "data is not linearly separable: the class hulls intersect (hull distance " << dist
        << ")";
    throw InfeasibleError(msg.str());
  }
  if (!s.converged) throw NumericalError("hard-margin SVM did not converge within max_iter");
  const double scale = (opts.intercept ? 2.0 : 1.0) / (dist * dist);
  sol.theta = scale * s.u;
  if (opts.intercept) {
    Vector mid = Vector::Zero(x.cols());
    for (std::size_t t = 0; t < n; ++t) {
      mid += s.beta[t] * x.row(static_cast<Eigen::Index>(t)).transpose();
    }
    // mid = p + q, the sum of the two closest hull points.
    sol.bias = -0.5 * sol.theta.dot(mid) + 0.0;
  }
  sol.dual.resize(n);
  double beta_max = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    sol.dual[t] = scale * s.beta[t];
    beta_max = std::max(beta_max, s.beta[t]);
  }
  for (std::size_t t = 0; t < n; ++t) {
    if (s.beta[t] > 1e-8 * beta_max) sol.support_vectors.push_back(t);
  }
  sol.geometric_margin = 1.0 / sol.theta.norm();
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < n; ++t) {
    worst = std::min(worst, y[t] * (x.row(static_cast<Eigen::Index>(t)).dot(sol.theta) + sol.bias));
  }
  if (worst < 1.0 - 1e-6) {
    std::ostringstream msg;
    msg << "data is not linearly separable: margin constraint violated (min y f = " << worst << ")";
    throw InfeasibleError(msg.str());
  }
  return sol;
}

}  // namespace

SvmSolution fit_hard_margin(const RowMatrix& x, std::span<const double> y,
                            const SvmOptions& opts) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (n == 0) throw ValidationError("empty training set");
  if (y.size() != n) throw ValidationError("label count does not match rows");
  bool has_pos = false;
  bool has_neg = false;
  for (double v : y) {
    if (v == 1.0) has_pos = true;
    else if (v == -1.0) has_neg = true;
    else throw ValidationError("SVM labels must be +1 or -1");
  }
  if (opts.intercept && !(has_pos && has_neg)) {
    throw ValidationError("SVM with intercept needs both classes");
  }
  if (!(opts.c > 0.0)) throw ValidationError("SVM box constraint C must be positive");
  if (!x.allFinite()) throw ValidationError("features contain NaN or Inf");

  if (!std::isfinite(opts.c)) return fit_hull(x, y, opts);

  // Soft margin: the box keeps the dual bounded, so plain SMO applies.
  SvmSolution sol;
  sol.soft_margin = true;
  DualState s;
  s.alpha.assign(n, 0.0);
  s.grad.assign(n, -1.0);
  s.w = Vector::Zero(x.cols());
  if (opts.intercept) solve_pairwise(x, y, opts, s);
  else solve_coordinate(x, y, opts, s);
  refresh_gradient(x, y, s);
  if (!s.converged) throw NumericalError("soft-margin SVM did not converge within max_iter");

  sol.theta = s.w;
  sol.dual = s.alpha;
  sol.iterations = s.iterations;
  double alpha_max = 0.0;
  for (double a : s.alpha) alpha_max = std::max(alpha_max, a);
  if (opts.intercept) {
    double sum = 0.0;
    std::size_t count = 0;
    double ub = std::numeric_limits<double>::infinity();
    double lb = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      const double yg = y[t] * s.grad[t];
      if (s.alpha[t] > 0.0 && s.alpha[t] < opts.c) {
        sum += yg;
        ++count;
      } else if ((y[t] > 0) == (s.alpha[t] <= 0.0)) {
        ub = std::min(ub, yg);
      } else {
        lb = std::max(lb, yg);
      }
    }
    const double rho = count ? sum / static_cast<double>(count) : 0.5 * (ub + lb);
    sol.bias = -rho + 0.0;
  }
  const double threshold = 1e-8 * std::max(alpha_max, 1e-300);
  for (std::size_t t = 0; t < n; ++t) {
    if (s.alpha[t] > threshold) sol.support_vectors.push_back(t);
  }
  const double norm = sol.theta.norm();
  sol.geometric_margin = norm > 0.0 ? 1.0 / norm : 0.0;
  return sol;
}

double directional_error(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ValidationError("directional error: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw ValidationError("directional error: zero vector");
  return (a / na - b / nb).norm();
}

std::vector<double> signed_labels(const EmbeddingDataset& d) {
  if (d.num_classes() != 2) throw ValidationError("binary task required");
  std::vector<double> y(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) y[i] = d.class_labels()[i] == 1 ? 1.0 : -1.0;
  return y;
}

ImplicitBiasTrace implicit_bias_trace(const EmbeddingDataset& d, const TrainConfig& cfg,
                                      std::span<const std::size_t> checkpoints,
                                      const SvmOptions& svm_opts) {
  if (checkpoints.empty()) throw ValidationError("no checkpoints requested");
  if (checkpoints.front() < 1) {
    throw ValidationError("first checkpoint must be at least 1 step (zero vector at step 0)");
  }
  for (std::size_t k = 1; k < checkpoints.size(); ++k) {
    if (checkpoints[k] <= checkpoints[k - 1]) {
      throw ValidationError("checkpoints must be strictly increasing");
    }
  }
  const auto y = signed_labels(d);
  const auto n = d.features().cols();
  RowMatrix augmented(d.features().rows(), n + 1);
  augmented.leftCols(n) = d.features();
  augmented.col(n).setOnes();
  SvmOptions ref_opts = svm_opts;
  ref_opts.intercept = false;
  ImplicitBiasTrace trace;
  trace.reference = fit_hard_margin(augmented, y, ref_opts);
  const Vector theta_ref = trace.reference.theta.head(n);

  TrainConfig run = cfg;
  run.epochs = 0;
  run.steps = checkpoints.back();
  std::size_t next = 0;
  train_linear(d, run, {}, [&](std::size_t step, const LinearClassifier& clf) {
    if (next >= checkpoints.size() || step != checkpoints[next]) return;
    const BinaryLinear b = to_binary(clf);
    TracePoint p;
    p.step = step;
    p.directional_error = directional_error(b.theta, theta_ref);
    p.train_loss = cross_entropy(clf, d.features(), d.class_labels(), {}).loss;
    trace.points.push_back(p);
    ++next;
  });
  return trace;
}

}  // namespace collapse_lab
