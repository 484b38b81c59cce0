#include "collapse_lab/retrain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "collapse_lab/error.hpp"
#include "collapse_lab/format.hpp"
#include "collapse_lab/rng.hpp"

namespace collapse_lab {

namespace fs = std::filesystem;

LinearClassifier LinearClassifier::zeros(std::size_t num_classes, std::size_t dim) {
  return {RowMatrix::Zero(static_cast<Eigen::Index>(num_classes), static_cast<Eigen::Index>(dim)),
          Vector::Zero(static_cast<Eigen::Index>(num_classes))};
}

RowMatrix LinearClassifier::scores(const RowMatrix& features, kernels::Backend backend) const {
  if (features.cols() != weights.cols()) {
    throw ValidationError("dimension mismatch: classifier expects " +
                          std::to_string(weights.cols()) + " features, data has " +
                          std::to_string(features.cols()));
  }
  return kernels::linear_scores(features, weights, bias, backend);
}

namespace {

std::uint32_t argmax_row(const RowMatrix& s, Eigen::Index i) {
  std::uint32_t best = 0;
  for (Eigen::Index c = 1; c < s.cols(); ++c) {
    if (s(i, c) > s(i, best)) best = static_cast<std::uint32_t>(c);
  }
  return best;
}

}  // namespace

std::vector<std::uint32_t> LinearClassifier::predict(const RowMatrix& features,
                                                     kernels::Backend backend) const {
  const RowMatrix s = scores(features, backend);
  std::vector<std::uint32_t> out(static_cast<std::size_t>(s.rows()));
  for (Eigen::Index i = 0; i < s.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax_row(s, i);
  return out;
}

std::vector<double> LinearClassifier::true_class_probability(
    const RowMatrix& features, std::span<const std::uint32_t> labels) const {
  const RowMatrix s = scores(features, kernels::Backend::serial);
  std::vector<double> out(labels.size());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < s.cols(); ++c) z += std::exp(s(i, c) - mx);
    out[static_cast<std::size_t>(i)] = std::exp(s(i, labels[static_cast<std::size_t>(i)]) - mx) / z;
  }
  return out;
}

LinearClassifier LinearClassifier::scaled(double factor) const {
  return {weights * factor, bias * factor};
}

BinaryLinear to_binary(const LinearClassifier& clf) {
  if (clf.num_classes() != 2) throw ValidationError("binary form needs a two-class classifier");
  return {(clf.weights.row(1) - clf.weights.row(0)).transpose(), clf.bias[1] - clf.bias[0]};
}

LinearClassifier from_binary(const BinaryLinear& b) {
  LinearClassifier clf = LinearClassifier::zeros(2, static_cast<std::size_t>(b.theta.size()));
  clf.weights.row(1) = b.theta.transpose();
  clf.bias[1] = b.bias;
  return clf;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning rate must be positive");
  }
}

std::size_t TrainConfig::total_steps(std::size_t num_examples) const {
  if (epochs == 0) return steps;
  const std::size_t per_epoch =
      batch_size == 0 ? 1 : (num_examples + batch_size - 1) / batch_size;
  return epochs * per_epoch;
}

TrainingPlan TrainingPlan::from(BalancePlan plan) {
  TrainingPlan p;
  p.balance = std::move(plan);
  return p;
}

TrainingPlan TrainingPlan::from_weights(std::vector<double> weights) {
  TrainingPlan p;
  p.weights = std::move(weights);
  return p;
}

std::vector<double> effective_weights(const TrainingPlan& plan, std::size_t num_examples) {
  const std::vector<double>* raw = nullptr;
  if (plan.weights) raw = &*plan.weights;
  else if (plan.balance && plan.balance->kind == PlanKind::loss_weights) raw = &plan.balance->values;
  if (!raw) return std::vector<double>(num_examples, 1.0);
  if (raw->size() != num_examples) {
    throw ValidationError("plan/dataset mismatch: " + std::to_string(raw->size()) +
                          " weights for " + std::to_string(num_examples) + " examples");
  }
  double total = 0.0;
  for (double w : *raw) {
    if (!std::isfinite(w) || w < 0.0) throw ValidationError("loss weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw ValidationError("loss weights sum to zero");
  const double mean = total / static_cast<double>(num_examples);
  std::vector<double> out(raw->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*raw)[i] / mean;
  return out;
}

namespace {

// Accumulates sum_b w_b * grad(l_b) and sum_b w_b * l_b over the given rows.
double accumulate_batch(const LinearClassifier& clf, const RowMatrix& features,
                        std::span<const std::uint32_t> labels, std::span<const double> weights,
                        std::span<const std::size_t> rows, RowMatrix& gw, Vector& gb,
                        std::vector<double>& scratch) {
  const auto classes = static_cast<Eigen::Index>(clf.num_classes());
  const auto n = features.cols();
  gw.setZero();
  gb.setZero();
  scratch.resize(static_cast<std::size_t>(classes));
  double loss = 0.0;
  for (std::size_t i : rows) {
    const double w = weights[i];
    const auto row = features.row(static_cast<Eigen::Index>(i));
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < classes; ++c) {
      const double s = clf.weights.row(c).dot(row) + clf.bias[c];
      scratch[static_cast<std::size_t>(c)] = s;
      mx = std::max(mx, s);
    }
    double z = 0.0;
    for (Eigen::Index c = 0; c < classes; ++c) z += std::exp(scratch[static_cast<std::size_t>(c)] - mx);
    const double log_z = mx + std::log(z);
    loss += w * (log_z - scratch[labels[i]]);
    if (w == 0.0) continue;
    for (Eigen::Index c = 0; c < classes; ++c) {
      double g = std::exp(scratch[static_cast<std::size_t>(c)] - log_z);
      if (static_cast<std::uint32_t>(c) == labels[i]) g -= 1.0;
      g *= w;
      gb[c] += g;
      for (Eigen::Index j = 0; j < n; ++j) gw(c, j) += g * row[j];
    }
  }
  return loss;
}

}  // namespace

LossAndGradient cross_entropy(const LinearClassifier& clf, const RowMatrix& features,
                              std::span<const std::uint32_t> labels,
                              std::span<const double> weights) {
  const auto m = static_cast<std::size_t>(features.rows());
  std::vector<double> ones;
  if (weights.empty()) {
    ones.assign(m, 1.0);
    weights = ones;
  }
  if (weights.size() != m || labels.size() != m) throw ValidationError("length mismatch");
  std::vector<std::size_t> rows(m);
  std::iota(rows.begin(), rows.end(), 0);
  LossAndGradient out{0.0, RowMatrix::Zero(clf.weights.rows(), clf.weights.cols()),
                      Vector::Zero(clf.bias.size())};
  std::vector<double> scratch;
  const double loss =
      accumulate_batch(clf, features, labels, weights, rows, out.grad_weights, out.grad_bias, scratch);
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  out.loss = loss / total;
  out.grad_weights /= total;
  out.grad_bias /= total;
  return out;
}

LinearClassifier train_linear(const RowMatrix& features, std::span<const std::uint32_t> labels,
                              std::size_t num_classes, const TrainConfig& cfg,
                              const TrainingPlan& plan, const StepCallback& on_step) {
  cfg.validate();
  const auto m = static_cast<std::size_t>(features.rows());
  if (m == 0) throw ValidationError("empty dataset");
  if (labels.size() != m) throw ValidationError("label count does not match feature rows");
  if (plan.balance) plan.balance->validate(m);

  // Training pool.
  std::vector<std::size_t> pool;
  if (plan.balance && plan.balance->kind == PlanKind::subset_indices) {
    pool = plan.balance->indices;
  } else {
    pool.resize(m);
    std::iota(pool.begin(), pool.end(), 0);
  }
  const std::vector<double> weights = effective_weights(plan, m);
  const bool sampling = plan.balance && plan.balance->kind == PlanKind::sampling_probabilities;
  std::vector<double> cdf;
  if (sampling) {
    cdf.resize(m);
    std::partial_sum(plan.balance->values.begin(), plan.balance->values.end(), cdf.begin());
  }

  const std::size_t pool_size = pool.size();
  const bool full_batch = cfg.batch_size == 0 || (!sampling && cfg.batch_size >= pool_size);
  const std::size_t batch = full_batch ? pool_size : cfg.batch_size;
  const std::size_t total_steps = cfg.total_steps(pool_size);

  LinearClassifier clf = LinearClassifier::zeros(num_classes, static_cast<std::size_t>(features.cols()));
  RowMatrix gw(clf.weights.rows(), clf.weights.cols());
  Vector gb(clf.bias.size());
  std::vector<double> scratch;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> order = pool;
  std::size_t cursor = pool_size;  // forces a shuffle at the first step
  std::uint64_t epoch = 0;
  CounterRng sampler(cfg.seed, 0x5a3b);

  for (std::size_t step = 1; step <= total_steps; ++step) {
    rows.clear();
    if (full_batch && !sampling) {
      rows = pool;
    } else if (sampling) {
      const double total = cdf.back();
      for (std::size_t b = 0; b < batch; ++b) {
        auto it = std::upper_bound(cdf.begin(), cdf.end(), sampler.uniform() * total);
        if (it == cdf.end()) --it;
        rows.push_back(static_cast<std::size_t>(it - cdf.begin()));
      }
    } else {
      if (cursor >= pool_size) {
        order = pool;
        CounterRng rng(cfg.seed, 0x1000 + epoch++);
        rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      const std::size_t end = std::min(pool_size, cursor + batch);
      rows.assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                  order.begin() + static_cast<std::ptrdiff_t>(end));
      cursor = end;
    }
    const double loss = accumulate_batch(clf, features, labels, weights, rows, gw, gb, scratch);
    if (!std::isfinite(loss) || !gw.allFinite()) {
      std::ostringstream msg;
      msg << "training diverged at step " << step << " (learning rate " << cfg.learning_rate
          << ", batch loss " << loss << ")";
      throw NumericalError(msg.str());
    }
    const double scale = cfg.learning_rate / static_cast<double>(rows.size());
    clf.weights -= scale * gw;
    clf.bias -= scale * gb;
    if (on_step) on_step(step, clf);
  }
  return clf;
}

LinearClassifier train_linear(const EmbeddingDataset& d, const TrainConfig& cfg,
                              const TrainingPlan& plan, const StepCallback& on_step) {
  return train_linear(d.features(), d.class_labels(), d.num_classes(), cfg, plan, on_step);
}

EvalReport evaluate(const LinearClassifier& clf, const EmbeddingDataset& d,
                    kernels::Backend backend) {
  if (clf.num_classes() != d.num_classes()) {
    throw ValidationError("classifier has " + std::to_string(clf.num_classes()) +
                          " classes, dataset has " + std::to_string(d.num_classes()));
  }
  const auto pred = clf.predict(d.features(), backend);
  EvalReport r;
  const std::size_t groups = d.num_groups();
  r.group_counts.assign(groups, 0);
  r.group_correct.assign(groups, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto g = d.group_labels()[i];
    ++r.group_counts[g];
    if (pred[i] == d.class_labels()[i]) {
      ++r.group_correct[g];
      ++correct;
    }
  }
  r.group_accuracy.assign(groups, std::nullopt);
  double wga = 1.0;
  for (std::size_t g = 0; g < groups; ++g) {
    if (r.group_counts[g] == 0) {
      r.warnings.push_back("group " + std::to_string(g) + " is empty and excluded from WGA");
      continue;
    }
    const double acc =
        static_cast<double>(r.group_correct[g]) / static_cast<double>(r.group_counts[g]);
    r.group_accuracy[g] = acc;
    wga = std::min(wga, acc);
  }
  r.worst_group_accuracy = wga;
  r.average_accuracy = static_cast<double>(correct) / static_cast<double>(d.size());
  if (d.num_classes() == 2) r.group_min_margin = min_group_margins(clf, d);
  return r;
}

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["worst_group_accuracy"] = r.worst_group_accuracy;
  j["average_accuracy"] = r.average_accuracy;
  nlohmann::ordered_json acc = nlohmann::ordered_json::array();
  for (const auto& a : r.group_accuracy) acc.push_back(a ? nlohmann::ordered_json(*a) : nlohmann::ordered_json());
  j["group_accuracy"] = acc;
  j["group_counts"] = r.group_counts;
  j["group_correct"] = r.group_correct;
  nlohmann::ordered_json mar = nlohmann::ordered_json::array();
  for (const auto& a : r.group_min_margin) mar.push_back(a ? nlohmann::ordered_json(*a) : nlohmann::ordered_json());
  j["group_min_margin"] = mar;
  j["warnings"] = r.warnings;
  return j;
}

std::string to_csv(const EvalReport& r) {
  std::ostringstream out;
  out << kCsvSchemaLine << '\n' << "worst_group_accuracy,average_accuracy";
  for (std::size_t g = 0; g < r.group_accuracy.size(); ++g) out << ",acc_g" << g;
  for (std::size_t g = 0; g < r.group_counts.size(); ++g) out << ",count_g" << g;
  out << '\n' << format_double(r.worst_group_accuracy) << ',' << format_double(r.average_accuracy);
  for (const auto& a : r.group_accuracy) out << ',' << format_optional(a);
  for (std::size_t c : r.group_counts) out << ',' << c;
  out << '\n';
  return out.str();
}

std::vector<std::optional<double>> min_group_margins(const BinaryLinear& clf,
                                                     const EmbeddingDataset& d) {
  if (d.num_classes() != 2) throw ValidationError("margins need a binary task");
  if (static_cast<std::size_t>(clf.theta.size()) != d.dim()) {
    throw ValidationError("dimension mismatch between classifier and data");
  }
  std::vector<std::optional<double>> out(d.num_groups());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double y = d.class_labels()[i] == 1 ? 1.0 : -1.0;
    double f = clf.bias;
    const auto row = d.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) f += row[j] * clf.theta[static_cast<Eigen::Index>(j)];
    const double margin = y * f;
    if (!(margin > 0.0)) continue;
    auto& slot = out[d.group_labels()[i]];
    slot = slot ? std::min(*slot, margin) : margin;
  }
  return out;
}

std::vector<std::optional<double>> min_group_margins(const LinearClassifier& clf,
                                                     const EmbeddingDataset& d) {
  return min_group_margins(to_binary(clf), d);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("pearson: inputs differ in length");
  if (x.size() < 2) throw ValidationError("pearson: need at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw ValidationError("pearson: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Checkpoint: JSON header + little-endian f64 blob (weights row-major, then bias).
void save_classifier(const LinearClassifier& clf, const fs::path& stem) {
  const fs::path dir = stem.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  const std::string blob_name = stem.filename().string() + ".weights.bin";
  {
    std::ofstream out(dir / blob_name, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint blob");
    auto put = [&](double v) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      out.write(reinterpret_cast<const char*>(&bits), 8);
    };
    for (Eigen::Index c = 0; c < clf.weights.rows(); ++c) {
      for (Eigen::Index j = 0; j < clf.weights.cols(); ++j) put(clf.weights(c, j));
    }
    for (Eigen::Index c = 0; c < clf.bias.size(); ++c) put(clf.bias[c]);
  }
  nlohmann::ordered_json j;
  j["format"] = "collapse_lab.linear_classifier";
  j["version"] = 1;
  j["classes"] = clf.num_classes();
  j["dim"] = clf.dim();
  j["dtype"] = "f64";
  j["byte_order"] = "little";
  j["layout"] = "weights row-major (classes x dim), then bias (classes)";
  j["weights_path"] = blob_name;
  std::ofstream out(dir / (stem.filename().string() + ".json"));
  if (!out) throw ValidationError("cannot write checkpoint header");
  out << j.dump(2) << '\n';
}

LinearClassifier load_classifier(const fs::path& header_path) {
  std::ifstream in(header_path);
  if (!in) throw ValidationError("cannot open checkpoint: " + header_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  std::size_t classes = 0;
  std::size_t dim = 0;
  std::string blob;
  try {
    classes = j.at("classes").get<std::size_t>();
    dim = j.at("dim").get<std::size_t>();
    blob = j.at("weights_path").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint header: ") + e.what());
  }
  fs::path blob_path(blob);
  if (!blob_path.is_absolute()) blob_path = header_path.parent_path() / blob_path;
  std::error_code ec;
  const auto bytes = fs::file_size(blob_path, ec);
  if (ec || bytes != (classes * dim + classes) * 8) {
    throw ValidationError("checkpoint blob size does not match header");
  }
  std::ifstream bin(blob_path, std::ios::binary);
  auto get = [&]() {
    std::uint64_t bits = 0;
    bin.read(reinterpret_cast<char*>(&bits), 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    return std::bit_cast<double>(bits);
  };
  LinearClassifier clf = LinearClassifier::zeros(classes, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t k = 0; k < dim; ++k) {
      clf.weights(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k)) = get();
    }
  }
  for (std::size_t c = 0; c < classes; ++c) clf.bias[static_cast<Eigen::Index>(c)] = get();
  if (!bin) throw ValidationError("short read in checkpoint blob");
  if (!clf.weights.allFinite() || !clf.bias.allFinite()) {
    throw ValidationError("checkpoint contains non-finite values");
  }
  return clf;
}

}  // namespace collapse_lab
