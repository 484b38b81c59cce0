#include "collapse_lab/balancing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "collapse_lab/error.hpp"
#include "collapse_lab/rng.hpp"

namespace collapse_lab {

std::string to_string(BalanceAxis axis) {
  return axis == BalanceAxis::class_label ? "class" : "group";
}

std::string to_string(PlanKind kind) {
  switch (kind) {
    case PlanKind::subset_indices: return "subset_indices";
    case PlanKind::sampling_probabilities: return "sampling_probabilities";
    case PlanKind::loss_weights: return "loss_weights";
  }
  return "unknown";
}

BalanceAxis parse_balance_axis(const std::string& name) {
  if (name == "class") return BalanceAxis::class_label;
  if (name == "group") return BalanceAxis::group;
  throw ValidationError("unknown balancing axis '" + name + "' (expected class or group)");
}

std::vector<std::uint32_t> partition_labels(const EmbeddingDataset& d, BalanceAxis axis) {
  return axis == BalanceAxis::class_label ? d.class_labels() : d.group_labels();
}

std::size_t partition_count(const EmbeddingDataset& d, BalanceAxis axis) {
  return axis == BalanceAxis::class_label ? d.num_classes() : d.num_groups();
}

namespace {

std::vector<std::size_t> partition_sizes(const EmbeddingDataset& d, BalanceAxis axis) {
  std::vector<std::size_t> sizes(partition_count(d, axis), 0);
  for (std::uint32_t p : partition_labels(d, axis)) ++sizes[p];
  for (std::size_t p = 0; p < sizes.size(); ++p) {
    if (sizes[p] == 0) {
      throw ValidationError("empty " + to_string(axis) + " partition " + std::to_string(p));
    }
  }
  return sizes;
}

}  // namespace

void BalancePlan::validate(std::size_t num_examples) const {
  switch (kind) {
    case PlanKind::subset_indices: {
      if (indices.empty()) throw ValidationError("subset plan is empty");
      std::vector<std::size_t> sorted = indices;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ValidationError("subset plan has repeated indices");
      }
      if (sorted.back() >= num_examples) {
        throw ValidationError("subset plan index out of range for dataset");
      }
      break;
    }
    case PlanKind::sampling_probabilities: {
      if (values.size() != num_examples) {
        throw ValidationError("plan/dataset mismatch: plan has " + std::to_string(values.size()) +
                              " probabilities for " + std::to_string(num_examples) + " examples");
      }
      double sum = 0.0;
      for (double p : values) {
        if (!std::isfinite(p) || p < 0.0) throw ValidationError("invalid sampling probability");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) {
        throw ValidationError("sampling probabilities do not sum to 1");
      }
      break;
    }
    case PlanKind::loss_weights: {
      if (values.size() != num_examples) {
        throw ValidationError("plan/dataset mismatch: plan has " + std::to_string(values.size()) +
                              " weights for " + std::to_string(num_examples) + " examples");
      }
      for (double w : values) {
        if (!std::isfinite(w) || w < 0.0) throw ValidationError("invalid loss weight");
      }
      break;
    }
  }
}

nlohmann::ordered_json to_json(const BalancePlan& plan) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(plan.kind);
  j["axis"] = to_string(plan.axis);
  j["seed"] = plan.seed;
  if (plan.kind == PlanKind::subset_indices) j["payload"] = plan.indices;
  else j["payload"] = plan.values;
  return j;
}

BalancePlan plan_from_json(const nlohmann::json& j) {
  BalancePlan plan;
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "subset_indices") plan.kind = PlanKind::subset_indices;
    else if (kind == "sampling_probabilities") plan.kind = PlanKind::sampling_probabilities;
    else if (kind == "loss_weights") plan.kind = PlanKind::loss_weights;
    else throw ValidationError("unknown plan kind '" + kind + "'");
    plan.axis = parse_balance_axis(j.at("axis").get<std::string>());
    plan.seed = j.value("seed", std::uint64_t{0});
    if (plan.kind == PlanKind::subset_indices) {
      plan.indices = j.at("payload").get<std::vector<std::size_t>>();
    } else {
      plan.values = j.at("payload").get<std::vector<double>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed balance plan: ") + e.what());
  }
  return plan;
}

BalancePlan plan_subsetting(const EmbeddingDataset& d, BalanceAxis axis, std::uint64_t seed) {
  const auto sizes = partition_sizes(d, axis);
  const auto labels = partition_labels(d, axis);
  const std::size_t smallest = *std::min_element(sizes.begin(), sizes.end());
  std::vector<std::vector<std::size_t>> members(sizes.size());
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);

  BalancePlan plan;
  plan.kind = PlanKind::subset_indices;
  plan.axis = axis;
  plan.seed = seed;
  for (std::size_t p = 0; p < members.size(); ++p) {
    auto& idx = members[p];
    if (idx.size() > smallest) {
      CounterRng rng(seed, p);
      rng.partial_shuffle(std::span<std::size_t>(idx), smallest);
    }
    plan.indices.insert(plan.indices.end(), idx.begin(),
                        idx.begin() + static_cast<std::ptrdiff_t>(smallest));
  }
  std::sort(plan.indices.begin(), plan.indices.end());
  return plan;
}

BalancePlan plan_upsampling(const EmbeddingDataset& d, BalanceAxis axis) {
  const auto sizes = partition_sizes(d, axis);
  const auto labels = partition_labels(d, axis);
  BalancePlan plan;
  plan.kind = PlanKind::sampling_probabilities;
  plan.axis = axis;
  plan.values.resize(labels.size());
  const auto parts = static_cast<double>(sizes.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    plan.values[i] = 1.0 / (parts * static_cast<double>(sizes[labels[i]]));
  }
  return plan;
}

BalancePlan plan_upweighting(const EmbeddingDataset& d, BalanceAxis axis) {
  const auto sizes = partition_sizes(d, axis);
  const auto labels = partition_labels(d, axis);
  const auto largest = static_cast<double>(*std::max_element(sizes.begin(), sizes.end()));
  BalancePlan plan;
  plan.kind = PlanKind::loss_weights;
  plan.axis = axis;
  plan.values.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    plan.values[i] = largest / static_cast<double>(sizes[labels[i]]);
  }
  return plan;
}

std::vector<std::size_t> draw_from_plan(const BalancePlan& plan, std::size_t count,
                                        std::uint64_t seed) {
  if (plan.kind != PlanKind::sampling_probabilities) {
    throw ValidationError("draw_from_plan needs a sampling_probabilities plan");
  }
  std::vector<double> cdf(plan.values.size());
  std::partial_sum(plan.values.begin(), plan.values.end(), cdf.begin());
  const double total = cdf.empty() ? 0.0 : cdf.back();
  if (!(total > 0.0)) throw ValidationError("sampling plan has zero total probability");
  CounterRng rng(seed, 0x5a3b);
  std::vector<std::size_t> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    out[k] = static_cast<std::size_t>(it - cdf.begin());
  }
  return out;
}

std::vector<double> afr_weights_with_factors(std::span<const double> probs,
                                             std::span<const std::uint32_t> labels, double gamma,
                                             std::span<const double> factors) {
  if (probs.empty()) throw ValidationError("empty input");
  if (probs.size() != labels.size()) {
    throw ValidationError("probability and label vectors differ in length");
  }
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
    throw ValidationError("AFR inverse temperature must be finite and >= 0");
  }
  double p_min = 1.0;
  for (double p : probs) {
    if (!(p > 0.0 && p <= 1.0)) {
      throw ValidationError("true-class probabilities must lie in (0, 1]");
    }
    p_min = std::min(p_min, p);
  }
  std::vector<double> w(probs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] >= factors.size()) throw ValidationError("class label out of range");
    // Shifted by min p; the common factor exp(gamma * p_min) cancels.
    w[i] = factors[labels[i]] * std::exp(-gamma * (probs[i] - p_min));
    total += w[i];
  }
  for (double& x : w) x /= total;
  return w;
}

AfrWeights afr_weights(std::span<const double> probs, std::span<const std::uint32_t> labels,
                       double gamma, std::size_t num_classes) {
  if (probs.empty()) throw ValidationError("empty input");
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::uint32_t y : labels) {
    if (y >= num_classes) throw ValidationError("class label out of range");
    ++counts[y];
  }
  AfrWeights out;
  out.gamma = gamma;
  out.class_factors.assign(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] > 0) out.class_factors[c] = 1.0 / static_cast<double>(counts[c]);
  }
  out.weights = afr_weights_with_factors(probs, labels, gamma, out.class_factors);
  return out;
}

}  // namespace collapse_lab
