#include "collapse_lab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "collapse_lab/error.hpp"
#include "collapse_lab/rng.hpp"

namespace collapse_lab {

namespace {

bool binary_layout(const SpuriousSpec& spec) {
  return spec.num_classes == 2 && spec.groups_per_class == 2;
}

}  // namespace

void SpuriousSpec::validate() const {
  if (num_classes < 2) throw ValidationError("synth: at least two classes required");
  if (groups_per_class < 1) throw ValidationError("synth: groups_per_class must be >= 1");
  if (!(core_strength >= 0.0) || !(spurious_strength >= 0.0)) {
    throw ValidationError("synth: signal strengths must be >= 0");
  }
  if (!(noise > 0.0) || !std::isfinite(noise)) throw ValidationError("synth: noise must be > 0");
  const std::size_t needed = binary_layout(*this) ? 2 : num_classes + groups_per_class;
  if (dim < needed) {
    throw ValidationError("synth: dim must be at least " + std::to_string(needed));
  }
  if (!group_counts.empty()) {
    if (group_counts.size() != num_classes * groups_per_class) {
      throw ValidationError("synth: group_counts needs one entry per group");
    }
    for (auto c : group_counts) {
      if (c < 1) throw ValidationError("synth: group counts must be >= 1");
    }
  } else {
    if (majority_count < 1) throw ValidationError("synth: majority count must be >= 1");
    if (!(group_ratio > 0.0 && group_ratio <= 1.0)) {
      throw ValidationError("synth: group ratio must lie in (0, 1]");
    }
  }
}

std::vector<std::size_t> SpuriousSpec::resolved_counts() const {
  validate();
  if (!group_counts.empty()) return group_counts;
  const auto minority = static_cast<std::size_t>(
      std::max(1.0, std::round(static_cast<double>(majority_count) * group_ratio)));
  std::vector<std::size_t> counts(num_classes * groups_per_class, minority);
  for (std::size_t c = 0; c < num_classes; ++c) counts[majority_group_of(c)] = majority_count;
  return counts;
}

RowMatrix spurious_group_means(const SpuriousSpec& spec) {
  spec.validate();
  const std::size_t groups = spec.num_classes * spec.groups_per_class;
  RowMatrix means = RowMatrix::Zero(static_cast<Eigen::Index>(groups),
                                    static_cast<Eigen::Index>(spec.dim));
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t cls = g / spec.groups_per_class;
    const std::size_t s = g % spec.groups_per_class;
    const auto row = static_cast<Eigen::Index>(g);
    if (binary_layout(spec)) {
      const double ys = cls == 1 ? 1.0 : -1.0;
      const double ss = s == 1 ? 1.0 : -1.0;
      means(row, 0) = ys * spec.core_strength;
      means(row, 1) = ss * spec.spurious_strength;
    } else {
      means(row, static_cast<Eigen::Index>(cls)) = spec.core_strength;
      means(row, static_cast<Eigen::Index>(spec.num_classes + s)) = spec.spurious_strength;
    }
  }
  return means;
}

EmbeddingDataset generate_spurious(const SpuriousSpec& spec) {
  const auto counts = spec.resolved_counts();
  const RowMatrix means = spurious_group_means(spec);
  std::size_t total = 0;
  for (auto c : counts) total += c;
  RowMatrix x(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(spec.dim));
  std::vector<std::uint32_t> cls(total);
  std::vector<std::uint32_t> grp(total);
  std::vector<std::uint32_t> g2c(counts.size());
  std::size_t row = 0;
  for (std::size_t g = 0; g < counts.size(); ++g) {
    g2c[g] = static_cast<std::uint32_t>(g / spec.groups_per_class);
    CounterRng rng(spec.seed, g);
    for (std::size_t k = 0; k < counts[g]; ++k, ++row) {
      const auto r = static_cast<Eigen::Index>(row);
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        x(r, j) = means(static_cast<Eigen::Index>(g), j) + spec.noise * rng.normal();
      }
      cls[row] = g2c[g];
      grp[row] = static_cast<std::uint32_t>(g);
    }
  }
  return EmbeddingDataset(std::move(x), std::move(cls), std::move(grp), std::move(g2c),
                          spec.num_classes, "synth-spurious");
}

EmbeddingDataset generate_collapsed(std::size_t dim, std::size_t num_classes,
                                    std::size_t per_class, double jitter, std::uint64_t seed) {
  if (num_classes < 1 || per_class < 1) throw ValidationError("synth: empty collapsed dataset");
  if (dim < num_classes) throw ValidationError("synth: dim must be >= number of classes");
  if (!(jitter >= 0.0) || !std::isfinite(jitter)) throw ValidationError("synth: jitter must be >= 0");
  const std::size_t total = num_classes * per_class;
  RowMatrix x = RowMatrix::Zero(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(dim));
  std::vector<std::uint32_t> cls(total);
  std::vector<std::uint32_t> g2c(num_classes);
  CounterRng rng(seed, 0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    g2c[c] = static_cast<std::uint32_t>(c);
    for (std::size_t k = 0; k < per_class; ++k) {
      const std::size_t row = c * per_class + k;
      const auto r = static_cast<Eigen::Index>(row);
      x(r, static_cast<Eigen::Index>(c)) = 1.0;
      if (jitter > 0.0) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) x(r, j) += jitter * (2.0 * rng.uniform() - 1.0);
      }
      cls[row] = static_cast<std::uint32_t>(c);
    }
  }
  auto grp = cls;
  return EmbeddingDataset(std::move(x), std::move(cls), std::move(grp), std::move(g2c),
                          num_classes, "synth-collapsed");
}

}  // namespace collapse_lab
