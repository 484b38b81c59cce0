#pragma once

#include <cstdint>
#include <vector>

#include "collapse_lab/dataset.hpp"

namespace collapse_lab {

/// Gaussian mixture with a core (label) direction and a spurious direction.
///
/// Binary tasks with two groups per class use y, s in {-1, +1}: the mean of
/// group (y, s) is y * core * e_0 + s * spurious * e_1 and the majority
/// group of each class has s = y. With more classes, class y uses the core
/// direction e_y and spurious value s uses e_{|Y| + s}; the majority group
/// of class y has s = y mod groups_per_class.
struct SpuriousSpec {
  std::size_t dim = 64;
  std::size_t num_classes = 2;
  std::size_t groups_per_class = 2;
  double core_strength = 1.0;
  double spurious_strength = 3.0;
  double noise = 1.0;
  /// Explicit per-group counts (group id = class * groups_per_class + s).
  /// When empty, `majority_count` and `group_ratio` define them.
  std::vector<std::size_t> group_counts;
  std::size_t majority_count = 500;
  double group_ratio = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<std::size_t> resolved_counts() const;
  std::size_t majority_group_of(std::size_t cls) const noexcept {
    return cls * groups_per_class + cls % groups_per_class;
  }
};

EmbeddingDataset generate_spurious(const SpuriousSpec& spec);

/// Group means for the given settings (row g is the mean of group g).
RowMatrix spurious_group_means(const SpuriousSpec& spec);

/// Features equal to orthonormal class means (scaled coordinate axes) plus
/// uniform jitter in [-jitter, jitter] per coordinate. One group per class.
EmbeddingDataset generate_collapsed(std::size_t dim, std::size_t num_classes,
                                    std::size_t per_class, double jitter, std::uint64_t seed);

}  // namespace collapse_lab
