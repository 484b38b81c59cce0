#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "collapse_lab/dataset.hpp"
#include "collapse_lab/rng.hpp"

namespace testing {

using collapse_lab::EmbeddingDataset;
using collapse_lab::RowMatrix;

// One group per class unless `groups` is given.
inline EmbeddingDataset make_dataset(const std::vector<std::vector<double>>& rows,
                                     const std::vector<std::uint32_t>& classes,
                                     std::vector<std::uint32_t> groups = {},
                                     std::vector<std::uint32_t> group_to_class = {},
                                     std::size_t num_classes = 0) {
  RowMatrix x(static_cast<Eigen::Index>(rows.size()),
              static_cast<Eigen::Index>(rows.empty() ? 1 : rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  std::uint32_t top = 0;
  for (auto c : classes) top = std::max(top, c);
  if (num_classes == 0) num_classes = std::max<std::size_t>(2, top + 1);
  if (groups.empty()) {
    groups = classes;
    group_to_class.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) group_to_class[c] = static_cast<std::uint32_t>(c);
  }
  return EmbeddingDataset(std::move(x), classes, std::move(groups), std::move(group_to_class),
                          num_classes);
}

// Gaussian features around random class means; group g belongs to class g % classes.
inline EmbeddingDataset random_dataset(std::uint64_t seed, std::size_t m, std::size_t n,
                                       std::size_t classes, double spread = 1.0,
                                       std::size_t groups_per_class = 1) {
  collapse_lab::CounterRng rng(seed, 99);
  const std::size_t groups = classes * groups_per_class;
  RowMatrix centers(static_cast<Eigen::Index>(groups), static_cast<Eigen::Index>(n));
  for (Eigen::Index g = 0; g < centers.rows(); ++g) {
    for (Eigen::Index j = 0; j < centers.cols(); ++j) centers(g, j) = 2.0 * rng.normal();
  }
  RowMatrix x(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  std::vector<std::uint32_t> cls(m), grp(m), g2c(groups);
  for (std::size_t g = 0; g < groups; ++g) g2c[g] = static_cast<std::uint32_t>(g % classes);
  for (std::size_t i = 0; i < m; ++i) {
    const auto g = static_cast<std::uint32_t>(i < groups ? i : rng.below(groups));
    grp[i] = g;
    cls[i] = g2c[g];
    for (std::size_t j = 0; j < n; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          centers(g, static_cast<Eigen::Index>(j)) + spread * rng.normal();
    }
  }
  return EmbeddingDataset(std::move(x), std::move(cls), std::move(grp), std::move(g2c), classes);
}

// Fresh directory under the system temp dir, unique per test name.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("collapse_lab_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
