#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace collapse_lab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Labeled feature embeddings: m examples of dimension N, each with a class
/// id and a group id. Groups refine classes through `group_to_class`.
///
/// Instances are validated on construction and are not mutated afterwards;
/// every transformation returns a new dataset.
class EmbeddingDataset {
 public:
  EmbeddingDataset(RowMatrix features, std::vector<std::uint32_t> class_labels,
                   std::vector<std::uint32_t> group_labels,
                   std::vector<std::uint32_t> group_to_class, std::size_t num_classes,
                   std::string name = {});

  std::size_t size() const noexcept { return static_cast<std::size_t>(features_.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(features_.cols()); }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t num_groups() const noexcept { return group_to_class_.size(); }

  const RowMatrix& features() const noexcept { return features_; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {features_.data() + i * dim(), dim()};
  }
  const std::vector<std::uint32_t>& class_labels() const noexcept { return class_labels_; }
  const std::vector<std::uint32_t>& group_labels() const noexcept { return group_labels_; }
  const std::vector<std::uint32_t>& group_to_class() const noexcept { return group_to_class_; }
  const std::string& name() const noexcept { return name_; }

  /// Rows at `indices`, in the given order.
  EmbeddingDataset select(std::span<const std::size_t> indices) const;

  /// Copy with features multiplied by `factor`.
  EmbeddingDataset scaled(double factor) const;

  EmbeddingDataset renamed(std::string name) const;

 private:
  RowMatrix features_;
  std::vector<std::uint32_t> class_labels_;
  std::vector<std::uint32_t> group_labels_;
  std::vector<std::uint32_t> group_to_class_;
  std::size_t num_classes_;
  std::string name_;
};

struct GroupStats {
  std::vector<std::size_t> group_counts;
  std::vector<std::size_t> class_counts;
  /// min group count / max group count within each class; 1.0 when a class
  /// has a single group. Empty groups are ignored.
  std::vector<double> class_group_ratio;
};

GroupStats group_stats(const EmbeddingDataset& d);

struct SubsampleOptions {
  /// Optional cap on the total size after ratio subsampling. When exceeded,
  /// every group is scaled down proportionally (at least one example each).
  std::optional<std::size_t> max_total;
};

/// Indices (ascending) retained by subsample_to_group_ratio.
std::vector<std::size_t> group_ratio_selection(const EmbeddingDataset& d, double target_ratio,
                                               std::uint64_t seed,
                                               const SubsampleOptions& opts = {});

/// Within each class, uniformly subsamples the non-minority groups down to
/// round(minority_count / target_ratio) examples so the minority/majority
/// ratio reaches the target. Minority groups are never touched.
EmbeddingDataset subsample_to_group_ratio(const EmbeddingDataset& d, double target_ratio,
                                          std::uint64_t seed,
                                          const SubsampleOptions& opts = {});

// --- On-disk format -------------------------------------------------------

enum class FeatureDtype { f32, f64 };

/// JSON sidecar describing a feature blob and its labels file.
struct Manifest {
  std::string features_path;
  FeatureDtype dtype = FeatureDtype::f64;
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t classes = 0;
  std::size_t groups = 0;
  std::vector<std::uint32_t> group_to_class;
  std::string labels_path;
  bool big_endian = false;
  std::string name;
  std::string split;
};

Manifest read_manifest(const std::filesystem::path& manifest_path);

/// Loads and validates a dataset. Relative paths in the manifest resolve
/// against the manifest's directory. Feature and label files ending in
/// `.csv` use the text formats; anything else is read as little-endian
/// binary (unless the manifest declares "byte_order": "big").
EmbeddingDataset load_dataset(const std::filesystem::path& manifest_path);

struct SaveOptions {
  FeatureDtype dtype = FeatureDtype::f64;
  bool csv = false;
  std::string split;
  /// Copied verbatim into the manifest when set.
  nlohmann::ordered_json provenance;
};

/// Writes `<stem>.json`, `<stem>.f64|f32|features.csv` and `<stem>.labels|labels.csv`
/// next to each other and returns the manifest path.
std::filesystem::path save_dataset(const EmbeddingDataset& d, const std::filesystem::path& stem,
                                   const SaveOptions& opts = {});

}  // namespace collapse_lab
