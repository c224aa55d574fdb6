#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace sfm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// N x n embedding rows with optional integer class labels.
///
/// Construction validates the invariants: at least one row and column, all
/// entries finite, labels (when present) one per row and non-negative.
class FeatureMatrix {
 public:
  explicit FeatureMatrix(Matrix rows);
  FeatureMatrix(Matrix rows, std::vector<int> labels);

  const Matrix& rows() const noexcept { return rows_; }
  Eigen::Index size() const noexcept { return rows_.rows(); }
  Eigen::Index dim() const noexcept { return rows_.cols(); }

  bool has_labels() const noexcept { return labels_.has_value(); }
  /// Throws DimensionError when the matrix is unlabelled.
  const std::vector<int>& labels() const;

  /// One past the largest label, or 0 when unlabelled.
  int num_classes() const;

  /// Rows at the given indices, in order, labels carried along.
  FeatureMatrix select(std::span<const Eigen::Index> indices) const;

  /// Throws DimensionError if any label lies outside [0, num_classes).
  void check_labels(int num_classes) const;

 private:
  Matrix rows_;
  std::optional<std::vector<int>> labels_;
};

/// Row indices grouped by label: result[c] lists the rows with label c.
std::vector<std::vector<Eigen::Index>> rows_by_class(const FeatureMatrix& data,
                                                     int num_classes);

}  // namespace sfm
