#include "sfm/feature_matrix.hpp"

#include <algorithm>
#include <string>

#include "sfm/error.hpp"

namespace sfm {

namespace {

void validate_rows(const Matrix& rows) {
  if (rows.rows() < 1 || rows.cols() < 1) {
    throw DimensionError("feature matrix must have at least one row and one column");
  }
  if (!rows.allFinite()) {
    throw NonFiniteValue("feature matrix contains non-finite entries");
  }
}

}  // namespace

FeatureMatrix::FeatureMatrix(Matrix rows) : rows_(std::move(rows)) {
  validate_rows(rows_);
}

FeatureMatrix::FeatureMatrix(Matrix rows, std::vector<int> labels)
    : rows_(std::move(rows)), labels_(std::move(labels)) {
  validate_rows(rows_);
  if (static_cast<Eigen::Index>(labels_->size()) != rows_.rows()) {
    throw DimensionError("label count " + std::to_string(labels_->size()) +
                         " does not match row count " + std::to_string(rows_.rows()));
  }
  for (int label : *labels_) {
    if (label < 0) throw DimensionError("negative class label " + std::to_string(label));
  }
}

const std::vector<int>& FeatureMatrix::labels() const {
  if (!labels_) throw DimensionError("feature matrix has no labels");
  return *labels_;
}

int FeatureMatrix::num_classes() const {
  if (!labels_ || labels_->empty()) return 0;
  return *std::max_element(labels_->begin(), labels_->end()) + 1;
}

FeatureMatrix FeatureMatrix::select(std::span<const Eigen::Index> indices) const {
  Matrix out(static_cast<Eigen::Index>(indices.size()), dim());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = rows_.row(indices[i]);
  }
  if (!labels_) return FeatureMatrix(std::move(out));
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (auto idx : indices) labels.push_back((*labels_)[static_cast<std::size_t>(idx)]);
  return FeatureMatrix(std::move(out), std::move(labels));
}

void FeatureMatrix::check_labels(int num_classes) const {
  for (int label : labels()) {
    if (label >= num_classes) {
      throw DimensionError("class label " + std::to_string(label) + " outside [0, " +
                           std::to_string(num_classes) + ")");
    }
  }
}

std::vector<std::vector<Eigen::Index>> rows_by_class(const FeatureMatrix& data,
                                                     int num_classes) {
  data.check_labels(num_classes);
  std::vector<std::vector<Eigen::Index>> groups(static_cast<std::size_t>(num_classes));
  const auto& labels = data.labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    groups[static_cast<std::size_t>(labels[i])].push_back(static_cast<Eigen::Index>(i));
  }
  return groups;
}

}  // namespace sfm
