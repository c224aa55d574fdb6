#include "sfm/folding.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "sfm/error.hpp"

namespace sfm::folding {

namespace {
constexpr double kBelowOne = 1.0 - 0x1p-53;
}  // namespace

std::string_view to_string(Variant v) noexcept {
  switch (v) {
    case Variant::Rms: return "rms";
    case Variant::Product: return "product";
    case Variant::Min: return "min";
    case Variant::Max: return "max";
  }
  return "rms";
}

std::optional<Variant> parse_variant(std::string_view text) noexcept {
  if (text == "rms" || text == "1") return Variant::Rms;
  if (text == "product" || text == "2") return Variant::Product;
  if (text == "min" || text == "3") return Variant::Min;
  if (text == "max" || text == "4") return Variant::Max;
  return std::nullopt;
}

double euclidean_component(const Vector& x, const Vector& image) {
  // 1 - exp(-r) rounds to 1 beyond r ~ 37; keep the value strictly below
  // the constant 1 of a missing cell.
  return std::min(-std::expm1(-(x - image).norm()), kBelowOne);
}

double cosine_component(const Vector& x, const Vector& image) {
  const double nx = x.norm();
  const double ni = image.norm();
  const bool x_zero = nx < kZeroNorm;
  const bool i_zero = ni < kZeroNorm;
  if (x_zero && i_zero) return 0.0;
  if (x_zero || i_zero) return 1.0;
  // Half-angle form of arccos(<u, v>) for unit u, v; stays accurate near 0
  // and pi where arccos of a clamped cosine loses half the digits.
  const Vector u = x / nx;
  const Vector v = image / ni;
  return 2.0 * std::atan2((u - v).norm(), (u + v).norm()) / std::numbers::pi;
}

double combine(double euc, double cos, Variant variant) {
  switch (variant) {
    case Variant::Rms: return std::sqrt(0.5 * (euc * euc + cos * cos));
    case Variant::Product: return euc * cos;
    case Variant::Min: return std::min(euc, cos);
    case Variant::Max: return std::max(euc, cos);
  }
  return std::sqrt(0.5 * (euc * euc + cos * cos));
}

double folding_euc(const kahm::KahmModel& model, const Vector& x) {
  return euclidean_component(x, model.map(x));
}

double folding_cos(const kahm::KahmModel& model, const Vector& x) {
  return cosine_component(x, model.map(x));
}

double folding_measure(const kahm::KahmModel& model, const Vector& x, Variant variant) {
  const Vector image = model.map(x);
  return combine(euclidean_component(x, image), cosine_component(x, image), variant);
}

std::vector<Eigen::Index> batch_sizes(Eigen::Index rows, Eigen::Index batch_size) {
  if (rows < 1) throw DimensionError("batch partition needs at least one row");
  if (batch_size < 2) {
    throw DimensionError("batch size must be at least 2, got " + std::to_string(batch_size));
  }
  const Eigen::Index blocks = (rows + batch_size - 1) / batch_size;
  const Eigen::Index base = rows / blocks;
  const Eigen::Index extra = rows % blocks;
  std::vector<Eigen::Index> sizes(static_cast<std::size_t>(blocks), base);
  for (Eigen::Index b = 0; b < extra; ++b) ++sizes[static_cast<std::size_t>(b)];
  return sizes;
}

std::vector<Matrix> batch_partition(const Matrix& rows, Eigen::Index batch_size) {
  const auto sizes = batch_sizes(rows.rows(), batch_size);
  std::vector<Matrix> blocks;
  blocks.reserve(sizes.size());
  Eigen::Index start = 0;
  for (auto s : sizes) {
    if (s < 2) {
      throw BatchTooSmall("block of " + std::to_string(s) + " row(s) from " +
                          std::to_string(rows.rows()) + " rows with batch size " +
                          std::to_string(batch_size));
    }
    blocks.emplace_back(rows.middleRows(start, s));
    start += s;
  }
  return blocks;
}

std::vector<Eigen::Index> merged_batch_sizes(Eigen::Index rows, Eigen::Index batch_size) {
  std::vector<Eigen::Index> merged;
  for (auto s : batch_sizes(rows, batch_size)) {
    if (s < 2 && !merged.empty()) {
      merged.back() += s;
    } else {
      merged.push_back(s);
    }
  }
  return merged;
}

HullModel HullModel::fit(const Matrix& rows) {
  if (rows.rows() < 1) throw DimensionError("cannot fit a hull to zero rows");
  if (!rows.allFinite()) throw NonFiniteValue("batch contains non-finite values");
  bool distinct = false;
  for (Eigen::Index i = 1; i < rows.rows() && !distinct; ++i) distinct = rows.row(i) != rows.row(0);
  if (!distinct) return single_point(rows.row(0).transpose());
  return HullModel(kahm::KahmModel::build(rows));
}

Vector HullModel::map(const Vector& x) const {
  if (const auto* m = kahm()) return m->map(x);
  return *point();
}

double HullModel::measure(const Vector& x, Variant variant) const {
  const Vector image = map(x);
  return combine(euclidean_component(x, image), cosine_component(x, image), variant);
}

Eigen::Index HullModel::dim() const noexcept {
  if (const auto* m = kahm()) return m->dim();
  return point()->size();
}

FoldingEvaluator::FoldingEvaluator(int class_id, int client_id, std::vector<HullModel> batches,
                                   Variant variant)
    : class_id_(class_id), client_id_(client_id), batches_(std::move(batches)), variant_(variant) {
  if (batches_.empty()) throw DimensionError("folding evaluator needs at least one batch");
}

FoldingEvaluator FoldingEvaluator::missing(int class_id, int client_id, Variant variant) {
  return FoldingEvaluator(MissingTag{}, class_id, client_id, variant);
}

std::vector<double> FoldingEvaluator::batch_measures(const Vector& x) const {
  std::vector<double> out;
  out.reserve(batches_.size());
  for (const auto& b : batches_) out.push_back(b.measure(x, variant_));
  return out;
}

double FoldingEvaluator::evaluate(const Vector& x) const {
  double best = 1.0;
  for (const auto& b : batches_) best = std::min(best, b.measure(x, variant_));
  return best;
}

double global_folding(std::span<const FoldingEvaluator> evaluators, const Vector& x) {
  double best = 1.0;
  for (const auto& ev : evaluators) best = std::min(best, ev.evaluate(x));
  return best;
}

}  // namespace sfm::folding
