#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sfm/kahm.hpp"

// Space folding measures: how far a point must be folded by a KAHM to land
// near the modeled rows, mixed from a Euclidean and an angular component.
namespace sfm::folding {

/// Ways of combining the Euclidean and cosine components.
enum class Variant {
  Rms,      // sqrt((euc^2 + cos^2) / 2)
  Product,  // euc * cos
  Min,
  Max,
};

std::string_view to_string(Variant v) noexcept;
/// Accepts "rms", "product", "min", "max" or the option numbers "1".."4".
std::optional<Variant> parse_variant(std::string_view text) noexcept;

/// Norms below this count as zero for the cosine component.
inline constexpr double kZeroNorm = 1e-12;

/// 1 - exp(-||x - image||).
double euclidean_component(const Vector& x, const Vector& image);
/// arccos(<image, x> / (||image|| ||x||)) / pi, evaluated in half-angle form.
/// One near-zero norm gives 1, both near zero gives 0.
double cosine_component(const Vector& x, const Vector& image);
double combine(double euc, double cos, Variant variant);

double folding_euc(const kahm::KahmModel& model, const Vector& x);
double folding_cos(const kahm::KahmModel& model, const Vector& x);
double folding_measure(const kahm::KahmModel& model, const Vector& x, Variant variant);

/// Sizes of the ceil(N / batch_size) contiguous balanced blocks; the first
/// N mod S blocks carry the extra row. Throws DimensionError when
/// batch_size < 2 or N < 1.
std::vector<Eigen::Index> batch_sizes(Eigen::Index rows, Eigen::Index batch_size);

/// Splits rows into batch_sizes() blocks, order preserved. Throws
/// BatchTooSmall if a block would hold fewer than 2 rows.
std::vector<Matrix> batch_partition(const Matrix& rows, Eigen::Index batch_size);

/// Block sizes with every sub-2 block merged into its predecessor.
std::vector<Eigen::Index> merged_batch_sizes(Eigen::Index rows, Eigen::Index batch_size);

/// The affine-hull map of one batch. Batches with a single distinct row
/// cannot carry a KAHM; their hull is that point and the map is constant.
class HullModel {
 public:
  explicit HullModel(kahm::KahmModel model) : impl_(std::move(model)) {}
  static HullModel single_point(Vector row) { return HullModel(std::move(row)); }

  /// KAHM when the rows span more than one point, otherwise the point.
  static HullModel fit(const Matrix& rows);

  Vector map(const Vector& x) const;
  double measure(const Vector& x, Variant variant) const;

  /// Null for single-point hulls.
  const kahm::KahmModel* kahm() const noexcept { return std::get_if<kahm::KahmModel>(&impl_); }
  const Vector* point() const noexcept { return std::get_if<Vector>(&impl_); }
  Eigen::Index dim() const noexcept;

 private:
  explicit HullModel(Vector row) : impl_(std::move(row)) {}
  std::variant<kahm::KahmModel, Vector> impl_;
};

/// All batches of one (class, client) cell. A cell without rows evaluates
/// to the constant 1.
class FoldingEvaluator {
 public:
  FoldingEvaluator(int class_id, int client_id, std::vector<HullModel> batches, Variant variant);
  static FoldingEvaluator missing(int class_id, int client_id, Variant variant);

  int class_id() const noexcept { return class_id_; }
  int client_id() const noexcept { return client_id_; }
  Variant variant() const noexcept { return variant_; }
  bool is_missing() const noexcept { return batches_.empty(); }
  const std::vector<HullModel>& batches() const noexcept { return batches_; }

  std::vector<double> batch_measures(const Vector& x) const;
  /// Minimum over batches.
  double evaluate(const Vector& x) const;

 private:
  struct MissingTag {};
  FoldingEvaluator(MissingTag, int class_id, int client_id, Variant variant)
      : class_id_(class_id), client_id_(client_id), variant_(variant) {}

  int class_id_;
  int client_id_;
  std::vector<HullModel> batches_;
  Variant variant_;
};

inline double local_folding(const FoldingEvaluator& ev, const Vector& x) { return ev.evaluate(x); }

/// Minimum of local_folding over the given per-client evaluators; 1 if empty.
double global_folding(std::span<const FoldingEvaluator> evaluators, const Vector& x);

}  // namespace sfm::folding
