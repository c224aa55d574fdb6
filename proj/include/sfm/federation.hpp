#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfm/feature_matrix.hpp"
#include "sfm/folding.hpp"

// Single-shot federated protocol: clients fit per-class KAHM batches on
// their own rows, the server combines the scalar folding measures.
namespace sfm::federation {

struct PartitionSpec {
  int clients = 1;
  double alpha = 0.5;           // Dirichlet concentration
  std::optional<double> rho;    // long-tail imbalance ratio
  std::uint64_t seed = 0;

  /// Throws ConfigError on clients < 1, alpha <= 0 or rho < 1.
  void validate() const;
};

/// Client id per row. For each class a share vector p_c ~ Dir(alpha 1_Q) is
/// drawn, then every row of that class goes to a client drawn from p_c.
std::vector<int> dirichlet_partition(std::span<const int> labels, int num_classes,
                                     const PartitionSpec& spec);

/// Keeps ceil(N_max * rho^(-c/(C-1))) rows of class c, sampled uniformly
/// without replacement; kept rows stay in input order.
FeatureMatrix longtail_subsample(const FeatureMatrix& data, double rho, std::uint64_t seed);

/// Position of a batch inside the (class, client) grid.
struct BatchId {
  int class_id = 0;
  int client_id = 0;
  int batch = 0;
};

/// Turns one batch of raw rows into its hull model. Must be safe to call
/// concurrently for distinct batches.
using BatchBuilder = std::function<folding::HullModel(const Matrix& rows, const BatchId& id)>;

struct BuildOptions {
  Eigen::Index batch_size = 100;
  folding::Variant variant = folding::Variant::Rms;
  int threads = 1;
  BatchBuilder batch_builder;  // empty: HullModel::fit
};

class GlobalSfmModel {
 public:
  /// Grid is class-major: cell (c, q) at index c * clients + q.
  GlobalSfmModel(int classes, int clients, Eigen::Index dim, folding::Variant variant,
                 std::vector<folding::FoldingEvaluator> grid);

  int num_classes() const noexcept { return classes_; }
  int num_clients() const noexcept { return clients_; }
  Eigen::Index dim() const noexcept { return dim_; }
  folding::Variant variant() const noexcept { return variant_; }
  const folding::FoldingEvaluator& cell(int class_id, int client_id) const;

  /// C x Q matrix of local foldings.
  Matrix local_measures(const Vector& x) const;
  /// Per-class minimum over clients.
  Vector global_measures(const Vector& x) const;
  /// 1 for every class attaining the minimum global measure.
  std::vector<int> feature_map(const Vector& x) const;
  /// Lowest class index among the minimizers.
  int classify(const Vector& x) const;

  std::size_t batch_count() const;

  void save(std::ostream& out) const;
  static GlobalSfmModel load(std::istream& in);

 private:
  void check_dim(const Vector& x) const;

  int classes_;
  int clients_;
  Eigen::Index dim_;
  folding::Variant variant_;
  std::vector<folding::FoldingEvaluator> grid_;
};

/// Multi-hot indicator of the minima of `measures`.
std::vector<int> argmin_indicator(const Vector& measures);
/// Index of the first 1; 0 when none is set.
int lowest_set_index(std::span<const int> indicator);

/// Builds every (class, client) cell. Cells without rows become constant-1
/// evaluators; undersized trailing blocks merge into the previous block.
GlobalSfmModel build_global_model(const FeatureMatrix& train, std::span<const int> assignment,
                                  int num_classes, int num_clients, const BuildOptions& options);

struct Evaluation {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;          // NaN for classes absent from the test set
  std::vector<std::vector<long>> confusion;        // [true][predicted]
  std::vector<int> predictions;
};

/// Throws EmptyTestSet when there are no rows.
Evaluation evaluate(const GlobalSfmModel& model, const Matrix& rows, std::span<const int> labels,
                    int threads = 1);
Evaluation evaluate(const GlobalSfmModel& model, const FeatureMatrix& test, int threads = 1);
double evaluate_accuracy(const GlobalSfmModel& model, const FeatureMatrix& test);

/// CSV with lines "row_index,client_id"; a header line starting with '#' or
/// a non-digit is skipped. Every row must appear exactly once.
std::vector<int> read_assignment_csv(std::istream& in, Eigen::Index rows);
void write_assignment_csv(std::ostream& out, std::span<const int> assignment);

}  // namespace sfm::federation
