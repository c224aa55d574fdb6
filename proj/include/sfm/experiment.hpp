#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfm/federation.hpp"
#include "sfm/folding.hpp"
#include "sfm/privacy.hpp"

namespace sfm::experiment {

struct SyntheticSpec {
  int classes = 3;
  int per_class = 200;
  int test_per_class = 100;
  int dim = 16;
  double separation = 8.0;
};

struct DpConfig {
  privacy::DpParams params;
  bool auto_d = false;  // derive d from the training data range
  privacy::SmoothingMode mode = privacy::SmoothingMode::oracle_stop();
  /// Also build the unsmoothed private model and report its accuracy.
  bool compare_unsmoothed = true;
};

struct FheConfig {
  int bits = 16;
  std::string backend = "plaintext";
};

struct ExperimentConfig {
  std::filesystem::path train_path;  // empty: synthetic data
  std::filesystem::path test_path;
  std::filesystem::path assignment_path;  // empty: Dirichlet partition
  SyntheticSpec synthetic;

  int clients = 100;
  double alpha = 0.1;
  std::optional<double> rho;
  Eigen::Index batch_size = 100;
  folding::Variant variant = folding::Variant::Rms;
  std::optional<DpConfig> dp;
  std::optional<FheConfig> fhe;
  std::uint64_t seed = 0;
  int threads = 1;
  bool apply_tanh = false;
  double scale = 1.0;

  std::filesystem::path output_dir;  // empty: nothing written
  bool save_model = false;

  /// Throws ConfigError on out-of-range values or missing input files.
  void validate() const;
};

struct ExperimentResult {
  nlohmann::json metrics;
  std::optional<federation::GlobalSfmModel> model;
};

/// subsample -> partition -> build (private when configured) -> evaluate ->
/// optional secure evaluation. With an output directory, writes
/// metrics.json, log.jsonl and optionally model.sfmg.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Training and test sets as the experiment would load them.
std::pair<FeatureMatrix, FeatureMatrix> load_datasets(const ExperimentConfig& config);

/// Metrics for a model on a test set (shared by run_experiment and the CLI).
nlohmann::json evaluation_metrics(const federation::GlobalSfmModel& model, const FeatureMatrix& test,
                                  int threads);

/// Secure evaluation summary: agreement with the clear classifier and gate
/// counts per query.
nlohmann::json fhe_metrics(const federation::GlobalSfmModel& model, const FeatureMatrix& test,
                           const FheConfig& fhe, std::span<const int> clear_predictions);

nlohmann::json privacy_manifest(const privacy::PrivateBatchBuilder& builder);

/// Violations of the documented metrics schema; empty when valid.
std::vector<std::string> validate_metrics(const nlohmann::json& metrics);

/// Accuracy as a percentage with two decimals, e.g. "84.70".
std::string format_percent(double fraction);

/// metrics without run-dependent timing fields.
nlohmann::json strip_timings(nlohmann::json metrics);

}  // namespace sfm::experiment
