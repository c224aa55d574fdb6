#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <vector>

#include "sfm/federation.hpp"
#include "sfm/folding.hpp"
#include "sfm/random.hpp"

// (epsilon, delta)-DP release of batch data: one noise draw per matrix
// entry, optional kernel smoothing, then a KAHM on the result. Everything
// after the perturbation is post-processing.
namespace sfm::privacy {

struct DpParams {
  double epsilon = 1.0;  // privacy-loss bound
  double delta = 1e-5;   // probability slack
  double d = 1.0;        // max per-element difference of adjacent matrices

  /// Throws ConfigError unless epsilon > 0, 0 <= delta < 1, d > 0.
  void validate() const;
};

/// How many times the smoother is applied to the perturbed matrix.
struct SmoothingMode {
  enum class Kind { OracleStop, FixedIterations };
  Kind kind = Kind::OracleStop;
  int iterations = 0;  // FixedIterations only

  static SmoothingMode oracle_stop() { return {Kind::OracleStop, 0}; }
  static SmoothingMode fixed(int m);
};

/// Noise distribution function: (1-delta)/2 e^{eps v/d} below zero, an atom of
/// mass delta at zero, and the mirrored tail above.
double noise_cdf(const DpParams& params, double v);
/// Inverse-transform map from u in (0, 1) to a noise value.
double noise_from_uniform(const DpParams& params, double u);
double sample_dp_noise(const DpParams& params, Rng& rng);

/// X + V with V entries drawn independently, row-major order.
Matrix perturb_matrix(const Matrix& rows, const DpParams& params, Rng& rng);

/// Largest per-coordinate range of the rows, a data-driven choice of d.
double suggest_adjacency_bound(const Matrix& rows);

/// S(X) = H_X' X with H_X built from X itself.
Matrix smooth_once(const Matrix& rows);

struct SmoothingResult {
  Matrix smoothed;
  int m_star = 0;
  /// ||S^m(X_noisy) - X_ref||_F for m = 0..m*+1 (OracleStop only; the last
  /// entry is the first non-improving step, absent if the cap was hit).
  std::vector<double> mismatch;
};

inline constexpr int kMaxSmoothingIterations = 1000;

/// OracleStop smooths while the Frobenius mismatch to `reference` strictly
/// decreases; FixedIterations applies exactly m smoothings.
SmoothingResult smooth_optimal(const Matrix& noisy, const Matrix* reference, SmoothingMode mode);

struct PrivateBatchRecord {
  federation::BatchId id;
  Eigen::Index rows = 0;
  int m_star = 0;
  int perturbations = 0;
  std::vector<double> mismatch;
};

struct PrivateBatch {
  folding::HullModel model;
  PrivateBatchRecord record;
};

/// Perturb once, smooth per `mode`, fit the hull. Batches with fewer than
/// two distinct noisy rows skip smoothing.
PrivateBatch private_evaluator(const Matrix& rows, const DpParams& params, SmoothingMode mode,
                               Rng& rng);

/// Thread-safe BatchBuilder for build_global_model: every batch draws its
/// noise from a stream derived from (seed, class, client, batch) and is
/// logged in the manifest.
class PrivateBatchBuilder {
 public:
  PrivateBatchBuilder(DpParams params, SmoothingMode mode, std::uint64_t seed);

  folding::HullModel operator()(const Matrix& rows, const federation::BatchId& id);
  federation::BatchBuilder as_builder();

  /// Records ordered by (class, client, batch).
  std::vector<PrivateBatchRecord> manifest() const;
  const DpParams& params() const noexcept { return params_; }
  SmoothingMode mode() const noexcept { return mode_; }

 private:
  DpParams params_;
  SmoothingMode mode_;
  Rng root_;
  mutable std::mutex mutex_;
  std::vector<PrivateBatchRecord> records_;
};

}  // namespace sfm::privacy
