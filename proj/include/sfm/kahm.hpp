#pragma once

#include <iosfwd>

#include "sfm/feature_matrix.hpp"

// Kernel Affine Hull Machines.
//
// A KAHM built on rows x^1..x^N maps any point x to sum_i w_i(x) x^i with
// weights summing to one, so its image lies in the affine hull of the rows.
// The weights come from a kernel regularized least squares fit of per-row
// indicator functions in a PCA-reduced space.
namespace sfm::kahm {

/// Encoded dimensions are dropped while any of them spans less than this.
inline constexpr double kMinEncodedRange = 1e-3;
inline constexpr int kMaxEncodedDim = 20;

/// Projection onto the leading principal directions of the sample covariance.
struct EncodingMatrix {
  Matrix projection;  // reduced_dim x n, rows orthonormal
  /// Set when the reduction loop would have dropped below one dimension.
  bool floored = false;

  Eigen::Index reduced_dim() const noexcept { return projection.rows(); }
};

/// Starts from min(20, n, N-1) leading eigenvectors and removes trailing
/// ones while the narrowest encoded coordinate spans less than 1e-3.
/// Throws DimensionError for N < 2 and DegenerateData when all rows coincide.
EncodingMatrix compute_encoding_matrix(const Matrix& rows);

/// Outcome of the regularization fixed-point iteration.
struct Regularization {
  double lambda_star = 0.0;  // fixed_point + tau
  double fixed_point = 0.0;
  double tau = 0.0;          // (2 / (nN)) ||X||_F^2
  double residual = 0.0;     // |r(fixed_point, tau) - fixed_point|
  int iterations = 0;
};

inline constexpr double kFixedPointRelTol = 1e-10;
inline constexpr int kFixedPointMaxIter = 10'000;

/// Iterates e <- r(e, tau) from the midpoint of (0, ||X||_F^2 / (nN)), where
///   r(e, tau) = 1/(nN) sum_j || X_j - K (K + (e + tau) I)^{-1} X_j ||^2
/// over the columns X_j. One eigendecomposition of K makes every iterate O(N).
/// Throws NoConvergence after kFixedPointMaxIter iterations.
Regularization solve_regularization(const Matrix& rows, const Matrix& kernel);

/// Gaussian kernel exp(-(u - v)' theta_inv (u - v) / (2 nbar)).
double gaussian_kernel(const Matrix& theta_inv, const Vector& u, const Vector& v);

class KahmModel {
 public:
  /// Throws DimensionError (N < 2), NonFiniteValue, DegenerateData or
  /// NoConvergence.
  static KahmModel build(const Matrix& rows);
  static KahmModel build(const FeatureMatrix& data) { return build(data.rows()); }

  Eigen::Index size() const noexcept { return training_rows_.rows(); }
  Eigen::Index dim() const noexcept { return training_rows_.cols(); }
  Eigen::Index reduced_dim() const noexcept { return encoding_.reduced_dim(); }

  const Matrix& training_rows() const noexcept { return training_rows_; }
  const EncodingMatrix& encoding() const noexcept { return encoding_; }
  const Matrix& theta_inv() const noexcept { return theta_inv_; }
  const Matrix& encoded_train() const noexcept { return encoded_train_; }
  double lambda_star() const noexcept { return regularization_.lambda_star; }
  const Regularization& regularization() const noexcept { return regularization_; }
  /// True when theta needed a diagonal jitter before inversion.
  bool theta_jittered() const noexcept { return theta_jittered_; }

  /// Throws DimensionError when x does not have dim() entries.
  Vector encode(const Vector& x) const;
  double kernel_eval(const Vector& u, const Vector& v) const {
    return gaussian_kernel(theta_inv_, u, v);
  }

  /// K_X over the encoded training rows.
  Matrix kernel_matrix() const;
  /// Kernel values k(Px, Px^i), i = 1..N.
  Vector kernel_vector(const Vector& x) const;
  /// h^i(Px) = row_i((K + lambda* I)^{-1}) k(Px).
  Vector memberships(const Vector& x) const;
  /// Affine weights; sum to one. Falls back to normalized kernel weights when
  /// the memberships sum to within kDenominatorFloor of zero.
  Vector weights(const Vector& x) const;
  /// A_X(x) = sum_i w_i x^i.
  Vector map(const Vector& x) const;

  /// (K + lambda* I)^{-1} applied to the columns of rhs.
  Matrix solve(const Matrix& rhs) const;
  /// H_X = (K + lambda* I)^{-1} K.
  Matrix smoothing_matrix() const;

  /// Lower Cholesky factor of K + lambda* I.
  const Matrix& solve_factor() const noexcept { return chol_lower_; }

  /// Binary container; see docs/formats.md.
  void save(std::ostream& out) const;
  static KahmModel load(std::istream& in);

  static constexpr double kDenominatorFloor = 1e-12;

 private:
  KahmModel() = default;
  void finish_setup();
  /// Squared whitened distances -log k(Px, Px^i).
  Vector scaled_sq_distances(const Vector& x) const;

  Matrix training_rows_;
  EncodingMatrix encoding_;
  Matrix theta_inv_;
  Matrix encoded_train_;
  Regularization regularization_;
  bool theta_jittered_ = false;
  Matrix chol_lower_;

  // Derived on build/load: whitening W with W'W = theta_inv / (2 nbar), and
  // whitened training points.
  Matrix whitening_;
  Matrix whitened_train_;
};

inline KahmModel build_kahm(const Matrix& rows) { return KahmModel::build(rows); }
inline KahmModel build_kahm(const FeatureMatrix& data) { return KahmModel::build(data); }

/// Spectral norm ||X||_2.
double spectral_norm(const Matrix& m);

}  // namespace sfm::kahm
