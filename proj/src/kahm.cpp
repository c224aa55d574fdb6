#include "sfm/kahm.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "sfm/binary_io.hpp"
#include "sfm/error.hpp"

namespace sfm::kahm {

namespace {

constexpr char kMagic[] = "KAHM";
constexpr std::uint16_t kFormatVersion = 1;

Matrix sample_covariance(const Matrix& rows) {
  const Matrix centered = rows.rowwise() - rows.colwise().mean();
  return (centered.transpose() * centered) / static_cast<double>(rows.rows() - 1);
}

double min_encoded_range(const Matrix& encoded) {
  const Eigen::RowVectorXd spread = encoded.colwise().maxCoeff() - encoded.colwise().minCoeff();
  return spread.minCoeff();
}

void require_buildable(const Matrix& rows) {
  if (rows.rows() < 2) {
    throw DimensionError("KAHM needs at least 2 rows, got " + std::to_string(rows.rows()));
  }
  if (rows.cols() < 1) throw DimensionError("KAHM needs at least one column");
  if (!rows.allFinite()) throw NonFiniteValue("KAHM training rows contain non-finite values");
}

}  // namespace

EncodingMatrix compute_encoding_matrix(const Matrix& rows) {
  require_buildable(rows);
  const Eigen::Index n = rows.cols();
  const Eigen::Index N = rows.rows();

  bool all_equal = true;
  for (Eigen::Index i = 1; i < N && all_equal; ++i) all_equal = rows.row(i) == rows.row(0);
  if (all_equal) throw DegenerateData("all rows identical; sample covariance is zero");

  Eigen::SelfAdjointEigenSolver<Matrix> eig(sample_covariance(rows));
  if (eig.info() != Eigen::Success) {
    throw DegenerateData("eigendecomposition of the sample covariance failed");
  }
  // Eigen sorts ascending; leading directions are the trailing columns.
  const Matrix& vecs = eig.eigenvectors();
  auto leading = [&](Eigen::Index k) {
    Matrix p(k, n);
    for (Eigen::Index i = 0; i < k; ++i) p.row(i) = vecs.col(n - 1 - i).transpose();
    return p;
  };

  EncodingMatrix enc;
  Eigen::Index dim = std::min<Eigen::Index>({kMaxEncodedDim, n, N - 1});
  enc.projection = leading(dim);
  while (min_encoded_range(rows * enc.projection.transpose()) < kMinEncodedRange) {
    if (dim == 1) {
      enc.floored = true;
      break;
    }
    --dim;
    enc.projection = leading(dim);
  }
  return enc;
}

Regularization solve_regularization(const Matrix& rows, const Matrix& kernel) {
  const auto N = static_cast<double>(rows.rows());
  const auto n = static_cast<double>(rows.cols());
  const double mean_sq = rows.squaredNorm() / (n * N);

  Eigen::SelfAdjointEigenSolver<Matrix> eig(kernel);
  if (eig.info() != Eigen::Success) {
    throw NoConvergence("eigendecomposition of the kernel matrix failed");
  }
  const Vector& lambdas = eig.eigenvalues();
  // Residual X_j - K(K + mu I)^{-1} X_j in the eigenbasis scales component i
  // by mu / (lambda_i + mu); only the per-component energies matter.
  const Vector energy = (eig.eigenvectors().transpose() * rows).rowwise().squaredNorm();

  Regularization reg;
  reg.tau = 2.0 * mean_sq;
  auto r = [&](double e) {
    const double mu = e + reg.tau;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < lambdas.size(); ++i) {
      const double f = mu / (lambdas(i) + mu);
      acc += f * f * energy(i);
    }
    return acc / (n * N);
  };

  double e = 0.5 * mean_sq;
  for (int it = 1; it <= kFixedPointMaxIter; ++it) {
    const double next = r(e);
    const double step = std::abs(next - e);
    const bool done = step < kFixedPointRelTol * std::max(1.0, e);
    e = next;
    if (done) {
      reg.fixed_point = e;
      reg.iterations = it;
      reg.residual = std::abs(r(e) - e);
      reg.lambda_star = e + reg.tau;
      return reg;
    }
  }
  throw NoConvergence("regularization fixed point did not converge in " +
                      std::to_string(kFixedPointMaxIter) + " iterations; last residual " +
                      std::to_string(std::abs(r(e) - e)));
}

double gaussian_kernel(const Matrix& theta_inv, const Vector& u, const Vector& v) {
  const Vector d = u - v;
  const double q = d.dot(theta_inv * d);
  return std::exp(-q / (2.0 * static_cast<double>(theta_inv.rows())));
}

Vector KahmModel::encode(const Vector& x) const {
  if (x.size() != dim()) {
    throw DimensionError("probe has " + std::to_string(x.size()) + " features, model expects " +
                         std::to_string(dim()));
  }
  return encoding_.projection * x;
}

KahmModel KahmModel::build(const Matrix& rows) {
  require_buildable(rows);
  KahmModel model;
  model.training_rows_ = rows;
  model.encoding_ = compute_encoding_matrix(rows);
  model.encoded_train_ = rows * model.encoding_.projection.transpose();

  const Eigen::Index nbar = model.reduced_dim();
  Matrix theta = sample_covariance(model.encoded_train_);
  const double mean_diag = theta.trace() / static_cast<double>(nbar);
  Eigen::SelfAdjointEigenSolver<Matrix> theta_eig(theta, Eigen::EigenvaluesOnly);
  if (theta_eig.eigenvalues().minCoeff() < 1e-10 * mean_diag) {
    theta.diagonal().array() += 1e-8 * mean_diag;
    model.theta_jittered_ = true;
  }
  Eigen::LLT<Matrix> theta_llt(theta);
  if (theta_llt.info() != Eigen::Success) {
    throw DegenerateData("encoded covariance is not positive definite");
  }
  model.theta_inv_ = theta_llt.solve(Matrix::Identity(nbar, nbar));
  model.theta_inv_ = 0.5 * (model.theta_inv_ + model.theta_inv_.transpose()).eval();

  model.finish_setup();
  const Matrix kernel = model.kernel_matrix();
  model.regularization_ = solve_regularization(rows, kernel);

  Matrix shifted = kernel;
  shifted.diagonal().array() += model.regularization_.lambda_star;
  Eigen::LLT<Matrix> llt(shifted);
  if (llt.info() != Eigen::Success) {
    throw NoConvergence("K + lambda* I is not numerically positive definite");
  }
  model.chol_lower_ = llt.matrixL();
  return model;
}

void KahmModel::finish_setup() {
  const auto nbar = static_cast<double>(reduced_dim());
  Eigen::LLT<Matrix> llt(theta_inv_ / (2.0 * nbar));
  if (llt.info() != Eigen::Success) {
    throw DegenerateData("inverse encoded covariance is not positive definite");
  }
  whitening_ = llt.matrixU();
  whitened_train_ = encoded_train_ * whitening_.transpose();
}

Vector KahmModel::scaled_sq_distances(const Vector& x) const {
  const Vector z = whitening_ * encode(x);
  return (whitened_train_.rowwise() - z.transpose()).rowwise().squaredNorm();
}

Matrix KahmModel::kernel_matrix() const {
  const Eigen::Index N = size();
  Matrix k(N, N);
  for (Eigen::Index i = 0; i < N; ++i) {
    k(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < N; ++j) {
      const double v = std::exp(-(whitened_train_.row(i) - whitened_train_.row(j)).squaredNorm());
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

Vector KahmModel::kernel_vector(const Vector& x) const {
  return (-scaled_sq_distances(x).array()).exp().matrix();
}

Matrix KahmModel::solve(const Matrix& rhs) const {
  const Matrix y = chol_lower_.triangularView<Eigen::Lower>().solve(rhs);
  return chol_lower_.transpose().triangularView<Eigen::Upper>().solve(y);
}

Vector KahmModel::memberships(const Vector& x) const { return solve(kernel_vector(x)); }

Vector KahmModel::weights(const Vector& x) const {
  const Vector sq = scaled_sq_distances(x);
  const Vector h = solve((-sq.array()).exp().matrix());
  const double total = h.sum();
  if (std::abs(total) >= kDenominatorFloor) return h / total;
  // Far field: normalized kernel weights, computed relative to the nearest
  // row so they cannot underflow to all zeros.
  Vector w = (-(sq.array() - sq.minCoeff())).exp().matrix();
  return w / w.sum();
}

Vector KahmModel::map(const Vector& x) const {
  return training_rows_.transpose() * weights(x);
}

Matrix KahmModel::smoothing_matrix() const { return solve(kernel_matrix()); }

void KahmModel::save(std::ostream& out) const {
  using namespace binary;
  write_magic(out, std::string_view(kMagic, 4));
  write_uint<std::uint16_t>(out, kFormatVersion);
  write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(size()));
  write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(dim()));
  write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(reduced_dim()));
  const std::uint8_t flags = (encoding_.floored ? 1u : 0u) | (theta_jittered_ ? 2u : 0u);
  write_uint<std::uint8_t>(out, flags);
  write_f64(out, regularization_.lambda_star);
  write_f64(out, regularization_.fixed_point);
  write_f64(out, regularization_.tau);
  write_f64(out, regularization_.residual);
  write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(regularization_.iterations));
  write_matrix(out, encoding_.projection);
  write_matrix(out, theta_inv_);
  write_matrix(out, training_rows_);
  write_matrix(out, chol_lower_);
}

KahmModel KahmModel::load(std::istream& in) {
  using namespace binary;
  expect_magic(in, std::string_view(kMagic, 4));
  const auto version = read_uint<std::uint16_t>(in, "KAHM version");
  if (version != kFormatVersion) {
    throw ParseError("unsupported KAHM container version " + std::to_string(version));
  }
  const auto N = read_uint<std::uint32_t>(in, "KAHM row count");
  const auto n = read_uint<std::uint32_t>(in, "KAHM column count");
  const auto nbar = read_uint<std::uint32_t>(in, "KAHM reduced dimension");
  if (N < 2 || n < 1 || nbar < 1 || nbar > n) {
    throw ParseError("inconsistent KAHM shape header");
  }
  const auto flags = read_uint<std::uint8_t>(in, "KAHM flags");

  KahmModel model;
  model.encoding_.floored = (flags & 1u) != 0;
  model.theta_jittered_ = (flags & 2u) != 0;
  model.regularization_.lambda_star = read_f64(in, "lambda*");
  model.regularization_.fixed_point = read_f64(in, "fixed point");
  model.regularization_.tau = read_f64(in, "tau");
  model.regularization_.residual = read_f64(in, "residual");
  model.regularization_.iterations =
      static_cast<int>(read_uint<std::uint32_t>(in, "iteration count"));
  model.encoding_.projection.resize(nbar, n);
  read_matrix(in, model.encoding_.projection, "projection");
  model.theta_inv_.resize(nbar, nbar);
  read_matrix(in, model.theta_inv_, "theta_inv");
  model.training_rows_.resize(N, n);
  read_matrix(in, model.training_rows_, "training rows");
  model.chol_lower_.resize(N, N);
  read_matrix(in, model.chol_lower_, "solve factor");
  if (!model.training_rows_.allFinite() || !model.theta_inv_.allFinite() ||
      !model.chol_lower_.allFinite() || !(model.regularization_.lambda_star > 0.0)) {
    throw NonFiniteValue("KAHM container holds invalid numeric values");
  }
  model.encoded_train_ = model.training_rows_ * model.encoding_.projection.transpose();
  model.finish_setup();
  return model;
}

double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

}  // namespace sfm::kahm
