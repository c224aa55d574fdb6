#include "sfm/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>

#include "sfm/error.hpp"

namespace sfm::privacy {

void DpParams::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("dp epsilon must be > 0");
  if (!(delta >= 0.0 && delta < 1.0)) throw ConfigError("dp delta must lie in [0, 1)");
  if (!(d > 0.0) || !std::isfinite(d)) throw ConfigError("dp adjacency bound d must be > 0");
}

SmoothingMode SmoothingMode::fixed(int m) {
  if (m < 0) throw ConfigError("fixed smoothing iterations must be >= 0");
  return {Kind::FixedIterations, m};
}

double noise_cdf(const DpParams& p, double v) {
  const double rate = p.epsilon / p.d;
  if (v < 0.0) return 0.5 * (1.0 - p.delta) * std::exp(rate * v);
  return 1.0 - 0.5 * (1.0 - p.delta) * std::exp(-rate * v);
}

double noise_from_uniform(const DpParams& p, double u) {
  const double scale = p.d / p.epsilon;
  const double lower = 0.5 * (1.0 - p.delta);
  const double upper = 0.5 * (1.0 + p.delta);
  if (u < lower) return scale * std::log(u / lower);
  if (u <= upper) return 0.0;
  return -scale * std::log((1.0 - u) / lower);
}

double sample_dp_noise(const DpParams& params, Rng& rng) {
  return noise_from_uniform(params, rng.uniform_open());
}

Matrix perturb_matrix(const Matrix& rows, const DpParams& params, Rng& rng) {
  params.validate();
  Matrix out = rows;
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) += sample_dp_noise(params, rng);
  return out;
}

double suggest_adjacency_bound(const Matrix& rows) {
  if (rows.size() == 0) return 0.0;
  return (rows.colwise().maxCoeff() - rows.colwise().minCoeff()).maxCoeff();
}

Matrix smooth_once(const Matrix& rows) {
  const auto model = kahm::KahmModel::build(rows);
  return model.smoothing_matrix().transpose() * rows;
}

SmoothingResult smooth_optimal(const Matrix& noisy, const Matrix* reference, SmoothingMode mode) {
  SmoothingResult result;
  result.smoothed = noisy;
  if (mode.kind == SmoothingMode::Kind::FixedIterations) {
    for (int m = 0; m < mode.iterations; ++m) result.smoothed = smooth_once(result.smoothed);
    result.m_star = mode.iterations;
    return result;
  }
  if (reference == nullptr) throw ConfigError("oracle-stop smoothing needs the noise-free matrix");
  if (reference->rows() != noisy.rows() || reference->cols() != noisy.cols()) {
    throw DimensionError("reference and noisy matrices differ in shape");
  }
  double best = (noisy - *reference).norm();
  result.mismatch.push_back(best);
  while (result.m_star < kMaxSmoothingIterations) {
    Matrix next = smooth_once(result.smoothed);
    const double mismatch = (next - *reference).norm();
    result.mismatch.push_back(mismatch);
    if (!(mismatch < best)) break;
    best = mismatch;
    result.smoothed = std::move(next);
    ++result.m_star;
  }
  return result;
}

namespace {

bool has_two_distinct_rows(const Matrix& rows) {
  for (Eigen::Index i = 1; i < rows.rows(); ++i)
    if (rows.row(i) != rows.row(0)) return true;
  return false;
}

}  // namespace

PrivateBatch private_evaluator(const Matrix& rows, const DpParams& params, SmoothingMode mode,
                               Rng& rng) {
  PrivateBatchRecord record;
  record.rows = rows.rows();
  const Matrix noisy = perturb_matrix(rows, params, rng);
  record.perturbations = 1;

  Matrix released = noisy;
  if (has_two_distinct_rows(noisy)) {
    auto smoothing = smooth_optimal(noisy, &rows, mode);
    record.m_star = smoothing.m_star;
    record.mismatch = std::move(smoothing.mismatch);
    released = std::move(smoothing.smoothed);
  }
  return {folding::HullModel::fit(released), std::move(record)};
}

PrivateBatchBuilder::PrivateBatchBuilder(DpParams params, SmoothingMode mode, std::uint64_t seed)
    : params_(params), mode_(mode), root_(seed) {
  params_.validate();
}

folding::HullModel PrivateBatchBuilder::operator()(const Matrix& rows, const federation::BatchId& id) {
  Rng rng = root_.derive({0xd9, static_cast<std::uint64_t>(id.class_id),
                          static_cast<std::uint64_t>(id.client_id), static_cast<std::uint64_t>(id.batch)});
  auto batch = private_evaluator(rows, params_, mode_, rng);
  batch.record.id = id;
  std::lock_guard lock(mutex_);
  records_.push_back(std::move(batch.record));
  return std::move(batch.model);
}

federation::BatchBuilder PrivateBatchBuilder::as_builder() {
  return [this](const Matrix& rows, const federation::BatchId& id) { return (*this)(rows, id); };
}

std::vector<PrivateBatchRecord> PrivateBatchBuilder::manifest() const {
  std::lock_guard lock(mutex_);
  auto out = records_;
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a.id.class_id, a.id.client_id, a.id.batch) <
           std::tie(b.id.class_id, b.id.client_id, b.id.batch);
  });
  return out;
}

}  // namespace sfm::privacy
