#include <doctest.h>

#include <cmath>
#include <sstream>

#include "sfm/error.hpp"
#include "sfm/kahm.hpp"
#include "support.hpp"

using namespace sfm;
using namespace sfm::kahm;

namespace {

// r(e, tau) by a direct solve of (K + (e + tau) I) per column.
double r_direct(const Matrix& x, const Matrix& k, double e, double tau) {
  const auto N = x.rows();
  const Matrix a = k + (e + tau) * Matrix::Identity(N, N);
  const Matrix fit = k * a.ldlt().solve(x);
  return (x - fit).squaredNorm() / static_cast<double>(x.rows() * x.cols());
}

// Weights from an explicit inverse of K + lambda I, built from the model's
// encoded rows and theta only.
Vector weights_by_inverse(const KahmModel& m, const Vector& x) {
  const Eigen::Index N = m.size();
  Matrix k(N, N);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j)
      k(i, j) = gaussian_kernel(m.theta_inv(), m.encoded_train().row(i).transpose(),
                                m.encoded_train().row(j).transpose());
  const Vector px = m.encoding().projection * x;
  Vector kv(N);
  for (Eigen::Index i = 0; i < N; ++i) kv(i) = gaussian_kernel(m.theta_inv(), px, m.encoded_train().row(i).transpose());
  const Matrix inv = (k + m.lambda_star() * Matrix::Identity(N, N)).inverse();
  const Vector h = inv * kv;
  return h / h.sum();
}

double theorem_constant(const Matrix& x) {
  const auto N = static_cast<double>(x.rows());
  const auto n = static_cast<double>(x.cols());
  return 1.0 + n * N * N / (2.0 * x.squaredNorm());
}

Matrix difference_matrix(const Matrix& x, const Vector& probe) {
  return (-(x.rowwise() - probe.transpose())).transpose();
}

}  // namespace

TEST_SUITE("encoding") {
  TEST_CASE("well spread rows keep min(20, n, N-1) dimensions") {
    Matrix x(3, 2);
    x << 0, 0, 1, 0, 0, 1;
    const auto enc = compute_encoding_matrix(x);
    CHECK(enc.reduced_dim() == 2);
    CHECK_FALSE(enc.floored);
    CHECK((enc.projection * enc.projection.transpose()).isIdentity(1e-12));
  }

  TEST_CASE("rows on a line reduce to one dimension") {
    Matrix x(50, 5);
    Vector dir(5);
    dir << 1, -2, 0.5, 3, 1;
    for (int i = 0; i < 50; ++i) x.row(i) = (0.1 * i - 2.0) * dir.transpose() + Eigen::RowVectorXd::Constant(5, 0.25);
    const auto enc = compute_encoding_matrix(x);
    CHECK(enc.reduced_dim() == 1);
    CHECK_FALSE(enc.floored);
    const double alignment = std::abs(enc.projection.row(0).dot(dir.normalized()));
    CHECK(alignment == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("identical rows are degenerate") {
    const Matrix x = Matrix::Constant(4, 3, 2.5);
    CHECK_THROWS_AS(compute_encoding_matrix(x), DegenerateData);
    CHECK_THROWS_AS(KahmModel::build(x), DegenerateData);
  }

  TEST_CASE("a single row is rejected") {
    CHECK_THROWS_AS(KahmModel::build(Matrix::Ones(1, 3)), DimensionError);
  }

  TEST_CASE("non-finite rows are rejected") {
    Matrix x = test::gaussian_matrix(4, 2, 1);
    x(2, 1) = std::nan("");
    CHECK_THROWS_AS(KahmModel::build(x), NonFiniteValue);
  }
}

TEST_SUITE("kernel") {
  TEST_CASE("identical arguments give one") {
    const Matrix ti = Matrix::Identity(3, 3);
    Vector u(3);
    u << 0.3, -1, 2;
    CHECK(gaussian_kernel(ti, u, u) == 1.0);
  }

  TEST_CASE("unit theta in one dimension at distance sqrt 2") {
    const Matrix ti = Matrix::Identity(1, 1);
    Vector u(1), v(1);
    u << std::sqrt(2.0);
    v << 0.0;
    CHECK(gaussian_kernel(ti, u, v) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  }

  TEST_CASE("symmetry and range") {
    const auto model = KahmModel::build(test::gaussian_matrix(12, 4, 7));
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
      const Vector u = test::gaussian_vector(model.reduced_dim(), rng, 3.0);
      const Vector v = test::gaussian_vector(model.reduced_dim(), rng, 3.0);
      const double a = model.kernel_eval(u, v);
      CHECK(a == model.kernel_eval(v, u));
      CHECK(a > 0.0);
      CHECK(a <= 1.0);
    }
  }
}

TEST_SUITE("regularization") {
  TEST_CASE("fixed point matches a direct-solve residual") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Matrix x = test::gaussian_matrix(5 + static_cast<Eigen::Index>(seed % 30), 1 + seed % 8, 100 + seed,
                                             0.5 + static_cast<double>(seed % 4));
      const auto model = KahmModel::build(x);
      const auto& reg = model.regularization();
      const Matrix k = model.kernel_matrix();
      CHECK(std::abs(r_direct(x, k, reg.fixed_point, reg.tau) - reg.fixed_point) < 1e-8);
      CHECK(reg.tau == doctest::Approx(2.0 * x.squaredNorm() / static_cast<double>(x.size())));
      CHECK(model.lambda_star() > reg.tau);
      CHECK(reg.iterations >= 1);
    }
  }

  TEST_CASE("frozen reference model") {
    // Values from tests/oracles/kahm_reference.py.
    Matrix x(5, 3);
    x << 0.0, 0.0, 1.0, 1.0, 0.5, 0.0, 0.0, 2.0, 0.5, 1.5, 1.0, 2.0, 0.5, -1.0, 1.0;
    Vector probe(3);
    probe << 0.3, 0.7, -0.2;
    const auto model = KahmModel::build(x);
    CHECK(model.reduced_dim() == 3);
    CHECK(model.lambda_star() == doctest::Approx(2.63484849909958).epsilon(1e-9));
    CHECK(model.regularization().fixed_point == doctest::Approx(0.501515165766245).epsilon(1e-9));
    const Vector image = model.map(probe);
    CHECK(image(0) == doctest::Approx(0.532828836740926).epsilon(1e-9));
    CHECK(image(1) == doctest::Approx(0.568953915685421).epsilon(1e-9));
    CHECK(image(2) == doctest::Approx(0.512660572825167).epsilon(1e-9));
  }
}

TEST_SUITE("build") {
  TEST_CASE("two distinct rows") {
    Matrix x(2, 3);
    x << 1, 2, 3, -1, 0, 4;
    const auto model = KahmModel::build(x);
    const Matrix k = model.kernel_matrix();
    CHECK(k.rows() == 2);
    CHECK(k(0, 0) == 1.0);
    CHECK(k(1, 1) == 1.0);
    CHECK(k(0, 1) == doctest::Approx(k(1, 0)));

    // The image of x^1 lies on the line through both rows.
    const Vector image = model.map(x.row(0).transpose());
    const Vector dir = (x.row(1) - x.row(0)).transpose();
    const Vector off = image - x.row(0).transpose();
    const double t = off.dot(dir) / dir.squaredNorm();
    CHECK((off - t * dir).norm() < 1e-12);
  }

  TEST_CASE("a duplicated row still gives an SPD system") {
    Matrix x = test::gaussian_matrix(6, 3, 11);
    x.row(4) = x.row(1);
    const auto model = KahmModel::build(x);
    const Matrix a = model.kernel_matrix() + model.lambda_star() * Matrix::Identity(6, 6);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
    const Matrix l = model.solve_factor();
    CHECK((l * l.transpose() - a).norm() < 1e-12);
  }

  TEST_CASE("smoothing matrix is symmetric with eigenvalues in (0, 1)") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Matrix x = test::gaussian_matrix(8 + static_cast<Eigen::Index>(seed) * 4, 2 + seed % 5, 300 + seed);
      const auto model = KahmModel::build(x);
      const Matrix h = model.smoothing_matrix();
      CHECK((h - h.transpose()).cwiseAbs().maxCoeff() < 1e-10);
      Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (h + h.transpose()));
      CHECK(eig.eigenvalues().minCoeff() > 0.0);
      CHECK(eig.eigenvalues().maxCoeff() < 1.0);
      // Same spectrum as eig(K) / (eig(K) + lambda*).
      Eigen::SelfAdjointEigenSolver<Matrix> keig(model.kernel_matrix());
      const Vector expected = keig.eigenvalues().array() / (keig.eigenvalues().array() + model.lambda_star());
      CHECK((eig.eigenvalues() - expected).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_SUITE("map") {
  TEST_CASE("memberships match an explicit inverse for small models") {
    Rng rng(41);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const Eigen::Index N = 2 + static_cast<Eigen::Index>(seed % 4);
      const Eigen::Index n = 1 + static_cast<Eigen::Index>(seed % 3);
      const auto model = KahmModel::build(test::gaussian_matrix(N, n, 500 + seed));
      for (int t = 0; t < 20; ++t) {
        const Vector x = test::gaussian_vector(n, rng, 1.5);
        const Vector h = model.memberships(x);
        if (std::abs(h.sum()) < 1e-6) continue;  // fallback regime is checked separately
        const Vector w = weights_by_inverse(model, x);
        CHECK((model.weights(x) - w).cwiseAbs().maxCoeff() < 1e-10);
      }
    }
  }

  TEST_CASE("weights sum to one and both bounds hold") {
    Rng rng(99);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Eigen::Index N = 3 + static_cast<Eigen::Index>(rng() % 48);
      const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 10);
      const Matrix x = test::gaussian_matrix(N, n, 700 + seed, 1.0 + static_cast<double>(seed));
      const auto model = KahmModel::build(x);
      const double bound = spectral_norm(x) * theorem_constant(x);
      const Vector center = x.colwise().mean().transpose();
      for (int t = 0; t < 200; ++t) {
        const Vector probe = test::multiscale_probe(center, rng);
        const Vector w = model.weights(probe);
        CHECK(std::abs(w.sum() - 1.0) < 1e-9);
        const Vector image = model.map(probe);
        CHECK(image.norm() < bound);
        const double denom = spectral_norm(difference_matrix(x, probe));
        if (denom > 0.0) CHECK((probe - image).norm() / denom < theorem_constant(x));
      }
    }
  }

  TEST_CASE("far-field probes use the kernel-weight fallback") {
    const Matrix x = test::gaussian_matrix(10, 2, 5);
    const auto model = KahmModel::build(x);
    Vector far(2);
    far << 1e4, -3e4;
    const Vector w = model.weights(far);
    CHECK(w.allFinite());
    CHECK(std::abs(w.sum() - 1.0) < 1e-12);
    CHECK(w.minCoeff() >= 0.0);
    CHECK(model.map(far).allFinite());
  }

  TEST_CASE("dimension mismatch is rejected") {
    const auto model = KahmModel::build(test::gaussian_matrix(5, 3, 1));
    CHECK_THROWS_AS(model.map(Vector::Zero(2)), DimensionError);
  }
}

TEST_SUITE("persistence") {
  TEST_CASE("save and load round trip") {
    const auto model = KahmModel::build(test::gaussian_matrix(15, 4, 21));
    std::stringstream buf;
    model.save(buf);
    const auto loaded = KahmModel::load(buf);
    CHECK(loaded.lambda_star() == model.lambda_star());
    CHECK(loaded.reduced_dim() == model.reduced_dim());
    CHECK(loaded.training_rows() == model.training_rows());
    CHECK(loaded.solve_factor() == model.solve_factor());
    Rng rng(4);
    for (int t = 0; t < 20; ++t) {
      const Vector x = test::gaussian_vector(4, rng);
      CHECK(loaded.map(x) == model.map(x));
    }
  }

  TEST_CASE("bad magic and truncation") {
    std::stringstream bad("XXXX0000");
    CHECK_THROWS_AS(KahmModel::load(bad), ParseError);
    const auto model = KahmModel::build(test::gaussian_matrix(5, 2, 3));
    std::stringstream buf;
    model.save(buf);
    std::string bytes = buf.str();
    std::stringstream cut(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(KahmModel::load(cut), ParseError);
  }
}
