#include <doctest.h>

#include <cmath>
#include <numbers>

#include "sfm/error.hpp"
#include "sfm/folding.hpp"
#include "sfm/io.hpp"
#include "support.hpp"

using namespace sfm;
using namespace sfm::folding;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double e : v) out(i++) = e;
  return out;
}

constexpr Variant kAllVariants[] = {Variant::Rms, Variant::Product, Variant::Min, Variant::Max};

}  // namespace

TEST_SUITE("components") {
  TEST_CASE("euclidean component") {
    const Vector x = vec({1, 2});
    CHECK(euclidean_component(x, x) == 0.0);
    CHECK(euclidean_component(x, x + vec({std::log(2.0), 0})) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(euclidean_component(x, vec({1e6, -1e6})) <= 1.0);
  }

  TEST_CASE("cosine component") {
    const Vector x = vec({1, 2, -1});
    CHECK(cosine_component(x, 3.0 * x) == doctest::Approx(0.0));
    CHECK(cosine_component(x, -0.5 * x) == doctest::Approx(1.0));
    CHECK(cosine_component(vec({1, 0}), vec({0, 4})) == doctest::Approx(0.5));
  }

  TEST_CASE("cosine component at the origin") {
    const Vector zero = Vector::Zero(3);
    CHECK(cosine_component(zero, zero) == 0.0);
    CHECK(cosine_component(zero, vec({1, 0, 0})) == 1.0);
    CHECK(cosine_component(vec({1, 0, 0}), zero) == 1.0);
    CHECK(cosine_component(vec({1e-13, 0, 0}), vec({0, 1e-13, 0})) == 0.0);
  }

  TEST_CASE("variants on fixed components") {
    CHECK(combine(0.3, 0.5, Variant::Rms) == doctest::Approx(std::sqrt(0.17)).epsilon(1e-15));
    CHECK(combine(0.3, 0.5, Variant::Product) == doctest::Approx(0.15));
    CHECK(combine(0.3, 0.5, Variant::Min) == 0.3);
    CHECK(combine(0.3, 0.5, Variant::Max) == 0.5);
    for (Variant v : kAllVariants) {
      CHECK(combine(0, 0, v) == 0.0);
      CHECK(combine(1 - 1e-12, 1 - 1e-12, v) == doctest::Approx(1.0));
    }
  }

  TEST_CASE("variant names") {
    CHECK(parse_variant("rms") == Variant::Rms);
    CHECK(parse_variant("2") == Variant::Product);
    CHECK(parse_variant("MIN") == std::nullopt);
    CHECK(parse_variant("bogus") == std::nullopt);
    for (Variant v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  }
}

TEST_SUITE("measures on models") {
  TEST_CASE("range and variant ordering over random models") {
    Rng rng(17);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto model = kahm::KahmModel::build(test::gaussian_matrix(20, 5, 40 + seed));
      for (int t = 0; t < 100; ++t) {
        const Vector x = test::multiscale_probe(Vector::Zero(5), rng);
        const double euc = folding_euc(model, x);
        const double cos = folding_cos(model, x);
        CHECK(euc >= 0.0);
        CHECK(euc < 1.0);
        CHECK(cos >= 0.0);
        CHECK(cos <= 1.0);
        const double rms = folding_measure(model, x, Variant::Rms);
        const double mn = folding_measure(model, x, Variant::Min);
        const double mx = folding_measure(model, x, Variant::Max);
        const double prod = folding_measure(model, x, Variant::Product);
        for (double v : {rms, mn, mx, prod}) {
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
        }
        CHECK(mn <= rms + 1e-15);
        CHECK(rms <= mx + 1e-15);
        CHECK(prod <= mn + 1e-15);
      }
    }
  }

  TEST_CASE("a training row maps close to itself on tight data") {
    const Matrix x = test::gaussian_matrix(30, 3, 8, 0.1).rowwise() + Eigen::RowVector3d(5, 5, 5);
    const auto model = kahm::KahmModel::build(x);
    CHECK(folding_measure(model, x.row(0).transpose(), Variant::Rms) < 0.2);
    CHECK(folding_measure(model, Vector::Constant(3, -50.0), Variant::Rms) > 0.5);
  }
}

TEST_SUITE("batching") {
  TEST_CASE("balanced contiguous sizes") {
    CHECK(batch_sizes(250, 100) == std::vector<Eigen::Index>{84, 83, 83});
    CHECK(batch_sizes(100, 100) == std::vector<Eigen::Index>{100});
    CHECK(batch_sizes(3, 2) == std::vector<Eigen::Index>{2, 1});
    CHECK(batch_sizes(7, 100) == std::vector<Eigen::Index>{7});
    CHECK_THROWS_AS(batch_sizes(10, 1), DimensionError);
    CHECK_THROWS_AS(batch_sizes(0, 10), DimensionError);
  }

  TEST_CASE("partition preserves order and rows") {
    const Matrix x = test::gaussian_matrix(250, 2, 3);
    const auto blocks = batch_partition(x, 100);
    REQUIRE(blocks.size() == 3);
    Eigen::Index offset = 0;
    for (const auto& b : blocks) {
      CHECK(b == x.middleRows(offset, b.rows()));
      offset += b.rows();
    }
    CHECK(offset == 250);
  }

  TEST_CASE("a one-row block is too small") {
    CHECK_THROWS_AS(batch_partition(test::gaussian_matrix(3, 2, 1), 2), BatchTooSmall);
    CHECK_THROWS_AS(batch_partition(test::gaussian_matrix(1, 2, 1), 5), BatchTooSmall);
  }

  TEST_CASE("merged sizes fold sub-2 blocks into the previous one") {
    CHECK(merged_batch_sizes(3, 2) == std::vector<Eigen::Index>{3});
    CHECK(merged_batch_sizes(250, 100) == std::vector<Eigen::Index>{84, 83, 83});
    CHECK(merged_batch_sizes(1, 100) == std::vector<Eigen::Index>{1});
    for (Eigen::Index n = 1; n < 60; ++n) {
      for (Eigen::Index b = 2; b < 12; ++b) {
        const auto sizes = merged_batch_sizes(n, b);
        Eigen::Index total = 0;
        for (auto s : sizes) total += s;
        CHECK(total == n);
        if (n >= 2)
          for (auto s : sizes) CHECK(s >= 2);
      }
    }
  }
}

TEST_SUITE("hull models") {
  TEST_CASE("duplicate-only rows give a single point") {
    Matrix x(3, 2);
    x << 1, 2, 1, 2, 1, 2;
    const auto hull = HullModel::fit(x);
    REQUIRE(hull.point() != nullptr);
    CHECK(hull.kahm() == nullptr);
    CHECK(hull.map(vec({9, 9})) == vec({1, 2}));
    CHECK(hull.measure(vec({1, 2}), Variant::Rms) == 0.0);
  }

  TEST_CASE("distinct rows give a KAHM") {
    const auto hull = HullModel::fit(test::gaussian_matrix(6, 3, 2));
    CHECK(hull.kahm() != nullptr);
    CHECK(hull.dim() == 3);
  }
}

TEST_SUITE("aggregation") {
  TEST_CASE("single batch equals its measure") {
    const auto model = kahm::KahmModel::build(test::gaussian_matrix(10, 2, 4));
    std::vector<HullModel> batches{HullModel(model)};
    const FoldingEvaluator ev(0, 0, batches, Variant::Rms);
    const Vector x = vec({0.5, -0.25});
    CHECK(local_folding(ev, x) == folding_measure(model, x, Variant::Rms));
  }

  TEST_CASE("local is the minimum over batches and global the minimum over clients") {
    Rng rng(5);
    const Matrix x = test::gaussian_matrix(90, 3, 77);
    std::vector<HullModel> a, b;
    for (const auto& block : batch_partition(x.topRows(60), 20)) a.emplace_back(kahm::KahmModel::build(block));
    for (const auto& block : batch_partition(x.bottomRows(30), 10)) b.emplace_back(kahm::KahmModel::build(block));
    const std::vector<FoldingEvaluator> clients{FoldingEvaluator(0, 0, a, Variant::Rms),
                                                FoldingEvaluator(0, 1, b, Variant::Rms),
                                                FoldingEvaluator::missing(0, 2, Variant::Rms)};
    for (int t = 0; t < 200; ++t) {
      const Vector p = test::multiscale_probe(Vector::Zero(3), rng);
      const double g = global_folding(clients, p);
      for (const auto& ev : clients) {
        const double local = ev.evaluate(p);
        CHECK(g <= local);
        for (double m : ev.batch_measures(p)) CHECK(local <= m);
      }
    }
  }

  TEST_CASE("missing cells and empty lists evaluate to one") {
    const auto missing = FoldingEvaluator::missing(1, 3, Variant::Max);
    CHECK(missing.is_missing());
    CHECK(missing.evaluate(vec({1, 2})) == 1.0);
    const std::vector<FoldingEvaluator> all_missing{missing, FoldingEvaluator::missing(1, 4, Variant::Max)};
    CHECK(global_folding(all_missing, vec({1, 2})) == 1.0);
    CHECK(global_folding(std::span<const FoldingEvaluator>{}, vec({1, 2})) == 1.0);
  }

  TEST_CASE("one client equals local folding") {
    const std::vector<FoldingEvaluator> one{
        FoldingEvaluator(0, 0, {HullModel::fit(test::gaussian_matrix(8, 2, 6))}, Variant::Product)};
    const Vector p = vec({0.1, 0.2});
    CHECK(global_folding(one, p) == local_folding(one[0], p));
  }

  TEST_CASE("own-class global measure is smallest on well separated data") {
    const auto data = io::generate_synthetic(2, 60, 4, 12.0, 9);
    const auto by_class = rows_by_class(data, 2);
    std::vector<std::vector<FoldingEvaluator>> per_class(2);
    for (int c = 0; c < 2; ++c) {
      const Matrix rows = data.select(by_class[static_cast<std::size_t>(c)]).rows();
      per_class[static_cast<std::size_t>(c)].emplace_back(
          c, 0, std::vector<HullModel>{HullModel::fit(rows.topRows(30))}, Variant::Rms);
      per_class[static_cast<std::size_t>(c)].emplace_back(
          c, 1, std::vector<HullModel>{HullModel::fit(rows.bottomRows(30))}, Variant::Rms);
    }
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      const int c = data.labels()[static_cast<std::size_t>(i)];
      const Vector x = data.rows().row(i).transpose();
      const double own = global_folding(per_class[static_cast<std::size_t>(c)], x);
      const double other = global_folding(per_class[static_cast<std::size_t>(1 - c)], x);
      CHECK(own < other);
    }
  }
}
