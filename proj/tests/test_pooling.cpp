#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "netvlad/gradcheck.hpp"
#include "netvlad/pooling.hpp"
#include "netvlad/rng.hpp"
#include "testutil.hpp"

using namespace netvlad;

namespace {

// alpha-identity parameters for given anchors: w = 2*alpha*c, b = -alpha|c|^2
NetVladParams<double> identity_params(const MatrixX<double>& centers, double alpha) {
  NetVladParams<double> p;
  p.c = centers;
  p.alpha = alpha;
  p.w = 2.0 * alpha * centers;
  p.b = -alpha * centers.rowwise().squaredNorm();
  return p;
}

DescriptorMap<double> make_map(const MatrixX<double>& rows) {
  DescriptorMap<double> m;
  m.descriptors = rows;
  return m;
}

DescriptorMap<double> permuted(const DescriptorMap<double>& map, Rng& rng) {
  std::vector<Eigen::Index> order(map.n());
  for (Eigen::Index i = 0; i < map.n(); ++i) order[i] = i;
  rng.shuffle(order);
  DescriptorMap<double> out;
  out.image_id = map.image_id;
  out.descriptors.resize(map.n(), map.d());
  for (Eigen::Index i = 0; i < map.n(); ++i) {
    out.descriptors.row(i) = map.descriptors.row(order[i]);
  }
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("pooling");

TEST_CASE("soft assignment with one cluster is always 1") {
  NetVladParams<double> p;
  p.w = MatrixX<double>::Ones(1, 3);
  p.b = VectorX<double>::Zero(1);
  p.c = MatrixX<double>::Zero(1, 3);
  Rng rng(3);
  const auto a = soft_assign(make_map(testutil::random_matrix(rng, 6, 3)), p);
  CHECK(a.rows() == 6);
  for (Eigen::Index i = 0; i < 6; ++i) CHECK(a(i, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("identical clusters share the weight") {
  NetVladParams<double> p;
  p.w = MatrixX<double>::Ones(2, 2);
  p.b = VectorX<double>::Ones(2);
  p.c = MatrixX<double>::Ones(2, 2);
  MatrixX<double> x(1, 2);
  x << 0.3, -0.9;
  const auto a = soft_assign(make_map(x), p);
  CHECK(a(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(a(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("decoupled form matches the distance form under the identity") {
  MatrixX<double> centers(2, 2);
  centers << 1, 0, 0, 1;
  const auto p = identity_params(centers, 1.0);
  MatrixX<double> x(1, 2);
  x << 1, 0;
  const auto a = soft_assign(make_map(x), p);
  CHECK(a(0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));

  // distance-based evaluation as the oracle
  Rng rng(21);
  for (int trial = 0; trial < 25; ++trial) {
    const Eigen::Index k = 2 + rng.uniform_index(4);
    const Eigen::Index d = 2 + rng.uniform_index(4);
    const auto cs = testutil::random_matrix(rng, k, d);
    const double alpha = rng.uniform(0.5, 2.0);
    const auto params = identity_params(cs, alpha);
    const auto map = make_map(testutil::random_matrix(rng, 5, d));
    const auto fast = soft_assign(map, params);
    for (Eigen::Index i = 0; i < map.n(); ++i) {
      VectorX<double> logits(k);
      for (Eigen::Index c = 0; c < k; ++c) {
        logits(c) = -alpha * (map.descriptors.row(i) - cs.row(c)).squaredNorm();
      }
      logits.array() -= logits.maxCoeff();
      VectorX<double> ref = logits.array().exp();
      ref /= ref.sum();
      for (Eigen::Index c = 0; c < k; ++c) {
        CHECK(std::abs(fast(i, c) - ref(c)) < 1e-12);
      }
    }
  }
}

TEST_CASE("assignment rows form a distribution") {
  Rng rng(5);
  NetVladParams<double> p;
  p.w = testutil::random_matrix(rng, 4, 3);
  p.b = testutil::random_vector(rng, 4);
  p.c = testutil::random_matrix(rng, 4, 3);
  const auto a = soft_assign(make_map(testutil::random_matrix(rng, 10, 3)), p);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    CHECK(a.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(a.row(i).minCoeff() >= 0.0);
    CHECK(a.row(i).maxCoeff() <= 1.0);
  }
}

TEST_CASE("soft_assign rejects dimension mismatch") {
  NetVladParams<double> p;
  p.w = MatrixX<double>::Ones(2, 3);
  p.b = VectorX<double>::Zero(2);
  p.c = MatrixX<double>::Ones(2, 3);
  Rng rng(9);
  CHECK_THROWS_AS(soft_assign(make_map(testutil::random_matrix(rng, 4, 2)), p),
                  ValidationError);
}

TEST_CASE("descriptor equal to the only anchor gives the all-zero output") {
  MatrixX<double> c(1, 2);
  c << 0.4, -0.2;
  const auto p = identity_params(c, 1.0);
  const auto [y, cache] = netvlad_forward(make_map(c), p);
  CHECK(y.size() == 2);
  CHECK(y.norm() == 0.0);
  // gradients at the kink are defined as zero
  const auto g = netvlad_backward(cache, VectorX<double>::Ones(2).eval());
  CHECK(g.w.norm() == 0.0);
  CHECK(g.x.norm() == 0.0);
}

TEST_CASE("output length is K*D") {
  Rng rng(31);
  NetVladParams<double> p;
  p.w = testutil::random_matrix(rng, 64, 512, 0.2);
  p.b = testutil::random_vector(rng, 64, 0.2);
  p.c = testutil::random_matrix(rng, 64, 512, 0.2);
  const auto [y, cache] = netvlad_forward(make_map(testutil::random_matrix(rng, 3, 512)), p);
  CHECK(y.size() == 32768);
  CHECK(y.norm() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("large alpha reproduces hard VLAD and the gap shrinks monotonically") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index k = 3, d = 4, n = 12;
    MatrixX<double> centers(k, d);
    // anchors pairwise >= 1 apart
    bool ok = false;
    while (!ok) {
      centers = testutil::random_matrix(rng, k, d, 1.2);
      ok = true;
      for (Eigen::Index a = 0; a < k && ok; ++a) {
        for (Eigen::Index b = a + 1; b < k; ++b) {
          if ((centers.row(a) - centers.row(b)).norm() < 1.0) ok = false;
        }
      }
    }
    MatrixX<double> rows(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      rows.row(i) = centers.row(rng.uniform_index(k)) +
                    0.2 * testutil::random_vector(rng, d).transpose() / std::sqrt(double(d));
    }
    const auto map = make_map(rows);
    const auto hard = vlad_hard(map, centers);

    double prev = std::numeric_limits<double>::max();
    for (const double alpha : {1.0, 10.0, 100.0, 1e4}) {
      const auto soft = netvlad_forward(map, identity_params(centers, alpha)).first;
      const double diff = (soft - hard).cwiseAbs().maxCoeff();
      CHECK(diff <= prev + 1e-12);
      prev = diff;
    }
    CHECK(prev < 1e-4);
  }
}

TEST_CASE("hard VLAD hand case") {
  MatrixX<double> centers(2, 2);
  centers << 0, 0, 5, 5;
  MatrixX<double> x(1, 2);
  x << 1, 0;
  const auto v = vlad_hard(make_map(x), centers);
  CHECK(v(0) == doctest::Approx(1.0));
  CHECK(v(1) == doctest::Approx(0.0));
  CHECK(v(2) == doctest::Approx(0.0));
  CHECK(v(3) == doctest::Approx(0.0));
}

TEST_CASE("descriptors sitting on their centers give zero hard VLAD") {
  MatrixX<double> centers(2, 3);
  centers << 1, 0, 0, 0, 2, 0;
  MatrixX<double> rows(4, 3);
  rows << 1, 0, 0, 1, 0, 0, 0, 2, 0, 0, 2, 0;
  CHECK(vlad_hard(make_map(rows), centers).norm() == 0.0);
}

TEST_CASE("nearest-center ties break to the lowest index and are counted") {
  MatrixX<double> centers(2, 2);
  centers << 1, 0, -1, 0;
  MatrixX<double> x(1, 2);
  x << 0, 3;  // equidistant
  HardAssignStats stats;
  const auto v = vlad_hard(make_map(x), centers, &stats);
  CHECK(stats.nearest_ties == 1);
  // residual lands in cluster 0
  VectorX<double> residual(2);
  residual << -1, 3;
  residual.normalize();
  CHECK(v.head(2).isApprox(residual, 1e-12));
  CHECK(v.tail(2).norm() == 0.0);
}

TEST_CASE("max pooling hand cases") {
  MatrixX<double> rows(2, 2);
  rows << 1, 5, 3, 2;
  const auto v = max_pool(make_map(rows));
  CHECK(v(0) == doctest::Approx(3.0 / std::sqrt(34.0)).epsilon(1e-12));
  CHECK(v(1) == doctest::Approx(5.0 / std::sqrt(34.0)).epsilon(1e-12));

  MatrixX<double> single(1, 3);
  single << 2, 0, 0;
  const auto s = max_pool(make_map(single));
  CHECK(s(0) == doctest::Approx(1.0));
}

TEST_CASE("sum pooling hand cases") {
  MatrixX<double> rows(2, 2);
  rows << 1, 0, 0, 1;
  const auto v = sum_pool(make_map(rows));
  CHECK(v(0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(v(1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));

  MatrixX<double> single(1, 2);
  single << -3, 4;
  const auto s = sum_pool(make_map(single));
  CHECK(s(0) == doctest::Approx(-0.6).epsilon(1e-12));
  CHECK(s(1) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("all pooling outputs are invariant to row permutations") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const auto map = make_map(testutil::random_matrix(rng, 14, 5));
    NetVladParams<double> p;
    p.w = testutil::random_matrix(rng, 3, 5);
    p.b = testutil::random_vector(rng, 3);
    p.c = testutil::random_matrix(rng, 3, 5);
    const auto shuffled = permuted(map, rng);

    CHECK((netvlad_forward(map, p).first - netvlad_forward(shuffled, p).first)
              .cwiseAbs()
              .maxCoeff() < 1e-6);
    CHECK((vlad_hard(map, p.c) - vlad_hard(shuffled, p.c)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((max_pool(map) - max_pool(shuffled)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((sum_pool(map) - sum_pool(shuffled)).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("backward of a zero upstream gradient is zero") {
  Rng rng(41);
  NetVladParams<double> p;
  p.w = testutil::random_matrix(rng, 3, 4);
  p.b = testutil::random_vector(rng, 3);
  p.c = testutil::random_matrix(rng, 3, 4);
  const auto cache = netvlad_forward(make_map(testutil::random_matrix(rng, 5, 4)), p).second;
  const auto g = netvlad_backward(cache, VectorX<double>::Zero(12).eval());
  CHECK(g.w.norm() == 0.0);
  CHECK(g.b.norm() == 0.0);
  CHECK(g.c.norm() == 0.0);
  CHECK(g.x.norm() == 0.0);
}

TEST_CASE("backward rejects a mismatched upstream gradient") {
  Rng rng(43);
  NetVladParams<double> p;
  p.w = testutil::random_matrix(rng, 3, 4);
  p.b = testutil::random_vector(rng, 3);
  p.c = testutil::random_matrix(rng, 3, 4);
  const auto cache = netvlad_forward(make_map(testutil::random_matrix(rng, 5, 4)), p).second;
  CHECK_THROWS_AS(netvlad_backward(cache, VectorX<double>::Zero(7).eval()), ValidationError);
}

TEST_CASE("analytic gradients match finite differences on a small instance") {
  Rng rng(47);
  DescriptorMap<double> map = make_map(testutil::random_matrix(rng, 5, 4, 0.7));
  NetVladParams<double> p;
  p.w = testutil::random_matrix(rng, 3, 4, 0.8);
  p.b = testutil::random_vector(rng, 3, 0.3);
  p.c = testutil::random_matrix(rng, 3, 4, 0.7);
  const VectorX<double> g = testutil::random_vector(rng, 12);

  const auto analytic = netvlad_backward(netvlad_forward(map, p).second, g);
  auto eval = [&]() { return g.dot(netvlad_forward(map, p).first); };

  double worst = 0;
  for (Eigen::Index r = 0; r < 3; ++r) {
    for (Eigen::Index j = 0; j < 4; ++j) {
      worst = std::max(worst, testutil::rel_err(analytic.w(r, j),
                                                testutil::central_diff(p.w(r, j), 1e-5, eval)));
      worst = std::max(worst, testutil::rel_err(analytic.c(r, j),
                                                testutil::central_diff(p.c(r, j), 1e-5, eval)));
    }
    worst = std::max(worst, testutil::rel_err(analytic.b(r),
                                              testutil::central_diff(p.b(r), 1e-5, eval)));
  }
  for (Eigen::Index i = 0; i < 5; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) {
      worst = std::max(
          worst, testutil::rel_err(analytic.x(i, j),
                                   testutil::central_diff(map.descriptors(i, j), 1e-5, eval)));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("duplicate descriptor rows receive identical input gradients") {
  Rng rng(53);
  MatrixX<double> rows = testutil::random_matrix(rng, 6, 4);
  rows.row(4) = rows.row(1);
  NetVladParams<double> p;
  p.w = testutil::random_matrix(rng, 3, 4);
  p.b = testutil::random_vector(rng, 3);
  p.c = testutil::random_matrix(rng, 3, 4);
  const auto cache = netvlad_forward(make_map(rows), p).second;
  const auto g = netvlad_backward(cache, testutil::random_vector(rng, 12).eval());
  CHECK(testutil::bitwise_equal(g.x.row(4), g.x.row(1)));
}

TEST_CASE("gradcheck suite passes on a few instances") {
  GradCheckConfig cfg;
  cfg.instances = 5;
  cfg.seed = 77;
  CHECK(run_gradcheck(cfg).passed());
}

TEST_SUITE_END();
