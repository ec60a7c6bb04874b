#include <doctest.h>

#include <cmath>
#include <vector>

#include "netvlad/kmeans.hpp"
#include "netvlad/pooling.hpp"
#include "netvlad/rng.hpp"
#include "testutil.hpp"

using namespace netvlad;

TEST_SUITE_BEGIN("kmeans");

TEST_CASE("M distinct points with K=M become the centers") {
  MatrixX<double> pts(3, 2);
  pts << 0, 0, 10, 0, 0, 10;
  const auto centers = kmeans(pts, 3, 1);
  for (Eigen::Index i = 0; i < 3; ++i) {
    double best = 1e300;
    for (Eigen::Index c = 0; c < 3; ++c) {
      best = std::min(best, (centers.row(c) - pts.row(i)).norm());
    }
    CHECK(best < 1e-12);
  }
}

TEST_CASE("two separated blobs are recovered") {
  Rng rng(4);
  const int per = 150;
  const double sigma = 0.3;
  MatrixX<double> pts(2 * per, 3);
  Eigen::RowVector3d mean_a(2, 0, 0), mean_b(-2, 0, 0);
  for (int i = 0; i < per; ++i) {
    pts.row(i) = mean_a + sigma * testutil::random_vector(rng, 3).transpose();
    pts.row(per + i) = mean_b + sigma * testutil::random_vector(rng, 3).transpose();
  }
  const auto centers = kmeans(pts, 2, 9);
  const double tol = 3.0 * sigma / std::sqrt(double(per));
  double da = 1e300, db = 1e300;
  for (Eigen::Index c = 0; c < 2; ++c) {
    da = std::min(da, (centers.row(c) - mean_a).norm());
    db = std::min(db, (centers.row(c) - mean_b).norm());
  }
  CHECK(da < 3 * tol);
  CHECK(db < 3 * tol);
}

TEST_CASE("identical points collapse to that point") {
  MatrixX<double> pts = MatrixX<double>::Constant(8, 2, 1.5);
  const auto centers = kmeans(pts, 1, 3);
  CHECK((centers.row(0) - pts.row(0)).norm() == 0.0);
}

TEST_CASE("degenerate duplicates do not crash with excess clusters") {
  MatrixX<double> pts(11, 2);
  for (int i = 0; i < 10; ++i) pts.row(i) << 0, 0;
  pts.row(10) << 10, 10;
  const auto centers = kmeans(pts, 3, 5);
  CHECK(centers.allFinite());
  // both distinct locations are represented
  double to_origin = 1e300, to_far = 1e300;
  for (Eigen::Index c = 0; c < 3; ++c) {
    to_origin = std::min(to_origin, centers.row(c).norm());
    to_far = std::min(to_far, (centers.row(c) - pts.row(10)).norm());
  }
  CHECK(to_origin < 1e-9);
  CHECK(to_far < 1e-9);
}

TEST_CASE("kmeans is deterministic under seed") {
  Rng rng(6);
  const auto pts = testutil::random_matrix(rng, 60, 4);
  const auto a = kmeans(pts, 5, 42);
  const auto b = kmeans(pts, 5, 42);
  CHECK(testutil::bitwise_equal(a, b));
  CHECK(!testutil::bitwise_equal(kmeans(pts, 5, 43), a));
}

TEST_CASE("kmeans validates inputs") {
  MatrixX<double> pts(2, 2);
  pts << 0, 0, 1, 1;
  CHECK_THROWS_AS(kmeans(pts, 3, 1), ValidationError);
  CHECK_THROWS_AS(kmeans(pts, 0, 1), ValidationError);
}

TEST_CASE("initialization hits the target assignment ratio") {
  Rng rng(8);
  // four separated lobes
  MatrixX<double> anchors(4, 6);
  for (int a = 0; a < 4; ++a) {
    anchors.row(a) = 2.5 * testutil::random_vector(rng, 6).normalized().transpose();
  }
  MatrixX<double> sample(400, 6);
  for (int i = 0; i < 400; ++i) {
    sample.row(i) = anchors.row(i % 4) + 0.3 * testutil::random_vector(rng, 6).transpose();
  }

  const auto params = init_netvlad(sample, 4, 100.0, 11);

  // identity w = 2*alpha*c, b = -alpha*|c|^2 holds exactly
  CHECK((params.w - 2.0 * params.alpha * params.c).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((params.b + params.alpha * params.c.rowwise().squaredNorm()).cwiseAbs().maxCoeff() <
        1e-12);

  // geometric mean of largest/second-largest soft weight within 1% of 100
  DescriptorMap<double> map;
  map.descriptors = sample;
  const auto weights = soft_assign(map, params);
  double log_sum = 0;
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    VectorX<double> row = weights.row(i).transpose();
    std::sort(row.data(), row.data() + row.size());
    log_sum += std::log(row(row.size() - 1) / row(row.size() - 2));
  }
  const double geo_mean = std::exp(log_sum / double(weights.rows()));
  CHECK(geo_mean == doctest::Approx(100.0).epsilon(0.01));
}

TEST_CASE("initialized layer mimics hard VLAD on the sample images") {
  Rng rng(13);
  MatrixX<double> anchors(3, 8);
  for (int a = 0; a < 3; ++a) {
    anchors.row(a) = 3.0 * testutil::random_vector(rng, 8).normalized().transpose();
  }
  MatrixX<double> sample(300, 8);
  for (int i = 0; i < 300; ++i) {
    sample.row(i) = anchors.row(i % 3) + 0.15 * testutil::random_vector(rng, 8).transpose();
  }
  const auto params = init_netvlad(sample, 3, 100.0, 19);

  for (int img = 0; img < 10; ++img) {
    DescriptorMap<double> map;
    map.descriptors = sample.middleRows(img * 30, 30);
    const auto soft = netvlad_forward(map, params).first;
    const auto hard = vlad_hard(map, params.c);
    const double cosine = soft.dot(hard) / (soft.norm() * hard.norm());
    CHECK(cosine > 0.99);
  }
}

TEST_CASE("K=1 initialization falls back to alpha=1") {
  Rng rng(15);
  const auto params = init_netvlad(testutil::random_matrix(rng, 20, 3).eval(), 1, 100.0, 2);
  CHECK(params.alpha == 1.0);
  CHECK(params.k() == 1);
}

TEST_CASE("a gapless sample cannot be initialized") {
  MatrixX<double> sample = MatrixX<double>::Constant(6, 2, 0.5);
  CHECK_THROWS_AS(init_netvlad(sample, 2, 100.0, 3), RuntimeError);
}

TEST_SUITE_END();
