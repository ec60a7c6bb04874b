#include <doctest.h>

#include <cmath>

#include "netvlad/postprocess.hpp"
#include "netvlad/rng.hpp"
#include "testutil.hpp"

using namespace netvlad;

namespace {

// empirical covariance of pre-normalization projections of the fit data
MatrixX<double> projected_covariance(const MatrixX<double>& data,
                                     const WhiteningTransform<double>& t) {
  MatrixX<double> proj(data.rows(), t.out_dim());
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    proj.row(i) = project_whitening(VectorX<double>(data.row(i).transpose()), t).transpose();
  }
  const Eigen::RowVectorXd mean = proj.colwise().mean();
  const MatrixX<double> centered = proj.rowwise() - mean;
  return MatrixX<double>(centered.transpose() * centered / double(data.rows() - 1));
}

}  // namespace

TEST_SUITE_BEGIN("whitening");

TEST_CASE("whitening the training set yields the identity covariance") {
  Rng rng(2);
  const auto data = testutil::random_matrix(rng, 2000, 6);
  const auto t = fit_whitening(data, 6);
  const auto cov = projected_covariance(data, t);
  CHECK((cov - MatrixX<double>::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-6);
  // near-white data: the transform is close to an orthonormal map
  const MatrixX<double> rr = t.rows * t.rows.transpose();
  CHECK((rr - MatrixX<double>::Identity(6, 6)).cwiseAbs().maxCoeff() < 0.2);
}

TEST_CASE("known diagonal covariance gives known eigenvalues and unit variances") {
  // four points with exact sample covariance diag(4, 1)
  MatrixX<double> data(4, 2);
  const double a = std::sqrt(6.0), b = std::sqrt(1.5);
  data << a, 0, -a, 0, 0, b, 0, -b;
  const auto t = fit_whitening(data, 2);
  CHECK(t.eigenvalues(0) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(t.eigenvalues(1) == doctest::Approx(1.0).epsilon(1e-12));
  const auto cov = projected_covariance(data, t);
  CHECK(cov(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(cov(1, 1) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(cov(0, 1)) < 1e-9);
}

TEST_CASE("gram-matrix path handles many more dimensions than samples") {
  Rng rng(5);
  const auto data = testutil::random_matrix(rng, 100, 1000);
  const auto t = fit_whitening(data, 20);
  CHECK(t.rows.rows() == 20);
  CHECK(t.rows.cols() == 1000);
  const auto cov = projected_covariance(data, t);
  CHECK((cov - MatrixX<double>::Identity(20, 20)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("requesting more dimensions than the data supports names the rank") {
  Rng rng(6);
  const auto data = testutil::random_matrix(rng, 50, 32768, 0.1);
  try {
    fit_whitening(data, 4096);
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("49") != std::string::npos);
  }
}

TEST_CASE("applying at the mean gives the zero vector; elsewhere unit norm") {
  Rng rng(7);
  const auto data = testutil::random_matrix(rng, 40, 5);
  const auto t = fit_whitening(data, 3);
  const VectorX<double> at_mean = apply_whitening(t.mean, t);
  CHECK(at_mean.norm() == 0.0);
  for (int i = 0; i < 10; ++i) {
    const auto y = apply_whitening(testutil::random_vector(rng, 5).eval(), t);
    CHECK(y.norm() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("spectrum is nonincreasing") {
  Rng rng(8);
  const auto data = testutil::random_matrix(rng, 120, 10);
  const auto t = fit_whitening(data, 10);
  for (Eigen::Index i = 1; i < t.eigenvalues.size(); ++i) {
    CHECK(t.eigenvalues(i) <= t.eigenvalues(i - 1) + 1e-15);
  }
}

TEST_CASE("smaller transforms are prefixes of larger ones") {
  Rng rng(9);
  const auto data = testutil::random_matrix(rng, 80, 8);
  const auto big = fit_whitening(data, 6);
  const auto small = fit_whitening(data, 3);
  CHECK((big.rows.topRows(3) - small.rows).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((big.eigenvalues.head(3) - small.eigenvalues).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("input validation") {
  Rng rng(10);
  const auto data = testutil::random_matrix(rng, 30, 4);
  CHECK_THROWS_AS(fit_whitening(data, 0), ValidationError);
  CHECK_THROWS_AS(fit_whitening(data, 5), ValidationError);
  CHECK_THROWS_AS(fit_whitening(testutil::random_matrix(rng, 1, 4).eval(), 1), ValidationError);
  const auto t = fit_whitening(data, 2);
  CHECK_THROWS_AS(apply_whitening(testutil::random_vector(rng, 3).eval(), t), ValidationError);
}

TEST_SUITE_END();
