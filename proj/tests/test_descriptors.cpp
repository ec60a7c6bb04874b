#include <doctest.h>

#include <vector>

#include "netvlad/descriptors.hpp"
#include "netvlad/rng.hpp"
#include "testutil.hpp"

using namespace netvlad;

TEST_SUITE_BEGIN("descriptors");

TEST_CASE("row-wise normalization scales rows to unit norm") {
  DescriptorMap<double> map;
  map.descriptors.resize(2, 2);
  map.descriptors << 3, 4, 0, 0;
  const auto out = l2_normalize_descriptors(map);
  CHECK(out.descriptors(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(out.descriptors(0, 1) == doctest::Approx(0.8).epsilon(1e-12));
  // zero rows stay zero
  CHECK(out.descriptors(1, 0) == 0.0);
  CHECK(out.descriptors(1, 1) == 0.0);
}

TEST_CASE("normalized rows have unit norm") {
  Rng rng(11);
  DescriptorMap<double> map;
  map.descriptors = testutil::random_matrix(rng, 40, 7, 2.0);
  const auto out = l2_normalize_descriptors(map);
  for (Eigen::Index i = 0; i < out.n(); ++i) {
    CHECK(std::abs(out.descriptors.row(i).norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("normalization is idempotent") {
  Rng rng(12);
  DescriptorMap<double> map;
  map.descriptors = testutil::random_matrix(rng, 10, 5, 3.0);
  const auto once = l2_normalize_descriptors(map);
  const auto twice = l2_normalize_descriptors(once);
  CHECK(testutil::bitwise_equal(once.descriptors, twice.descriptors));
}

TEST_CASE("non-finite input is rejected") {
  DescriptorMap<double> map;
  map.descriptors.setOnes(2, 2);
  map.descriptors(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(l2_normalize_descriptors(map), ValidationError);
  map.descriptors(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(validate(map), ValidationError);
}

TEST_CASE("empty maps are invalid") {
  DescriptorMap<double> map;
  map.descriptors.resize(0, 4);
  CHECK_THROWS_AS(validate(map), ValidationError);
}

TEST_CASE("flatten_map keeps scan order, W fastest") {
  const std::vector<double> tensor{1, 2, 3, 4};  // 2x2x1 [[a,b],[c,d]]
  const auto map = flatten_map<double>(5, 2, 2, 1, tensor);
  CHECK(map.n() == 4);
  CHECK(map.d() == 1);
  CHECK(map.descriptors(0, 0) == 1);
  CHECK(map.descriptors(1, 0) == 2);
  CHECK(map.descriptors(2, 0) == 3);
  CHECK(map.descriptors(3, 0) == 4);
}

TEST_CASE("flatten_map handles a single location and the conv5 shape class") {
  const std::vector<double> one{1, 2, 3};
  const auto single = flatten_map<double>(0, 1, 1, 3, one);
  CHECK(single.n() == 1);
  CHECK(single.d() == 3);

  std::vector<double> conv5(13 * 13 * 256, 0.25);
  const auto big = flatten_map<double>(1, 13, 13, 256, conv5);
  CHECK(big.n() == 169);
  CHECK(big.d() == 256);
}

TEST_CASE("flatten_map validates shapes") {
  const std::vector<double> vals{1, 2, 3};
  CHECK_THROWS_AS(flatten_map<double>(0, 0, 1, 3, vals), ValidationError);
  CHECK_THROWS_AS(flatten_map<double>(0, 2, 1, 3, vals), ValidationError);
}

TEST_SUITE_END();
