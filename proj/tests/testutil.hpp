#pragma once

#include "netvlad/common.hpp"
#include "netvlad/geodata.hpp"
#include "netvlad/rng.hpp"

namespace testutil {

inline netvlad::MatrixX<double> random_matrix(netvlad::Rng& rng, Eigen::Index r,
                                              Eigen::Index c, double scale = 1.0) {
  netvlad::MatrixX<double> m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

inline netvlad::VectorX<double> random_vector(netvlad::Rng& rng, Eigen::Index n,
                                              double scale = 1.0) {
  netvlad::VectorX<double> v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

// central finite difference of eval() w.r.t. one scalar slot
template <class Fn>
double central_diff(double& slot, double h, Fn&& eval) {
  const double saved = slot;
  slot = saved + h;
  const double hi = eval();
  slot = saved - h;
  const double lo = eval();
  slot = saved;
  return (hi - lo) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
}

template <class A, class B>
bool bitwise_equal(const A& a, const B& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

// a tiny in-memory world with explicit geometry, all in one split
struct HandImage {
  netvlad::ImageId id;
  double x;
  double y;
  std::int64_t t;
};

inline netvlad::Dataset hand_dataset(const std::vector<HandImage>& specs, int dim = 2) {
  netvlad::Dataset ds;
  ds.descriptor_dim = dim;
  netvlad::Rng rng(7);
  for (const auto& s : specs) {
    netvlad::GeoImage img;
    img.id = s.id;
    img.x = s.x;
    img.y = s.y;
    img.timestamp_days = s.t;
    img.split = netvlad::Split::Train;
    ds.images.push_back(img);
    ds.descriptors.push_back(random_matrix(rng, 3, dim).cast<float>());
  }
  return ds;
}

}  // namespace testutil
