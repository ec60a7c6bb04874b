#pragma once

#include <cmath>
#include <span>
#include <string>

#include "netvlad/common.hpp"

namespace netvlad {

// A set of N local D-dimensional descriptors for one image (an H x W x D
// activation map flattened to N = H*W rows).
template <class S>
struct DescriptorMap {
  ImageId image_id = 0;
  MatrixX<S> descriptors;  // N x D

  Eigen::Index n() const { return descriptors.rows(); }
  Eigen::Index d() const { return descriptors.cols(); }
};

template <class S>
void validate(const DescriptorMap<S>& map) {
  if (map.n() < 1 || map.d() < 1) {
    throw ValidationError("descriptor map " + std::to_string(map.image_id) +
                          ": need N >= 1 and D >= 1, got N=" +
                          std::to_string(map.n()) + " D=" + std::to_string(map.d()));
  }
  if (!map.descriptors.allFinite()) {
    throw ValidationError("descriptor map " + std::to_string(map.image_id) +
                          " contains non-finite values");
  }
}

// Row-wise L2 normalization. Zero rows stay zero: a silent descriptor carries
// no evidence and its gradient is defined as zero.
template <class S>
DescriptorMap<S> l2_normalize_descriptors(DescriptorMap<S> map) {
  validate(map);
  for (Eigen::Index i = 0; i < map.n(); ++i) {
    const S norm = map.descriptors.row(i).norm();
    if (norm > S(0)) map.descriptors.row(i) /= norm;
  }
  return map;
}

// H x W x D tensor (row-major, W fastest) -> N x D rows in scan order.
template <class S>
DescriptorMap<S> flatten_map(ImageId id, Eigen::Index h, Eigen::Index w,
                             Eigen::Index d, std::span<const S> values) {
  if (h < 1 || w < 1 || d < 1) {
    throw ValidationError("flatten_map: H, W, D must all be >= 1");
  }
  if (static_cast<std::size_t>(h * w * d) != values.size()) {
    throw ValidationError("flatten_map: expected " + std::to_string(h * w * d) +
                          " values, got " + std::to_string(values.size()));
  }
  DescriptorMap<S> map;
  map.image_id = id;
  map.descriptors = Eigen::Map<const MatrixX<S>>(values.data(), h * w, d);
  validate(map);
  return map;
}

}  // namespace netvlad
