#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "netvlad/common.hpp"
#include "netvlad/descriptors.hpp"
#include "netvlad/kmeans.hpp"

namespace netvlad {

// Trainable per-cluster parameters: soft-assignment weights w_k and biases
// b_k, plus anchor points c_k. alpha is only meaningful at initialization,
// where w_k = 2*alpha*c_k and b_k = -alpha*|c_k|^2.
template <class S>
struct NetVladParams {
  MatrixX<S> w;  // K x D
  VectorX<S> b;  // K
  MatrixX<S> c;  // K x D
  S alpha = S(1);

  Eigen::Index k() const { return c.rows(); }
  Eigen::Index d() const { return c.cols(); }
};

template <class S>
void validate(const NetVladParams<S>& p) {
  if (p.k() < 1 || p.d() < 1) {
    throw ValidationError("netvlad params: K and D must be >= 1");
  }
  if (p.w.rows() != p.k() || p.w.cols() != p.d() || p.b.size() != p.k()) {
    throw ValidationError("netvlad params: inconsistent w/b/c shapes");
  }
  if (!p.w.allFinite() || !p.b.allFinite() || !p.c.allFinite()) {
    throw ValidationError("netvlad params contain non-finite values");
  }
}

namespace detail {

template <class S>
void check_dims(const DescriptorMap<S>& map, Eigen::Index param_d,
                const char* op) {
  validate(map);
  if (map.d() != param_d) {
    throw ValidationError(std::string(op) + ": descriptor dim " +
                          std::to_string(map.d()) + " != parameter dim " +
                          std::to_string(param_d));
  }
}

// 0/0 is defined as 0: an all-zero vector passes through unchanged.
template <class S>
VectorX<S> l2_normalized_or_zero(VectorX<S> v) {
  const S norm = v.norm();
  if (norm > S(0)) v /= norm;
  return v;
}

}  // namespace detail

// Soft assignment a(i,k) = softmax_k(w_k . x_i + b_k), computed with per-row
// max subtraction: alpha-identity parameters push logits to the 1e4 scale.
template <class S>
MatrixX<S> soft_assign(const DescriptorMap<S>& map, const NetVladParams<S>& params) {
  validate(params);
  detail::check_dims(map, params.d(), "soft_assign");
  MatrixX<S> logits = map.descriptors * params.w.transpose();
  logits.rowwise() += params.b.transpose();
  const VectorX<S> row_max = logits.rowwise().maxCoeff();
  logits.colwise() -= row_max;
  MatrixX<S> weights = logits.array().exp().matrix();
  const VectorX<S> row_sum = weights.rowwise().sum();
  weights.array().colwise() /= row_sum.array();
  return weights;
}

// Everything backward needs, captured at forward time. Backward never
// recomputes a forward quantity from scratch.
template <class S>
struct ForwardCache {
  MatrixX<S> x;            // N x D input descriptors
  MatrixX<S> w;            // parameter snapshots
  MatrixX<S> c;
  MatrixX<S> assign;       // N x K soft assignment
  MatrixX<S> vlad;         // K x D residual sums, pre-normalization
  VectorX<S> intra_norms;  // K column norms
  MatrixX<S> intra;        // K x D after intra-normalization
  VectorX<S> flat;         // K*D flattened intra
  S final_norm = S(0);
  VectorX<S> output;       // K*D final representation
};

template <class S>
struct NetVladGrads {
  MatrixX<S> w;  // K x D
  VectorX<S> b;  // K
  MatrixX<S> c;  // K x D
  MatrixX<S> x;  // N x D

  static NetVladGrads zero(Eigen::Index n, Eigen::Index k, Eigen::Index d) {
    return {MatrixX<S>::Zero(k, d), VectorX<S>::Zero(k), MatrixX<S>::Zero(k, d),
            MatrixX<S>::Zero(n, d)};
  }
};

// V(k,j) = sum_i a(i,k) * (x(i,j) - c(k,j)), then each cluster row is
// L2-normalized (intra-normalization), the matrix is flattened cluster-major
// and L2-normalized again.
template <class S>
std::pair<VectorX<S>, ForwardCache<S>> netvlad_forward(
    const DescriptorMap<S>& map, const NetVladParams<S>& params) {
  const Eigen::Index k = params.k();
  const Eigen::Index d = params.d();

  ForwardCache<S> cache;
  cache.x = map.descriptors;
  cache.w = params.w;
  cache.c = params.c;
  cache.assign = soft_assign(map, params);

  const VectorX<S> mass = cache.assign.colwise().sum().transpose();  // K
  cache.vlad = cache.assign.transpose() * cache.x - mass.asDiagonal() * params.c;

  cache.intra_norms.resize(k);
  cache.intra = MatrixX<S>::Zero(k, d);
  for (Eigen::Index c = 0; c < k; ++c) {
    const S norm = cache.vlad.row(c).norm();
    cache.intra_norms(c) = norm;
    if (norm > S(0)) cache.intra.row(c) = cache.vlad.row(c) / norm;
  }

  cache.flat = Eigen::Map<const VectorX<S>>(cache.intra.data(), k * d);
  cache.final_norm = cache.flat.norm();
  cache.output = cache.final_norm > S(0)
                     ? VectorX<S>(cache.flat / cache.final_norm)
                     : cache.flat;
  return {cache.output, cache};
}

// Reverse-mode gradients of the normalized output w.r.t. w, b, c and the
// input descriptors. Zero-norm clusters (and an all-zero output) have
// gradient zero by definition.
template <class S>
NetVladGrads<S> netvlad_backward(const ForwardCache<S>& cache,
                                 const VectorX<S>& grad_out) {
  const Eigen::Index n = cache.x.rows();
  const Eigen::Index d = cache.x.cols();
  const Eigen::Index k = cache.assign.cols();
  if (grad_out.size() != k * d) {
    throw ValidationError("netvlad_backward: grad size " +
                          std::to_string(grad_out.size()) +
                          " does not match cached K*D = " + std::to_string(k * d));
  }

  auto grads = NetVladGrads<S>::zero(n, k, d);
  if (cache.final_norm <= S(0)) return grads;

  // through the global normalization: y = u / |u|
  const VectorX<S> grad_flat =
      (grad_out - cache.output * cache.output.dot(grad_out)) / cache.final_norm;

  // through the intra-normalization, one cluster row at a time
  MatrixX<S> grad_vlad(k, d);
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto g = Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic, Eigen::RowMajor>>(
        grad_flat.data() + c * d, d);
    if (cache.intra_norms(c) > S(0)) {
      grad_vlad.row(c) =
          (g - cache.intra.row(c) * cache.intra.row(c).dot(g)) / cache.intra_norms(c);
    } else {
      grad_vlad.row(c).setZero();
    }
  }

  // V = A^T X - diag(colsum A) C
  const VectorX<S> mass = cache.assign.colwise().sum().transpose();
  grads.c = -(mass.asDiagonal() * grad_vlad);

  // dL/da(i,k) = sum_j grad_vlad(k,j) * (x(i,j) - c(k,j))
  MatrixX<S> grad_assign = cache.x * grad_vlad.transpose();  // N x K
  const VectorX<S> center_dot =
      (grad_vlad.array() * cache.c.array()).rowwise().sum();
  grad_assign.rowwise() -= center_dot.transpose();

  // softmax backward: dL/ds(i,k) = a(i,k) * (g(i,k) - sum_k' g(i,k') a(i,k'))
  const VectorX<S> row_mix =
      (grad_assign.array() * cache.assign.array()).rowwise().sum();
  MatrixX<S> grad_logits = grad_assign;
  grad_logits.colwise() -= row_mix;
  grad_logits.array() *= cache.assign.array();

  grads.w = grad_logits.transpose() * cache.x;
  grads.b = grad_logits.colwise().sum().transpose();
  grads.x = cache.assign * grad_vlad + grad_logits * cache.w;
  return grads;
}

struct HardAssignStats {
  std::int64_t nearest_ties = 0;
};

// Classic VLAD: hard assignment to the nearest center (ties to the lowest
// index), with the same two-stage normalization as the soft layer.
template <class S>
VectorX<S> vlad_hard(const DescriptorMap<S>& map, const MatrixX<S>& centers,
                     HardAssignStats* stats = nullptr) {
  detail::check_dims(map, centers.cols(), "vlad_hard");
  const Eigen::Index k = centers.rows();
  const Eigen::Index d = centers.cols();

  MatrixX<S> vlad = MatrixX<S>::Zero(k, d);
  for (Eigen::Index i = 0; i < map.n(); ++i) {
    S best_d;
    const Eigen::Index best = detail::nearest_center<S>(centers, map.descriptors.row(i), &best_d);
    if (stats) {
      for (Eigen::Index c = best + 1; c < k; ++c) {
        if ((centers.row(c) - map.descriptors.row(i)).squaredNorm() == best_d) {
          ++stats->nearest_ties;
          break;
        }
      }
    }
    vlad.row(best) += map.descriptors.row(i) - centers.row(best);
  }

  for (Eigen::Index c = 0; c < k; ++c) {
    const S norm = vlad.row(c).norm();
    if (norm > S(0)) vlad.row(c) /= norm;
  }
  VectorX<S> flat = Eigen::Map<const VectorX<S>>(vlad.data(), k * d);
  return detail::l2_normalized_or_zero(std::move(flat));
}

template <class S>
VectorX<S> max_pool(const DescriptorMap<S>& map) {
  validate(map);
  VectorX<S> pooled = map.descriptors.colwise().maxCoeff().transpose();
  return detail::l2_normalized_or_zero(std::move(pooled));
}

template <class S>
VectorX<S> sum_pool(const DescriptorMap<S>& map) {
  validate(map);
  VectorX<S> pooled = map.descriptors.colwise().sum().transpose();
  return detail::l2_normalized_or_zero(std::move(pooled));
}

// Anchors from k-means; alpha solved so that the geometric mean over the
// sample of (largest / second-largest assignment weight) hits target_ratio;
// w and b from the identity w_k = 2*alpha*c_k, b_k = -alpha*|c_k|^2.
template <class S>
NetVladParams<S> init_netvlad(const MatrixX<S>& sample, Eigen::Index k,
                              S target_ratio, std::uint64_t seed) {
  if (sample.rows() < k) {
    throw ValidationError("init_netvlad: sample smaller than K");
  }
  if (target_ratio <= S(1)) {
    throw ValidationError("init_netvlad: target ratio must exceed 1");
  }

  NetVladParams<S> params;
  params.c = kmeans(sample, k, seed);

  if (k == 1) {
    // no second-nearest cluster exists; K=1 only appears in tests
    params.alpha = S(1);
  } else {
    // ratio(x) = exp(alpha * (d2^2 - d1^2)), so the geometric mean hits the
    // target when alpha = log(ratio) / mean gap
    double gap_sum = 0.0;
    for (Eigen::Index i = 0; i < sample.rows(); ++i) {
      S d1 = std::numeric_limits<S>::max();
      S d2 = std::numeric_limits<S>::max();
      for (Eigen::Index c = 0; c < k; ++c) {
        const S dist = (params.c.row(c) - sample.row(i)).squaredNorm();
        if (dist < d1) {
          d2 = d1;
          d1 = dist;
        } else if (dist < d2) {
          d2 = dist;
        }
      }
      gap_sum += static_cast<double>(d2 - d1);
    }
    const double mean_gap = gap_sum / static_cast<double>(sample.rows());
    if (!(mean_gap > 1e-30)) {
      throw RuntimeError(
          "init_netvlad: nearest and second-nearest cluster distances coincide "
          "across the sample (mean squared-distance gap " +
          std::to_string(mean_gap) + "); cannot solve for alpha");
    }
    params.alpha = static_cast<S>(std::log(static_cast<double>(target_ratio)) / mean_gap);
  }

  params.w = S(2) * params.alpha * params.c;
  params.b = -params.alpha * params.c.rowwise().squaredNorm();
  validate(params);
  return params;
}

}  // namespace netvlad
