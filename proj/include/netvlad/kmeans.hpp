#pragma once

#include <limits>
#include <string>
#include <vector>

#include "netvlad/common.hpp"
#include "netvlad/rng.hpp"

namespace netvlad {

struct KMeansOptions {
  int max_iterations = 100;
  double relative_shift_tol = 1e-7;
};

namespace detail {

// index of nearest row of `centers`, ties to the lowest index
template <class S>
Eigen::Index nearest_center(const MatrixX<S>& centers,
                            const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic, Eigen::RowMajor>>& point,
                            S* best_sq = nullptr) {
  Eigen::Index best = 0;
  S best_d = std::numeric_limits<S>::max();
  for (Eigen::Index k = 0; k < centers.rows(); ++k) {
    const S d = (centers.row(k) - point).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  if (best_sq) *best_sq = best_d;
  return best;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding. Deterministic under seed; empty
// clusters are re-seeded at the point farthest from its assigned center.
template <class S>
MatrixX<S> kmeans(const MatrixX<S>& points, Eigen::Index k, std::uint64_t seed,
                  const KMeansOptions& opts = {}) {
  const Eigen::Index m = points.rows();
  if (k < 1) throw ValidationError("kmeans: K must be >= 1");
  if (m < k) {
    throw ValidationError("kmeans: need at least K=" + std::to_string(k) +
                          " points, got " + std::to_string(m));
  }

  Rng rng(seed);
  MatrixX<S> centers(k, points.cols());

  // k-means++ seeding
  centers.row(0) = points.row(rng.uniform_index(static_cast<std::size_t>(m)));
  VectorX<S> dist_sq(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    dist_sq(i) = (points.row(i) - centers.row(0)).squaredNorm();
  }
  for (Eigen::Index c = 1; c < k; ++c) {
    const double total = static_cast<double>(dist_sq.sum());
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      for (Eigen::Index i = 0; i < m; ++i) {
        target -= static_cast<double>(dist_sq(i));
        if (target <= 0.0) {
          chosen = i;
          break;
        }
        chosen = i;
      }
    } else {
      chosen = rng.uniform_index(static_cast<std::size_t>(m));
    }
    centers.row(c) = points.row(chosen);
    for (Eigen::Index i = 0; i < m; ++i) {
      const S d = (points.row(i) - centers.row(c)).squaredNorm();
      if (d < dist_sq(i)) dist_sq(i) = d;
    }
  }

  std::vector<Eigen::Index> assign(m, 0);
  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    for (Eigen::Index i = 0; i < m; ++i) {
      assign[i] = detail::nearest_center<S>(centers, points.row(i));
    }

    MatrixX<S> sums = MatrixX<S>::Zero(k, points.cols());
    std::vector<Eigen::Index> counts(k, 0);
    for (Eigen::Index i = 0; i < m; ++i) {
      sums.row(assign[i]) += points.row(i);
      ++counts[assign[i]];
    }

    S max_shift = S(0);
    for (Eigen::Index c = 0; c < k; ++c) {
      Eigen::Matrix<S, 1, Eigen::Dynamic, Eigen::RowMajor> updated;
      if (counts[c] > 0) {
        updated = sums.row(c) / S(counts[c]);
      } else {
        // re-seed at the globally farthest point
        Eigen::Index far = 0;
        S far_d = S(-1);
        for (Eigen::Index i = 0; i < m; ++i) {
          const S d = (points.row(i) - centers.row(assign[i])).squaredNorm();
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        updated = points.row(far);
      }
      const S shift = (updated - centers.row(c)).norm() /
                      (centers.row(c).norm() + S(1e-12));
      if (shift > max_shift) max_shift = shift;
      centers.row(c) = updated;
    }
    if (max_shift <= S(opts.relative_shift_tol)) break;
  }
  return centers;
}

}  // namespace netvlad
