#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "netvlad/common.hpp"

namespace netvlad {

// eigenvalue floor applied as 1/sqrt(lambda + eps)
inline constexpr double kWhiteningEpsilon = 1e-9;

template <class S>
struct WhiteningTransform {
  VectorX<S> mean;         // L
  MatrixX<S> rows;         // D' x L, eigenvector rows scaled by 1/sqrt(lambda+eps)
  VectorX<S> eigenvalues;  // D', nonincreasing

  Eigen::Index in_dim() const { return mean.size(); }
  Eigen::Index out_dim() const { return rows.rows(); }
};

// PCA with whitening. Covariance uses 1/(M-1); when M <= L the
// eigendecomposition runs on the M x M Gram matrix instead of the L x L
// covariance (identical spectrum, and 32k-D representations would otherwise
// need an 8 GB matrix). The solve runs in double regardless of S.
template <class S>
WhiteningTransform<S> fit_whitening(const MatrixX<S>& train, Eigen::Index out_dim) {
  const Eigen::Index m = train.rows();
  const Eigen::Index l = train.cols();
  if (m < 2) throw ValidationError("fit_whitening: need at least 2 training vectors");
  if (out_dim < 1) throw ValidationError("fit_whitening: output dim must be >= 1");

  const Eigen::MatrixXd data = train.template cast<double>();
  const Eigen::RowVectorXd mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - mean;

  Eigen::VectorXd lambda;   // ascending from the solver
  Eigen::MatrixXd vectors;  // columns, matching lambda
  if (m <= l) {
    const Eigen::MatrixXd gram = centered * centered.transpose() / double(m - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success) {
      throw RuntimeError("fit_whitening: eigendecomposition failed");
    }
    lambda = solver.eigenvalues();
    // map Gram eigenvectors u to covariance eigenvectors v = X^T u / (sigma)
    vectors.resize(l, m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double sigma = std::sqrt(std::max(lambda(i), 0.0) * double(m - 1));
      if (sigma > 0.0) {
        vectors.col(i) = centered.transpose() * solver.eigenvectors().col(i) / sigma;
      } else {
        vectors.col(i).setZero();
      }
    }
  } else {
    const Eigen::MatrixXd cov = centered.transpose() * centered / double(m - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) {
      throw RuntimeError("fit_whitening: eigendecomposition failed");
    }
    lambda = solver.eigenvalues();
    vectors = solver.eigenvectors();
  }

  // descending order, deterministic on ties
  std::vector<Eigen::Index> order(lambda.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return lambda(a) > lambda(b);
  });

  const double lambda_max = std::max(lambda(order[0]), 0.0);
  const double rank_tol = lambda_max * 1e-10;
  Eigen::Index rank = 0;
  while (rank < static_cast<Eigen::Index>(order.size()) &&
         lambda(order[rank]) > rank_tol && lambda(order[rank]) > 0.0) {
    ++rank;
  }
  const Eigen::Index attainable = std::min(rank, std::min(l, m - 1));
  if (out_dim > attainable) {
    throw ValidationError("fit_whitening: requested " + std::to_string(out_dim) +
                          " dimensions but the data supports at most " +
                          std::to_string(attainable));
  }

  WhiteningTransform<S> t;
  t.mean = mean.transpose().cast<S>();
  t.rows.resize(out_dim, l);
  t.eigenvalues.resize(out_dim);
  for (Eigen::Index i = 0; i < out_dim; ++i) {
    Eigen::VectorXd v = vectors.col(order[i]);
    // sign convention: largest-magnitude component positive
    Eigen::Index max_at = 0;
    v.cwiseAbs().maxCoeff(&max_at);
    if (v(max_at) < 0.0) v = -v;
    const double scaled = lambda(order[i]);
    t.eigenvalues(i) = static_cast<S>(scaled);
    t.rows.row(i) = (v / std::sqrt(scaled + kWhiteningEpsilon)).transpose().cast<S>();
  }
  return t;
}

// y = rows * (x - mean), L2-normalized; a zero projection passes through.
template <class S>
VectorX<S> apply_whitening(const VectorX<S>& x, const WhiteningTransform<S>& t) {
  if (x.size() != t.in_dim()) {
    throw ValidationError("apply_whitening: input dim " + std::to_string(x.size()) +
                          " != transform dim " + std::to_string(t.in_dim()));
  }
  VectorX<S> y = t.rows * (x - t.mean);
  const S norm = y.norm();
  if (norm > S(0)) y /= norm;
  return y;
}

// projection without the final normalization, used to check the whitening
// identity on training data
template <class S>
VectorX<S> project_whitening(const VectorX<S>& x, const WhiteningTransform<S>& t) {
  return t.rows * (x - t.mean);
}

}  // namespace netvlad
