#pragma once

#include <string>
#include <vector>

#include "netvlad/common.hpp"

namespace netvlad {

template <class S>
struct LossConfig {
  S margin = S(0.1);
};

namespace detail {

template <class S>
void check_same_dim(const VectorX<S>& q, const std::vector<VectorX<S>>& vs,
                    const char* what) {
  for (const auto& v : vs) {
    if (v.size() != q.size()) {
      throw ValidationError(std::string("weak_triplet_loss: ") + what +
                            " dimension " + std::to_string(v.size()) +
                            " != query dimension " + std::to_string(q.size()));
    }
  }
}

}  // namespace detail

// argmin_i d(q, p_i), ties to the lowest index
template <class S>
std::size_t best_positive(const VectorX<S>& query,
                          const std::vector<VectorX<S>>& positives) {
  if (positives.empty()) {
    throw ValidationError("best_positive: empty positive list");
  }
  detail::check_same_dim(query, positives, "positive");
  std::size_t best = 0;
  S best_d = (positives[0] - query).squaredNorm();
  for (std::size_t i = 1; i < positives.size(); ++i) {
    const S d = (positives[i] - query).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

template <class S>
struct TripletLossResult {
  S loss = S(0);
  VectorX<S> grad_query;
  std::vector<VectorX<S>> grad_positives;
  std::vector<VectorX<S>> grad_negatives;
  std::size_t best_positive_index = 0;
  int active_negatives = 0;
};

// L = sum_j max(0, min_i d^2(q,p_i) + m - d^2(q,n_j)). Gradients flow only
// through the query, the best positive and negatives with a strictly
// positive hinge argument; the kink itself contributes zero.
template <class S>
TripletLossResult<S> weak_triplet_loss(const VectorX<S>& query,
                                       const std::vector<VectorX<S>>& positives,
                                       const std::vector<VectorX<S>>& negatives,
                                       const LossConfig<S>& cfg) {
  if (positives.empty() || negatives.empty()) {
    throw ValidationError("weak_triplet_loss: need at least one positive and one negative");
  }
  if (cfg.margin < S(0)) {
    throw ValidationError("weak_triplet_loss: margin must be nonnegative");
  }
  detail::check_same_dim(query, positives, "positive");
  detail::check_same_dim(query, negatives, "negative");

  TripletLossResult<S> result;
  result.best_positive_index = best_positive(query, positives);
  const VectorX<S>& best = positives[result.best_positive_index];
  const S best_d = (best - query).squaredNorm();

  result.grad_query = VectorX<S>::Zero(query.size());
  result.grad_positives.assign(positives.size(), VectorX<S>::Zero(query.size()));
  result.grad_negatives.assign(negatives.size(), VectorX<S>::Zero(query.size()));

  for (std::size_t j = 0; j < negatives.size(); ++j) {
    const VectorX<S> diff_n = query - negatives[j];
    const S arg = best_d + cfg.margin - diff_n.squaredNorm();
    if (arg > S(0)) {
      result.loss += arg;
      ++result.active_negatives;
      result.grad_query -= S(2) * diff_n;
      result.grad_negatives[j] = S(2) * diff_n;
    }
  }
  if (result.active_negatives > 0) {
    const VectorX<S> diff_p = query - best;
    result.grad_query += S(2 * result.active_negatives) * diff_p;
    result.grad_positives[result.best_positive_index] =
        S(-2 * result.active_negatives) * diff_p;
  }
  return result;
}

}  // namespace netvlad
