#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "netvlad/common.hpp"
#include "netvlad/encoder.hpp"
#include "netvlad/geodata.hpp"
#include "netvlad/postprocess.hpp"

namespace netvlad {

struct Position {
  double x = 0;
  double y = 0;
};

inline double ground_distance(const Position& a, const Position& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

struct EvalOptions {
  std::vector<int> n_values{1, 5, 10};
  double distance_threshold_m = 25.0;
  double nms_radius_m = 0.0;  // 0 disables spatial NMS
  int whiten_dim = 0;         // 0 disables; the CLI fits the transform on the train split
  int report_top_k = 10;
  int workers = 1;
};

template <class S>
struct RankedItem {
  ImageId id = 0;
  S distance = S(0);
};

// exact brute-force ranking by Euclidean distance, ties by ascending id
template <class S>
std::vector<RankedItem<S>> retrieve(const VectorX<S>& query,
                                    const std::vector<ImageId>& db_ids,
                                    const MatrixX<S>& db_reprs,
                                    std::size_t top_n) {
  if (db_ids.empty()) throw ValidationError("retrieve: empty database");
  if (db_reprs.rows() != static_cast<Eigen::Index>(db_ids.size()) ||
      db_reprs.cols() != query.size()) {
    throw ValidationError("retrieve: database shape does not match query");
  }
  std::vector<RankedItem<S>> ranked(db_ids.size());
  for (std::size_t i = 0; i < db_ids.size(); ++i) {
    ranked[i] = {db_ids[i], (db_reprs.row(i).transpose() - query).norm()};
  }
  std::sort(ranked.begin(), ranked.end(), [](const RankedItem<S>& a, const RankedItem<S>& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.id < b.id;
  });
  if (ranked.size() > top_n) ranked.resize(top_n);
  return ranked;
}

// greedy scan in rank order: keep an item iff every already-kept item is at
// least `radius_m` away (strict, so radius 0 keeps everything)
template <class S>
std::vector<RankedItem<S>> spatial_nms(const std::vector<RankedItem<S>>& ranked,
                                       const std::map<ImageId, Position>& positions,
                                       double radius_m) {
  std::vector<RankedItem<S>> kept;
  std::vector<Position> kept_pos;
  for (const auto& item : ranked) {
    const Position pos = positions.at(item.id);
    bool suppressed = false;
    for (const auto& kp : kept_pos) {
      if (ground_distance(pos, kp) < radius_m) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      kept.push_back(item);
      kept_pos.push_back(pos);
    }
  }
  return kept;
}

struct RecallCurve {
  std::vector<int> n_values;
  std::vector<double> recall;
  int query_count = 0;

  double at(int n) const {
    for (std::size_t i = 0; i < n_values.size(); ++i) {
      if (n_values[i] == n) return recall[i];
    }
    throw ValidationError("recall curve has no cutoff N=" + std::to_string(n));
  }
};

// a query is correct at N iff any of its top-N results lies within
// `threshold_m` of the query's true position
template <class S>
RecallCurve recall_at_n(const std::vector<std::vector<RankedItem<S>>>& ranked_per_query,
                        const std::vector<Position>& query_positions,
                        const std::map<ImageId, Position>& db_positions,
                        const std::vector<int>& n_values,
                        double threshold_m = 25.0) {
  if (n_values.empty()) throw ValidationError("recall_at_n: no cutoffs given");
  if (ranked_per_query.size() != query_positions.size()) {
    throw ValidationError("recall_at_n: rankings and positions disagree in count");
  }
  RecallCurve curve;
  curve.n_values = n_values;
  curve.recall.assign(n_values.size(), 0.0);
  curve.query_count = static_cast<int>(ranked_per_query.size());

  for (std::size_t q = 0; q < ranked_per_query.size(); ++q) {
    const auto& ranked = ranked_per_query[q];
    // rank of the first result within threshold, if any
    std::size_t first_hit = ranked.size();
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      if (ground_distance(db_positions.at(ranked[r].id), query_positions[q]) <= threshold_m) {
        first_hit = r;
        break;
      }
    }
    for (std::size_t i = 0; i < n_values.size(); ++i) {
      if (first_hit < static_cast<std::size_t>(n_values[i])) curve.recall[i] += 1.0;
    }
  }
  if (curve.query_count > 0) {
    for (auto& r : curve.recall) r /= curve.query_count;
  }
  return curve;
}

template <class S>
struct QueryResult {
  ImageId query_id = 0;
  std::vector<RankedItem<S>> top;
  std::vector<bool> top_is_match;  // within threshold, per top item
  std::vector<bool> correct_at;    // per n_values entry
};

template <class S>
struct EvalReport {
  RecallCurve curve;
  std::vector<QueryResult<S>> queries;
};

namespace detail {

// encode a fixed list of images into preallocated slots; deterministic for
// any worker count
template <class S, class Fn>
void for_each_indexed(std::size_t count, int workers, Fn&& fn) {
  workers = std::max(1, workers);
  if (workers == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t stride = static_cast<std::size_t>(workers);
  for (std::size_t w = 0; w < stride; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = w; i < count; i += stride) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail

template <class S>
std::vector<VectorX<S>> encode_images(const Dataset& ds,
                                      const std::vector<std::size_t>& indices,
                                      const Encoder<S>& encoder, int workers) {
  std::vector<VectorX<S>> out(indices.size());
  detail::for_each_indexed<S>(indices.size(), workers, [&](std::size_t i) {
    out[i] = encoder.encode(ds.images[indices[i]].id, ds.descriptors[indices[i]]);
  });
  return out;
}

// full protocol: encode database and queries, optional whitening, exact
// retrieval, optional NMS, recall at the configured cutoffs
template <class S>
EvalReport<S> evaluate(const Dataset& ds, Split split, const Encoder<S>& encoder,
                       const WhiteningTransform<S>* whitening,
                       const EvalOptions& opts) {
  std::vector<std::size_t> db_idx, query_idx;
  for (const std::size_t i : ds.indices_of(split)) {
    (ds.images[i].role == Role::Database ? db_idx : query_idx).push_back(i);
  }
  if (db_idx.empty() || query_idx.empty()) {
    throw ValidationError(std::string("evaluate: split '") + to_string(split) +
                          "' needs both database and query images");
  }

  auto db_reprs = encode_images(ds, db_idx, encoder, opts.workers);
  auto query_reprs = encode_images(ds, query_idx, encoder, opts.workers);
  if (whitening) {
    detail::for_each_indexed<S>(db_idx.size(), opts.workers, [&](std::size_t i) {
      db_reprs[i] = apply_whitening(db_reprs[i], *whitening);
    });
    detail::for_each_indexed<S>(query_idx.size(), opts.workers, [&](std::size_t i) {
      query_reprs[i] = apply_whitening(query_reprs[i], *whitening);
    });
  }

  std::vector<ImageId> db_ids(db_idx.size());
  MatrixX<S> db_matrix(db_idx.size(), db_reprs.empty() ? 0 : db_reprs[0].size());
  std::map<ImageId, Position> db_positions;
  for (std::size_t i = 0; i < db_idx.size(); ++i) {
    const GeoImage& img = ds.images[db_idx[i]];
    db_ids[i] = img.id;
    db_matrix.row(i) = db_reprs[i].transpose();
    db_positions[img.id] = {img.x, img.y};
  }

  int max_n = opts.report_top_k;
  for (const int n : opts.n_values) max_n = std::max(max_n, n);

  std::vector<std::vector<RankedItem<S>>> rankings(query_idx.size());
  std::vector<Position> query_positions(query_idx.size());
  detail::for_each_indexed<S>(query_idx.size(), opts.workers, [&](std::size_t q) {
    // full ranking first: NMS must see everything it might suppress
    auto ranked = retrieve(query_reprs[q], db_ids, db_matrix, db_ids.size());
    if (opts.nms_radius_m > 0.0) {
      ranked = spatial_nms(ranked, db_positions, opts.nms_radius_m);
    }
    if (ranked.size() > static_cast<std::size_t>(max_n)) ranked.resize(max_n);
    rankings[q] = std::move(ranked);
    const GeoImage& img = ds.images[query_idx[q]];
    query_positions[q] = {img.x, img.y};
  });

  EvalReport<S> report;
  report.curve = recall_at_n(rankings, query_positions, db_positions, opts.n_values,
                             opts.distance_threshold_m);

  report.queries.resize(query_idx.size());
  for (std::size_t q = 0; q < query_idx.size(); ++q) {
    QueryResult<S>& res = report.queries[q];
    res.query_id = ds.images[query_idx[q]].id;
    const auto& ranked = rankings[q];
    const std::size_t top = std::min(ranked.size(), static_cast<std::size_t>(opts.report_top_k));
    std::size_t first_hit = ranked.size();
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      const bool match = ground_distance(db_positions.at(ranked[r].id), query_positions[q]) <=
                         opts.distance_threshold_m;
      if (match && first_hit == ranked.size()) first_hit = r;
      if (r < top) {
        res.top.push_back(ranked[r]);
        res.top_is_match.push_back(match);
      }
    }
    for (const int n : opts.n_values) {
      res.correct_at.push_back(first_hit < static_cast<std::size_t>(n));
    }
  }
  return report;
}

}  // namespace netvlad
