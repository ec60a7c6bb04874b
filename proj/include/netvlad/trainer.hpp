#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "netvlad/common.hpp"
#include "netvlad/encoder.hpp"
#include "netvlad/eval.hpp"
#include "netvlad/geodata.hpp"
#include "netvlad/loss.hpp"
#include "netvlad/pooling.hpp"
#include "netvlad/rng.hpp"

namespace netvlad {

struct TrainConfig {
  double learning_rate = 0.001;
  double margin = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.001;
  int batch_size = 4;            // tuples per SGD step
  int max_epochs = 30;
  int clusters = 8;
  int mining_pool_size = 1000;   // random negatives sampled per query
  int mining_keep = 10;          // hardest negatives kept
  int recompute_interval = 1000; // queries between cache rebuilds, doubles every 5 epochs
  double init_target_ratio = 100.0;
  std::int64_t init_sample_max_rows = 100000;
  bool normalize_descriptors = true;
  std::vector<int> recall_ns{1, 5, 10};
  int workers = 1;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& cfg) {
  // lr 0 is allowed as a diagnostic no-op run
  if (cfg.learning_rate < 0) throw ValidationError("train config: learning_rate must be >= 0");
  if (cfg.momentum < 0 || cfg.momentum >= 1) throw ValidationError("train config: momentum must be in [0,1)");
  if (cfg.weight_decay < 0) throw ValidationError("train config: weight_decay must be >= 0");
  if (cfg.margin < 0) throw ValidationError("train config: margin must be >= 0");
  if (cfg.batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
  if (cfg.max_epochs < 1) throw ValidationError("train config: max_epochs must be >= 1");
  if (cfg.clusters < 1) throw ValidationError("train config: clusters must be >= 1");
  if (cfg.mining_keep < 1) throw ValidationError("train config: mining_keep must be >= 1");
  if (cfg.mining_pool_size < cfg.mining_keep) {
    throw ValidationError("train config: mining_pool_size must be >= mining_keep");
  }
  if (cfg.recompute_interval < 1) throw ValidationError("train config: recompute_interval must be >= 1");
  if (cfg.init_target_ratio <= 1) throw ValidationError("train config: init_target_ratio must exceed 1");
  if (std::find(cfg.recall_ns.begin(), cfg.recall_ns.end(), 5) == cfg.recall_ns.end()) {
    throw ValidationError("train config: recall_ns must include 5 (model selection uses recall@5)");
  }
}

// lr halves every 5 epochs (exact powers of two)
inline double lr_schedule(double initial_lr, int epoch) {
  return initial_lr * std::ldexp(1.0, -(epoch / 5));
}

// the cache recompute interval doubles in lockstep with the lr halving
inline std::int64_t cache_interval_at_epoch(std::int64_t base_interval, int epoch) {
  return base_interval << std::min(epoch / 5, 32);
}

template <class S>
struct ParamGrads {
  MatrixX<S> w;
  VectorX<S> b;
  MatrixX<S> c;

  static ParamGrads zero(Eigen::Index k, Eigen::Index d) {
    return {MatrixX<S>::Zero(k, d), VectorX<S>::Zero(k), MatrixX<S>::Zero(k, d)};
  }
  void accumulate(const NetVladGrads<S>& g) {
    w += g.w;
    b += g.b;
    c += g.c;
  }
  void scale(S s) {
    w *= s;
    b *= s;
    c *= s;
  }
  bool all_finite() const { return w.allFinite() && b.allFinite() && c.allFinite(); }
};

template <class S>
struct OptimizerState {
  S learning_rate;
  S momentum;
  S weight_decay;
  MatrixX<S> vel_w;
  VectorX<S> vel_b;
  MatrixX<S> vel_c;
  int epoch = 0;

  static OptimizerState init(const TrainConfig& cfg, Eigen::Index k, Eigen::Index d) {
    OptimizerState st;
    st.learning_rate = S(cfg.learning_rate);
    st.momentum = S(cfg.momentum);
    st.weight_decay = S(cfg.weight_decay);
    st.vel_w = MatrixX<S>::Zero(k, d);
    st.vel_b = VectorX<S>::Zero(k);
    st.vel_c = MatrixX<S>::Zero(k, d);
    return st;
  }
};

// classical momentum, decay added to the gradient: v <- mu*v - lr*(g + wd*p),
// p <- p + v. Biases are not decayed; anchors c are (they enter the
// representation linearly).
template <class S>
void sgd_step(NetVladParams<S>& params, const ParamGrads<S>& grads,
              OptimizerState<S>& state) {
  if (!grads.all_finite()) {
    throw RuntimeError("sgd_step: non-finite gradient, aborting step");
  }
  state.vel_w = state.momentum * state.vel_w -
                state.learning_rate * (grads.w + state.weight_decay * params.w);
  state.vel_b = state.momentum * state.vel_b - state.learning_rate * grads.b;
  state.vel_c = state.momentum * state.vel_c -
                state.learning_rate * (grads.c + state.weight_decay * params.c);
  params.w += state.vel_w;
  params.b += state.vel_b;
  params.c += state.vel_c;
}

// cached (slightly stale) representations of every train-split image
template <class S>
struct ReprCache {
  std::map<ImageId, VectorX<S>> reprs;
  std::int64_t queries_since_rebuild = 0;
  int rebuilds = 0;
};

template <class S>
void rebuild_cache(ReprCache<S>& cache, const Dataset& ds,
                   const std::vector<std::size_t>& indices,
                   const Encoder<S>& encoder, int workers) {
  const auto encoded = encode_images(ds, indices, encoder, workers);
  cache.reprs.clear();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    cache.reprs[ds.images[indices[i]].id] = encoded[i];
  }
  cache.queries_since_rebuild = 0;
  ++cache.rebuilds;
}

// negatives selected for each query in the previous epoch
struct MiningState {
  std::map<ImageId, std::vector<ImageId>> remembered;
};

// Candidate set = `pool_size` random definite negatives plus the remembered
// ones; the `keep` closest under cached distances win (ties by ascending id)
// and become the new remembered set.
template <class S>
std::vector<ImageId> mine_negatives(const TrainingTuple& tuple,
                                    const ReprCache<S>& cache, MiningState& mining,
                                    int pool_size, int keep, Rng& rng) {
  const auto query_it = cache.reprs.find(tuple.query_id);
  if (query_it == cache.reprs.end()) {
    throw RuntimeError("mine_negatives: query " + std::to_string(tuple.query_id) +
                       " missing from representation cache");
  }
  const VectorX<S>& query = query_it->second;
  const auto& negatives = tuple.negative_ids;  // ascending by construction

  std::vector<ImageId> candidates;
  if (static_cast<int>(negatives.size()) <= pool_size) {
    candidates = negatives;  // smaller world than the pool: use everything
  } else {
    for (const std::size_t idx :
         rng.sample_without_replacement(negatives.size(), static_cast<std::size_t>(pool_size))) {
      candidates.push_back(negatives[idx]);
    }
  }
  const auto prev = mining.remembered.find(tuple.query_id);
  if (prev != mining.remembered.end()) {
    for (const ImageId id : prev->second) {
      if (std::binary_search(negatives.begin(), negatives.end(), id)) {
        candidates.push_back(id);
      }
    }
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  std::vector<std::pair<S, ImageId>> scored;
  scored.reserve(candidates.size());
  for (const ImageId id : candidates) {
    const auto it = cache.reprs.find(id);
    if (it == cache.reprs.end()) {
      throw RuntimeError("mine_negatives: negative " + std::to_string(id) +
                         " missing from representation cache");
    }
    scored.emplace_back((it->second - query).squaredNorm(), id);
  }
  std::sort(scored.begin(), scored.end());

  std::vector<ImageId> selected;
  for (std::size_t i = 0; i < scored.size() && static_cast<int>(selected.size()) < keep; ++i) {
    selected.push_back(scored[i].second);
  }
  mining.remembered[tuple.query_id] = selected;
  return selected;
}

struct EpochMetrics {
  int epoch = 0;
  double lr = 0;
  double mean_loss = 0;
  std::vector<int> recall_ns;
  std::vector<double> recall;
  int cache_rebuilds = 0;
  int tuples = 0;

  std::string to_json_line() const {
    char buf[64];
    std::string line = "{\"epoch\":" + std::to_string(epoch);
    auto num = [&buf](double v) {
      std::snprintf(buf, sizeof(buf), "%.9g", v);
      return std::string(buf);
    };
    line += ",\"lr\":" + num(lr);
    line += ",\"mean_loss\":" + num(mean_loss);
    for (std::size_t i = 0; i < recall_ns.size(); ++i) {
      line += ",\"val_recall_at_" + std::to_string(recall_ns[i]) + "\":" + num(recall[i]);
    }
    line += ",\"cache_rebuilds\":" + std::to_string(cache_rebuilds);
    line += ",\"tuples\":" + std::to_string(tuples);
    line += "}";
    return line;
  }
};

template <class S>
struct TupleTrace {
  ImageId query_id = 0;
  std::vector<ImageId> mined_ids;
  S loss = S(0);
  const NetVladParams<S>* params = nullptr;  // parameters the tuple ran with
};

template <class S>
struct TrainHooks {
  std::function<void(int, const NetVladParams<S>&, const EpochMetrics&)> on_epoch;
  std::function<void(const TupleTrace<S>&)> on_tuple;
};

template <class S>
struct TrainResult {
  NetVladParams<S> init_params;
  NetVladParams<S> best_params;
  int best_epoch = -1;
  double best_recall5 = -1.0;
  int epochs_run = 0;
  int cache_rebuilds = 0;
  std::string stop_reason;
  std::vector<std::string> metrics_lines;
  std::uint64_t init_sample_hash = 0;
};

namespace detail {

// preprocessed descriptor rows from a random subsample of train images
template <class S>
MatrixX<S> init_sample(const Dataset& ds, const std::vector<std::size_t>& train_idx,
                       const Encoder<S>& enc, std::int64_t max_rows, Rng& rng) {
  std::vector<MatrixX<S>> chunks;
  std::int64_t rows = 0;
  for (const std::size_t pos : rng.sample_without_replacement(train_idx.size(), train_idx.size())) {
    const std::size_t idx = train_idx[pos];
    chunks.push_back(enc.preprocess(ds.images[idx].id, ds.descriptors[idx]).descriptors);
    rows += chunks.back().rows();
    if (rows >= max_rows) break;
  }
  MatrixX<S> sample(rows, ds.descriptor_dim);
  Eigen::Index at = 0;
  for (const auto& chunk : chunks) {
    sample.middleRows(at, chunk.rows()) = chunk;
    at += chunk.rows();
  }
  if (rows > max_rows) sample.conservativeResize(max_rows, Eigen::NoChange);
  return sample;
}

}  // namespace detail

// The full loop: k-means + ratio-rule initialization, SGD with momentum and
// weight decay over batches of tuples, randomized hard-negative mining
// against a periodically recomputed cache, lr halved every 5 epochs, and
// model selection by validation recall@5 (ties keep the earlier epoch).
template <class S>
TrainResult<S> train(const Dataset& ds, const TrainConfig& cfg,
                     const TrainHooks<S>& hooks = {}) {
  validate(cfg);
  const auto train_idx = ds.indices_of(Split::Train);
  if (train_idx.empty()) throw ValidationError("train: dataset has no train split");

  TrainResult<S> result;

  Encoder<S> enc;
  enc.pooling = Pooling::NetVlad;
  enc.normalize_input = cfg.normalize_descriptors;

  {
    Rng sample_rng(derive_seed(cfg.seed, "init/sample"));
    const MatrixX<S> sample =
        detail::init_sample(ds, train_idx, enc, cfg.init_sample_max_rows, sample_rng);
    result.init_sample_hash =
        fnv1a64(sample.data(), sizeof(S) * static_cast<std::size_t>(sample.size()));
    enc.params = init_netvlad(sample, cfg.clusters, S(cfg.init_target_ratio),
                              derive_seed(cfg.seed, "kmeans"));
  }
  result.init_params = enc.params;
  result.best_params = enc.params;

  auto tuples = build_tuples(ds, Split::Train);
  if (tuples.empty()) throw ValidationError("train: no usable training tuples");

  OptimizerState<S> opt = OptimizerState<S>::init(cfg, enc.params.k(), enc.params.d());
  ReprCache<S> cache;
  rebuild_cache(cache, ds, train_idx, enc, cfg.workers);
  MiningState mining;
  Rng mining_rng(derive_seed(cfg.seed, "mining"));

  EvalOptions val_opts;
  val_opts.n_values = cfg.recall_ns;
  val_opts.workers = cfg.workers;

  LossConfig<S> loss_cfg{S(cfg.margin)};

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    opt.epoch = epoch;
    opt.learning_rate = S(lr_schedule(cfg.learning_rate, epoch));
    const std::int64_t interval = cache_interval_at_epoch(cfg.recompute_interval, epoch);

    std::vector<std::size_t> order(tuples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng order_rng(derive_seed(cfg.seed, "train_order/" + std::to_string(epoch)));
    order_rng.shuffle(order);

    double epoch_loss = 0.0;
    ParamGrads<S> grads = ParamGrads<S>::zero(enc.params.k(), enc.params.d());
    int batch_tuples = 0;

    for (std::size_t step = 0; step < order.size(); ++step) {
      if (cache.queries_since_rebuild >= interval) {
        rebuild_cache(cache, ds, train_idx, enc, cfg.workers);
      }
      const TrainingTuple& tuple = tuples[order[step]];
      const auto mined = mine_negatives(tuple, cache, mining, cfg.mining_pool_size,
                                        cfg.mining_keep, mining_rng);
      ++cache.queries_since_rebuild;

      // fresh forward passes: the argmin over positives sits inside the loss
      const std::size_t q_idx = ds.index_of(tuple.query_id);
      auto [q_repr, q_cache] =
          netvlad_forward(enc.preprocess(tuple.query_id, ds.descriptors[q_idx]), enc.params);

      std::vector<VectorX<S>> pos_reprs, neg_reprs;
      std::vector<ForwardCache<S>> pos_caches, neg_caches;
      for (const ImageId pid : tuple.positive_ids) {
        auto [repr, fwd] = netvlad_forward(
            enc.preprocess(pid, ds.descriptors[ds.index_of(pid)]), enc.params);
        pos_reprs.push_back(std::move(repr));
        pos_caches.push_back(std::move(fwd));
      }
      for (const ImageId nid : mined) {
        auto [repr, fwd] = netvlad_forward(
            enc.preprocess(nid, ds.descriptors[ds.index_of(nid)]), enc.params);
        neg_reprs.push_back(std::move(repr));
        neg_caches.push_back(std::move(fwd));
      }

      const auto loss_res = weak_triplet_loss(q_repr, pos_reprs, neg_reprs, loss_cfg);
      if (!std::isfinite(static_cast<double>(loss_res.loss))) {
        result.stop_reason = "diverged at epoch " + std::to_string(epoch);
        result.epochs_run = epoch;
        result.cache_rebuilds = cache.rebuilds;
        return result;
      }
      epoch_loss += static_cast<double>(loss_res.loss);
      ++batch_tuples;

      if (loss_res.active_negatives > 0) {
        grads.accumulate(netvlad_backward(q_cache, loss_res.grad_query));
        grads.accumulate(netvlad_backward(pos_caches[loss_res.best_positive_index],
                                          loss_res.grad_positives[loss_res.best_positive_index]));
        for (std::size_t j = 0; j < neg_caches.size(); ++j) {
          if (loss_res.grad_negatives[j].squaredNorm() > S(0)) {
            grads.accumulate(netvlad_backward(neg_caches[j], loss_res.grad_negatives[j]));
          }
        }
      }

      if (hooks.on_tuple) {
        TupleTrace<S> trace{tuple.query_id, mined, loss_res.loss, &enc.params};
        hooks.on_tuple(trace);
      }

      if (batch_tuples == cfg.batch_size || step + 1 == order.size()) {
        grads.scale(S(1) / S(batch_tuples));
        sgd_step(enc.params, grads, opt);
        grads = ParamGrads<S>::zero(enc.params.k(), enc.params.d());
        batch_tuples = 0;
      }
    }

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.lr = lr_schedule(cfg.learning_rate, epoch);
    metrics.mean_loss = epoch_loss / double(tuples.size());
    metrics.recall_ns = cfg.recall_ns;
    const auto val_report =
        evaluate(ds, Split::Val, enc, static_cast<const WhiteningTransform<S>*>(nullptr), val_opts);
    metrics.recall = val_report.curve.recall;
    metrics.cache_rebuilds = cache.rebuilds;
    metrics.tuples = static_cast<int>(tuples.size());
    result.metrics_lines.push_back(metrics.to_json_line());

    const double recall5 = val_report.curve.at(5);
    if (recall5 > result.best_recall5) {
      result.best_recall5 = recall5;
      result.best_epoch = epoch;
      result.best_params = enc.params;
    }
    result.epochs_run = epoch + 1;

    if (hooks.on_epoch) hooks.on_epoch(epoch, enc.params, metrics);
  }

  result.cache_rebuilds = cache.rebuilds;
  result.stop_reason = "completed";
  return result;
}

}  // namespace netvlad
