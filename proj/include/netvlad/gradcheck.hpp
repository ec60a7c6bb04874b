#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "netvlad/common.hpp"
#include "netvlad/loss.hpp"
#include "netvlad/pooling.hpp"
#include "netvlad/rng.hpp"

// Central finite differences against the analytic backward pass. The oracle
// side only ever calls forward evaluations, so it stays independent of the
// code it checks. Always runs in double.

namespace netvlad {

struct GradCheckConfig {
  int instances = 20;
  double step = 1e-5;
  double tolerance = 1e-6;
  double margin = 0.1;
  std::uint64_t seed = 2024;
};

struct GradCheckReport {
  std::map<std::string, double> max_rel_error;  // target -> worst over instances
  int instances = 0;
  double tolerance = 1e-6;
  double seconds = 0;

  bool passed() const {
    for (const auto& [name, err] : max_rel_error) {
      if (!(err < tolerance)) return false;
    }
    return !max_rel_error.empty();
  }

  std::string summary() const {
    std::string out;
    char buf[160];
    for (const auto& [name, err] : max_rel_error) {
      std::snprintf(buf, sizeof(buf), "%-12s max rel err %.3e  %s\n", name.c_str(), err,
                    err < tolerance ? "ok" : "FAIL");
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), "%d instances, tolerance %.1e, %.2f s\n", instances,
                  tolerance, seconds);
    out += buf;
    return out;
  }
};

namespace gradcheck_detail {

// relative error with a floor absorbing finite-difference noise on
// near-zero components
inline double rel_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) / scale;
}

inline MatrixX<double> random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double s) {
  MatrixX<double> m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = s * rng.normal();
  }
  return m;
}

inline VectorX<double> random_vector(Rng& rng, Eigen::Index n, double s) {
  VectorX<double> v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = s * rng.normal();
  return v;
}

struct Instance {
  DescriptorMap<double> map;
  NetVladParams<double> params;
};

// keep the instance away from the zero-norm kinks of both normalizations
inline Instance make_instance(Rng& rng, Eigen::Index n, Eigen::Index k, Eigen::Index d) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    Instance inst;
    inst.map.image_id = 0;
    inst.map.descriptors = random_matrix(rng, n, d, 0.7);
    inst.params.w = random_matrix(rng, k, d, 0.8);
    inst.params.b = random_vector(rng, k, 0.3);
    inst.params.c = random_matrix(rng, k, d, 0.7);
    const auto cache = netvlad_forward(inst.map, inst.params).second;
    if (cache.intra_norms.minCoeff() > 1e-2 && cache.final_norm > 1e-2) return inst;
  }
  throw RuntimeError("gradcheck: could not draw a well-conditioned instance");
}

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

inline void track(std::map<std::string, double>& worst, const std::string& key, double v) {
  auto it = worst.find(key);
  if (it == worst.end()) {
    worst[key] = v;
  } else if (v > it->second) {
    it->second = v;
  }
}

}  // namespace gradcheck_detail

// gradients of g . netvlad_forward(x; w,b,c) for a random fixed g
inline void gradcheck_forward_instance(Rng& rng, const GradCheckConfig& cfg,
                                       std::map<std::string, double>& worst) {
  using namespace gradcheck_detail;
  const auto n = static_cast<Eigen::Index>(3 + rng.uniform_index(6));  // 3..8
  const auto k = static_cast<Eigen::Index>(2 + rng.uniform_index(4));  // 2..5
  const auto d = static_cast<Eigen::Index>(3 + rng.uniform_index(4));  // 3..6
  Instance inst = make_instance(rng, n, k, d);
  const VectorX<double> g = random_vector(rng, k * d, 1.0);

  auto [y, cache] = netvlad_forward(inst.map, inst.params);
  const auto analytic = netvlad_backward(cache, g);
  auto eval = [&]() { return g.dot(netvlad_forward(inst.map, inst.params).first); };

  for (Eigen::Index r = 0; r < k; ++r) {
    for (Eigen::Index j = 0; j < d; ++j) {
      track(worst, "forward.w",
            rel_error(analytic.w(r, j), central_diff(inst.params.w(r, j), cfg.step, eval)));
      track(worst, "forward.c",
            rel_error(analytic.c(r, j), central_diff(inst.params.c(r, j), cfg.step, eval)));
    }
    track(worst, "forward.b",
          rel_error(analytic.b(r), central_diff(inst.params.b(r), cfg.step, eval)));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      track(worst, "forward.x",
            rel_error(analytic.x(i, j),
                      central_diff(inst.map.descriptors(i, j), cfg.step, eval)));
    }
  }
}

// gradients of the weakly supervised loss through the encoder, for a tuple
// of images sharing one parameter set
inline void gradcheck_loss_instance(Rng& rng, const GradCheckConfig& cfg,
                                    std::map<std::string, double>& worst) {
  using namespace gradcheck_detail;
  const auto k = static_cast<Eigen::Index>(2 + rng.uniform_index(3));
  const auto d = static_cast<Eigen::Index>(3 + rng.uniform_index(3));
  const auto n = static_cast<Eigen::Index>(3 + rng.uniform_index(4));
  const std::size_t n_pos = 1 + rng.uniform_index(3);
  const std::size_t n_neg = 2 + rng.uniform_index(3);
  const LossConfig<double> loss_cfg{cfg.margin};

  NetVladParams<double> params;
  DescriptorMap<double> query;
  std::vector<DescriptorMap<double>> positives, negatives;

  // hinge arguments and the positive argmin must stay clear of their kinks
  // so the finite differences sample a smooth region
  bool found = false;
  for (int attempt = 0; attempt < 500 && !found; ++attempt) {
    Instance base = make_instance(rng, n, k, d);
    params = base.params;
    query = base.map;
    positives.clear();
    negatives.clear();
    for (std::size_t i = 0; i < n_pos; ++i) {
      positives.push_back({1, query.descriptors + random_matrix(rng, n, d, 0.15)});
    }
    for (std::size_t j = 0; j < n_neg; ++j) {
      negatives.push_back({2, random_matrix(rng, n, d, 0.7)});
    }

    const VectorX<double> qy = netvlad_forward(query, params).first;
    std::vector<double> pos_d, neg_d;
    for (const auto& p : positives) {
      pos_d.push_back((netvlad_forward(p, params).first - qy).squaredNorm());
    }
    for (const auto& nm : negatives) {
      neg_d.push_back((netvlad_forward(nm, params).first - qy).squaredNorm());
    }
    const double dp = *std::min_element(pos_d.begin(), pos_d.end());
    bool ok = true;
    int active = 0;
    for (const double dn : neg_d) {
      const double arg = dp + cfg.margin - dn;
      if (std::abs(arg) < 1e-3) ok = false;
      if (arg > 0) ++active;
    }
    std::sort(pos_d.begin(), pos_d.end());
    for (std::size_t i = 1; i < pos_d.size(); ++i) {
      if (pos_d[i] - pos_d[i - 1] < 1e-3) ok = false;
    }
    for (const auto& m : positives) {
      const auto c = netvlad_forward(m, params).second;
      if (c.intra_norms.minCoeff() <= 1e-2 || c.final_norm <= 1e-2) ok = false;
    }
    for (const auto& m : negatives) {
      const auto c = netvlad_forward(m, params).second;
      if (c.intra_norms.minCoeff() <= 1e-2 || c.final_norm <= 1e-2) ok = false;
    }
    found = ok && active >= 1;
  }
  if (!found) throw RuntimeError("gradcheck: could not draw a well-conditioned tuple");

  auto tuple_loss = [&]() {
    auto [qy, qc] = netvlad_forward(query, params);
    std::vector<VectorX<double>> ps, ns;
    for (const auto& p : positives) ps.push_back(netvlad_forward(p, params).first);
    for (const auto& nm : negatives) ns.push_back(netvlad_forward(nm, params).first);
    return weak_triplet_loss(qy, ps, ns, loss_cfg);
  };

  // analytic: accumulate each involved image's backward pass
  MatrixX<double> gw = MatrixX<double>::Zero(k, d);
  VectorX<double> gb = VectorX<double>::Zero(k);
  MatrixX<double> gc = MatrixX<double>::Zero(k, d);
  MatrixX<double> gx_query;
  {
    auto [qy, qc] = netvlad_forward(query, params);
    std::vector<VectorX<double>> ps, ns;
    std::vector<ForwardCache<double>> pcs, ncs;
    for (const auto& p : positives) {
      auto [r, c] = netvlad_forward(p, params);
      ps.push_back(r);
      pcs.push_back(c);
    }
    for (const auto& nm : negatives) {
      auto [r, c] = netvlad_forward(nm, params);
      ns.push_back(r);
      ncs.push_back(c);
    }
    const auto res = weak_triplet_loss(qy, ps, ns, loss_cfg);
    auto add = [&](const ForwardCache<double>& c, const VectorX<double>& g) {
      const auto grads = netvlad_backward(c, g);
      gw += grads.w;
      gb += grads.b;
      gc += grads.c;
      return grads;
    };
    gx_query = add(qc, res.grad_query).x;
    add(pcs[res.best_positive_index], res.grad_positives[res.best_positive_index]);
    for (std::size_t j = 0; j < ncs.size(); ++j) {
      if (res.grad_negatives[j].squaredNorm() > 0) add(ncs[j], res.grad_negatives[j]);
    }
  }

  auto eval = [&]() { return tuple_loss().loss; };
  for (Eigen::Index r = 0; r < k; ++r) {
    for (Eigen::Index j = 0; j < d; ++j) {
      track(worst, "loss.w", rel_error(gw(r, j), central_diff(params.w(r, j), cfg.step, eval)));
      track(worst, "loss.c", rel_error(gc(r, j), central_diff(params.c(r, j), cfg.step, eval)));
    }
    track(worst, "loss.b", rel_error(gb(r), central_diff(params.b(r), cfg.step, eval)));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      track(worst, "loss.x",
            rel_error(gx_query(i, j), central_diff(query.descriptors(i, j), cfg.step, eval)));
    }
  }
}

inline GradCheckReport run_gradcheck(const GradCheckConfig& cfg = {}) {
  if (cfg.instances < 1) throw ValidationError("gradcheck: instances must be >= 1");
  GradCheckReport report;
  report.instances = cfg.instances;
  report.tolerance = cfg.tolerance;
  Rng rng(derive_seed(cfg.seed, "gradcheck"));
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < cfg.instances; ++i) {
    gradcheck_forward_instance(rng, cfg, report.max_rel_error);
    gradcheck_loss_instance(rng, cfg, report.max_rel_error);
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace netvlad
