// Command-line front end: gen-data, train, eval, gradcheck, export.
// Exit codes: 0 success, 1 failed verification, 2 invalid input, 3 runtime failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "netvlad/checkpoint.hpp"
#include "netvlad/config.hpp"
#include "netvlad/dataset_io.hpp"
#include "netvlad/encoder.hpp"
#include "netvlad/eval.hpp"
#include "netvlad/geodata.hpp"
#include "netvlad/gradcheck.hpp"
#include "netvlad/trainer.hpp"

namespace fs = std::filesystem;
using namespace netvlad;

namespace {

int workers_from_env() {
  if (const char* v = std::getenv("NETVLAD_WORKERS")) {
    const int n = std::atoi(v);
    if (n >= 1) return n;
  }
  return 1;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeError("cannot write '" + path.string() + "'");
  out << text;
}

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string precision;  // "", "single", "double"
};

RunConfig resolve_config(const CommonArgs& args, bool config_required) {
  RunConfig rc;
  if (!args.config_path.empty()) {
    rc = load_run_config(args.config_path);
  } else if (config_required) {
    throw ValidationError("--config is required for this command");
  }
  if (args.seed) rc.seed = *args.seed;
  if (args.precision == "single") {
    rc.double_precision = false;
  } else if (args.precision == "double") {
    rc.double_precision = true;
  } else if (!args.precision.empty()) {
    throw ValidationError("--precision must be 'single' or 'double'");
  }
  finalize(rc);
  return rc;
}

int cmd_gen_data(const CommonArgs& args, const std::string& out_dir) {
  RunConfig rc = resolve_config(args, true);
  const Dataset ds = generate_world(rc.world);
  save_dataset(out_dir, ds);
  std::cout << "dataset: " << out_dir << "\n"
            << "images: " << ds.size() << "\n"
            << "hash: " << hex64(dataset_content_hash(ds)) << "\n";
  return 0;
}

template <class S>
int run_train(const RunConfig& rc, const std::string& data_dir, const std::string& out_dir) {
  const Dataset ds = load_dataset(data_dir);
  TrainConfig cfg = rc.train;
  cfg.seed = rc.seed;
  cfg.normalize_descriptors =
      rc.normalize_descriptors.value_or(default_descriptor_normalization(Pooling::NetVlad));
  cfg.workers = workers_from_env();

  fs::create_directories(out_dir);
  const std::string sample_hash_placeholder;  // filled after training below

  TrainHooks<S> hooks;
  std::uint64_t sample_hash = 0;
  std::vector<std::pair<int, NetVladParams<S>>> pending;  // epoch checkpoints
  hooks.on_epoch = [&](int epoch, const NetVladParams<S>& params, const EpochMetrics&) {
    pending.emplace_back(epoch, params);
  };

  const TrainResult<S> res = train<S>(ds, cfg, hooks);
  sample_hash = res.init_sample_hash;

  CheckpointMeta meta;
  meta.seed = rc.seed;
  meta.init_sample_hash = hex64(sample_hash);
  meta.pooling = "netvlad";
  meta.normalize_descriptors = cfg.normalize_descriptors;

  meta.alpha = static_cast<double>(res.init_params.alpha);
  save_params(fs::path(out_dir) / "init.nvck", res.init_params, meta);
  for (const auto& [epoch, params] : pending) {
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%03d.nvck", epoch);
    save_params(fs::path(out_dir) / name, params, meta);
  }
  save_params(fs::path(out_dir) / "best.nvck", res.best_params, meta);

  std::string log;
  for (const auto& line : res.metrics_lines) log += line + "\n";
  write_text(fs::path(out_dir) / "metrics.jsonl", log);

  std::cout << "epochs: " << res.epochs_run << "\n"
            << "best_epoch: " << res.best_epoch << "\n"
            << "best_val_recall_at_5: " << res.best_recall5 << "\n"
            << "cache_rebuilds: " << res.cache_rebuilds << "\n"
            << "status: " << res.stop_reason << "\n";
  if (res.stop_reason != "completed") {
    std::cerr << "training aborted (" << res.stop_reason
              << "); last good checkpoint kept at best.nvck\n";
    return 3;
  }
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_dir, const std::string& out_dir) {
  RunConfig rc = resolve_config(args, true);
  if (rc.pooling != "netvlad") {
    throw ValidationError("train: only the netvlad encoder has trainable parameters; "
                          "max/sum/vlad are evaluation-time baselines");
  }
  return rc.double_precision ? run_train<double>(rc, data_dir, out_dir)
                             : run_train<float>(rc, data_dir, out_dir);
}

template <class S>
Json report_to_json(const EvalReport<S>& report, const EvalOptions& opts,
                    const std::string& split, const std::string& pooling) {
  Json j;
  j["split"] = split;
  j["pooling"] = pooling;
  j["query_count"] = report.curve.query_count;
  j["n_values"] = report.curve.n_values;
  j["recall"] = report.curve.recall;
  j["distance_threshold_m"] = opts.distance_threshold_m;
  j["nms_radius_m"] = opts.nms_radius_m;
  j["whiten_dim"] = opts.whiten_dim;
  Json queries = Json::array();
  for (const auto& q : report.queries) {
    Json e;
    e["id"] = q.query_id;
    e["correct_at"] = q.correct_at;
    Json top = Json::array();
    for (std::size_t r = 0; r < q.top.size(); ++r) {
      Json item;
      item["id"] = q.top[r].id;
      item["distance"] = static_cast<double>(q.top[r].distance);
      item["match"] = static_cast<bool>(q.top_is_match[r]);
      top.push_back(std::move(item));
    }
    e["top"] = std::move(top);
    queries.push_back(std::move(e));
  }
  j["queries"] = std::move(queries);
  return j;
}

std::string curve_to_csv(const RecallCurve& curve) {
  std::string csv = "n,recall\n";
  char buf[64];
  for (std::size_t i = 0; i < curve.n_values.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g\n", curve.n_values[i], curve.recall[i]);
    csv += buf;
  }
  return csv;
}

template <class S>
int run_eval(const RunConfig& rc, const std::string& data_dir, const std::string& checkpoint,
             const std::string& out_dir, const std::string& split_name,
             const std::string& pooling_flag) {
  const Dataset ds = load_dataset(data_dir);
  const Split split = split_from_string(split_name);

  Encoder<S> enc;
  std::string pooling_name = pooling_flag.empty() ? rc.pooling : pooling_flag;
  CheckpointMeta meta;
  if (!checkpoint.empty()) {
    enc.params = load_params<S>(checkpoint, &meta);
    if (pooling_flag.empty() && rc.pooling == "netvlad") pooling_name = meta.pooling;
  }
  enc.pooling = pooling_from_string(pooling_name);
  if ((enc.pooling == Pooling::NetVlad || enc.pooling == Pooling::VladHard) && checkpoint.empty()) {
    throw ValidationError("eval: pooling '" + pooling_name + "' needs --checkpoint");
  }
  enc.normalize_input = rc.normalize_descriptors.value_or(
      checkpoint.empty() ? default_descriptor_normalization(enc.pooling)
                         : meta.normalize_descriptors);

  EvalOptions opts = rc.eval;
  opts.workers = workers_from_env();

  fs::create_directories(out_dir);

  WhiteningTransform<S> transform;
  const WhiteningTransform<S>* wt = nullptr;
  if (opts.whiten_dim > 0) {
    const auto train_idx = ds.indices_of(Split::Train);
    if (train_idx.empty()) {
      throw ValidationError("eval: whitening requested but the dataset has no train split");
    }
    const auto reprs = encode_images(ds, train_idx, enc, opts.workers);
    MatrixX<S> mat(reprs.size(), reprs[0].size());
    for (std::size_t i = 0; i < reprs.size(); ++i) mat.row(i) = reprs[i].transpose();
    transform = fit_whitening(mat, opts.whiten_dim);
    save_whitening(fs::path(out_dir) / "whitening.nvwt", transform,
                   hex64(dataset_content_hash(ds)));
    wt = &transform;
  }

  const EvalReport<S> report = evaluate(ds, split, enc, wt, opts);
  write_text(fs::path(out_dir) / "report.json",
             report_to_json(report, opts, split_name, pooling_name).dump(2) + "\n");
  write_text(fs::path(out_dir) / "curve.csv", curve_to_csv(report.curve));

  for (std::size_t i = 0; i < report.curve.n_values.size(); ++i) {
    std::cout << "recall@" << report.curve.n_values[i] << ": " << report.curve.recall[i] << "\n";
  }
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& data_dir, const std::string& checkpoint,
             const std::string& out_dir, const std::string& split_name,
             const std::string& pooling_flag, int whiten_dim, double nms_radius) {
  RunConfig rc = resolve_config(args, false);
  if (whiten_dim >= 0) rc.eval.whiten_dim = whiten_dim;
  if (nms_radius >= 0) rc.eval.nms_radius_m = nms_radius;
  return rc.double_precision
             ? run_eval<double>(rc, data_dir, checkpoint, out_dir, split_name, pooling_flag)
             : run_eval<float>(rc, data_dir, checkpoint, out_dir, split_name, pooling_flag);
}

int cmd_gradcheck(std::uint64_t seed, int instances) {
  GradCheckConfig cfg;
  cfg.seed = seed;
  cfg.instances = instances;
  const GradCheckReport report = run_gradcheck(cfg);
  std::cout << report.summary();
  std::cout << (report.passed() ? "gradcheck: PASS\n" : "gradcheck: FAIL\n");
  return report.passed() ? 0 : 1;
}

int cmd_export(const std::string& checkpoint, const std::string& format, const std::string& out) {
  CheckpointMeta meta;
  // keep the stored precision: peek at the header first
  std::ifstream in(checkpoint, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint '" + checkpoint + "'");
  char header[13];
  in.read(header, 13);
  if (in.gcount() != 13) throw ValidationError("'" + checkpoint + "' is truncated");
  const int stored = header[12];
  in.close();

  if (format == "binary") {
    if (stored == 8) {
      const auto params = load_params<double>(checkpoint, &meta);
      save_params(out, params, meta);
    } else {
      const auto params = load_params<float>(checkpoint, &meta);
      save_params(out, params, meta);
    }
  } else if (format == "json") {
    const auto params = load_params<double>(checkpoint, &meta);
    Json j;
    j["k"] = params.k();
    j["d"] = params.d();
    j["alpha"] = meta.alpha;
    j["normalize_descriptors"] = meta.normalize_descriptors;
    auto matrix_json = [](const MatrixX<double>& m) {
      Json rows = Json::array();
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
      }
      return rows;
    };
    j["w"] = matrix_json(params.w);
    j["b"] = std::vector<double>(params.b.data(), params.b.data() + params.b.size());
    j["c"] = matrix_json(params.c);
    write_text(out, j.dump(2) + "\n");
  } else {
    throw ValidationError("export: format must be 'binary' or 'json'");
  }
  std::cout << "exported " << checkpoint << " -> " << out << " (" << format << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NetVLAD pooling, weakly supervised training and place-recognition "
               "evaluation on dense descriptor maps"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string data_dir, out_path, checkpoint, split_name = "test", pooling_flag, format = "binary";
  int whiten_dim = -1, instances = 20;
  double nms_radius = -1;
  std::uint64_t gc_seed = 2024;

  auto add_common = [&](CLI::App* cmd, bool with_precision) {
    cmd->add_option("--config", common.config_path, "JSON run configuration");
    cmd->add_option("--seed", common.seed, "master seed override");
    if (with_precision) {
      cmd->add_option("--precision", common.precision, "single or double");
    }
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic geotagged dataset");
  add_common(gen, false);
  gen->add_option("--out", out_path, "output dataset directory")->required();

  auto* tr = app.add_subcommand("train", "train the NetVLAD layer on a dataset");
  add_common(tr, true);
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", out_path, "checkpoint/metrics output directory")->required();

  auto* ev = app.add_subcommand("eval", "retrieval evaluation with recall@N");
  add_common(ev, true);
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--checkpoint", checkpoint, "parameter checkpoint (.nvck)");
  ev->add_option("--out", out_path, "report output directory")->required();
  ev->add_option("--split", split_name, "train, val or test (default test)");
  ev->add_option("--pooling", pooling_flag, "netvlad, vlad, max or sum");
  ev->add_option("--whiten", whiten_dim, "PCA-whitening output dimension (0 = off)");
  ev->add_option("--nms", nms_radius, "spatial NMS radius in meters (0 = off)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc->add_option("--seed", gc_seed, "suite seed");
  gc->add_option("--instances", instances, "random instances to draw");

  auto* ex = app.add_subcommand("export", "re-emit a checkpoint container");
  ex->add_option("--checkpoint", checkpoint, "input checkpoint")->required();
  ex->add_option("--format", format, "binary or json (default binary)");
  ex->add_option("--out", out_path, "output file")->required();

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen_data(common, out_path);
    if (tr->parsed()) return cmd_train(common, data_dir, out_path);
    if (ev->parsed()) {
      return cmd_eval(common, data_dir, checkpoint, out_path, split_name, pooling_flag,
                      whiten_dim, nms_radius);
    }
    if (gc->parsed()) return cmd_gradcheck(gc_seed, instances);
    if (ex->parsed()) return cmd_export(checkpoint, format, out_path);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
