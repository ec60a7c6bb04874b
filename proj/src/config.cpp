#include "netvlad/config.hpp"

#include <fstream>

#include "netvlad/encoder.hpp"

namespace netvlad {

StrictObject::StrictObject(const Json& j, std::string context)
    : json_(j), context_(std::move(context)) {
  if (!j.is_object()) {
    throw ValidationError(context_ + ": expected a JSON object");
  }
}

bool StrictObject::has(const std::string& key) const { return json_.contains(key); }

const Json& StrictObject::require(const std::string& key) {
  if (!json_.contains(key)) {
    throw ValidationError(context_ + ": missing required key '" + key + "'");
  }
  consumed_.insert(key);
  return json_.at(key);
}

const Json* StrictObject::optional(const std::string& key) {
  if (!json_.contains(key)) return nullptr;
  consumed_.insert(key);
  return &json_.at(key);
}

void StrictObject::finish() {
  for (const auto& [key, value] : json_.items()) {
    if (!consumed_.count(key)) {
      throw ValidationError(context_ + ": unknown key '" + key + "'");
    }
  }
}

double as_double(const Json& j, const std::string& context) {
  if (!j.is_number()) throw ValidationError(context + ": expected a number");
  return j.get<double>();
}

std::int64_t as_int(const Json& j, const std::string& context) {
  if (!j.is_number_integer()) throw ValidationError(context + ": expected an integer");
  return j.get<std::int64_t>();
}

std::uint64_t as_u64(const Json& j, const std::string& context) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
    throw ValidationError(context + ": expected a nonnegative integer");
  }
  return j.get<std::uint64_t>();
}

bool as_bool(const Json& j, const std::string& context) {
  if (!j.is_boolean()) throw ValidationError(context + ": expected a boolean");
  return j.get<bool>();
}

std::string as_string(const Json& j, const std::string& context) {
  if (!j.is_string()) throw ValidationError(context + ": expected a string");
  return j.get<std::string>();
}

Json world_config_to_json(const WorldConfig& cfg) {
  Json j;
  j["places"] = cfg.places;
  j["conditions"] = cfg.conditions;
  j["images_per_place_per_condition"] = cfg.images_per_place_per_condition;
  j["prototypes_per_place"] = cfg.prototypes_per_place;
  j["landmarks_per_image"] = cfg.landmarks_per_image;
  j["distractors_per_image"] = cfg.distractors_per_image;
  j["descriptor_dim"] = cfg.descriptor_dim;
  j["distractor_pool_size"] = cfg.distractor_pool_size;
  j["distractor_modes"] = cfg.distractor_modes;
  j["distractor_mode_sigma"] = cfg.distractor_mode_sigma;
  j["viewpoint_noise"] = cfg.viewpoint_noise;
  j["condition_shift"] = cfg.condition_shift;
  j["gps_jitter_m"] = cfg.gps_jitter_m;
  j["place_spacing_m"] = cfg.place_spacing_m;
  j["split_fractions"] = {cfg.split_fractions[0], cfg.split_fractions[1],
                          cfg.split_fractions[2]};
  j["train_single_condition"] = cfg.train_single_condition;
  j["seed"] = cfg.seed;
  return j;
}

WorldConfig world_config_from_json(const Json& j, const std::string& context) {
  StrictObject obj(j, context);
  WorldConfig cfg;
  auto get_int = [&](const char* key, int& out) {
    if (const Json* v = obj.optional(key)) out = static_cast<int>(as_int(*v, context + "." + key));
  };
  auto get_double = [&](const char* key, double& out) {
    if (const Json* v = obj.optional(key)) out = as_double(*v, context + "." + key);
  };
  get_int("places", cfg.places);
  get_int("conditions", cfg.conditions);
  get_int("images_per_place_per_condition", cfg.images_per_place_per_condition);
  get_int("prototypes_per_place", cfg.prototypes_per_place);
  get_int("landmarks_per_image", cfg.landmarks_per_image);
  get_int("distractors_per_image", cfg.distractors_per_image);
  get_int("descriptor_dim", cfg.descriptor_dim);
  get_int("distractor_pool_size", cfg.distractor_pool_size);
  get_int("distractor_modes", cfg.distractor_modes);
  get_double("distractor_mode_sigma", cfg.distractor_mode_sigma);
  get_double("viewpoint_noise", cfg.viewpoint_noise);
  get_double("condition_shift", cfg.condition_shift);
  get_double("gps_jitter_m", cfg.gps_jitter_m);
  get_double("place_spacing_m", cfg.place_spacing_m);
  if (const Json* v = obj.optional("split_fractions")) {
    if (!v->is_array() || v->size() != 3) {
      throw ValidationError(context + ".split_fractions: expected an array of 3 numbers");
    }
    for (int i = 0; i < 3; ++i) {
      cfg.split_fractions[i] = as_double((*v)[i], context + ".split_fractions");
    }
  }
  if (const Json* v = obj.optional("train_single_condition")) {
    cfg.train_single_condition = as_bool(*v, context + ".train_single_condition");
  }
  if (const Json* v = obj.optional("seed")) cfg.seed = as_u64(*v, context + ".seed");
  obj.finish();
  return cfg;
}

Json train_config_to_json(const TrainConfig& cfg) {
  Json j;
  j["learning_rate"] = cfg.learning_rate;
  j["margin"] = cfg.margin;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["batch_size"] = cfg.batch_size;
  j["max_epochs"] = cfg.max_epochs;
  j["clusters"] = cfg.clusters;
  j["mining_pool_size"] = cfg.mining_pool_size;
  j["mining_keep"] = cfg.mining_keep;
  j["recompute_interval"] = cfg.recompute_interval;
  j["init_target_ratio"] = cfg.init_target_ratio;
  j["init_sample_max_rows"] = cfg.init_sample_max_rows;
  j["recall_ns"] = cfg.recall_ns;
  return j;
}

TrainConfig train_config_from_json(const Json& j, const std::string& context) {
  StrictObject obj(j, context);
  TrainConfig cfg;
  auto get_int = [&](const char* key, int& out) {
    if (const Json* v = obj.optional(key)) out = static_cast<int>(as_int(*v, context + "." + key));
  };
  auto get_double = [&](const char* key, double& out) {
    if (const Json* v = obj.optional(key)) out = as_double(*v, context + "." + key);
  };
  get_double("learning_rate", cfg.learning_rate);
  get_double("margin", cfg.margin);
  get_double("momentum", cfg.momentum);
  get_double("weight_decay", cfg.weight_decay);
  get_int("batch_size", cfg.batch_size);
  get_int("max_epochs", cfg.max_epochs);
  get_int("clusters", cfg.clusters);
  get_int("mining_pool_size", cfg.mining_pool_size);
  get_int("mining_keep", cfg.mining_keep);
  get_int("recompute_interval", cfg.recompute_interval);
  get_double("init_target_ratio", cfg.init_target_ratio);
  if (const Json* v = obj.optional("init_sample_max_rows")) {
    cfg.init_sample_max_rows = as_int(*v, context + ".init_sample_max_rows");
  }
  if (const Json* v = obj.optional("recall_ns")) {
    if (!v->is_array() || v->empty()) {
      throw ValidationError(context + ".recall_ns: expected a nonempty array");
    }
    cfg.recall_ns.clear();
    for (const auto& n : *v) cfg.recall_ns.push_back(static_cast<int>(as_int(n, context + ".recall_ns")));
  }
  obj.finish();
  return cfg;
}

Json eval_options_to_json(const EvalOptions& opts) {
  Json j;
  j["n_values"] = opts.n_values;
  j["distance_threshold_m"] = opts.distance_threshold_m;
  j["nms_radius_m"] = opts.nms_radius_m;
  j["whiten_dim"] = opts.whiten_dim;
  j["report_top_k"] = opts.report_top_k;
  return j;
}

EvalOptions eval_options_from_json(const Json& j, const std::string& context) {
  StrictObject obj(j, context);
  EvalOptions opts;
  if (const Json* v = obj.optional("n_values")) {
    if (!v->is_array() || v->empty()) {
      throw ValidationError(context + ".n_values: expected a nonempty array");
    }
    opts.n_values.clear();
    for (const auto& n : *v) opts.n_values.push_back(static_cast<int>(as_int(n, context + ".n_values")));
  }
  if (const Json* v = obj.optional("distance_threshold_m")) {
    opts.distance_threshold_m = as_double(*v, context + ".distance_threshold_m");
  }
  if (const Json* v = obj.optional("nms_radius_m")) {
    opts.nms_radius_m = as_double(*v, context + ".nms_radius_m");
  }
  if (const Json* v = obj.optional("whiten_dim")) {
    opts.whiten_dim = static_cast<int>(as_int(*v, context + ".whiten_dim"));
  }
  if (const Json* v = obj.optional("report_top_k")) {
    opts.report_top_k = static_cast<int>(as_int(*v, context + ".report_top_k"));
  }
  obj.finish();
  return opts;
}

RunConfig run_config_from_json(const Json& j) {
  StrictObject obj(j, "config");
  RunConfig cfg;
  if (const Json* v = obj.optional("seed")) cfg.seed = as_u64(*v, "config.seed");
  if (const Json* v = obj.optional("precision")) {
    const std::string p = as_string(*v, "config.precision");
    if (p == "single") {
      cfg.double_precision = false;
    } else if (p == "double") {
      cfg.double_precision = true;
    } else {
      throw ValidationError("config.precision: expected 'single' or 'double', got '" + p + "'");
    }
  }
  if (const Json* v = obj.optional("pooling")) {
    cfg.pooling = as_string(*v, "config.pooling");
    pooling_from_string(cfg.pooling);  // validate early
  }
  if (const Json* v = obj.optional("normalize_descriptors")) {
    cfg.normalize_descriptors = as_bool(*v, "config.normalize_descriptors");
  }
  if (const Json* v = obj.optional("world")) {
    cfg.world = world_config_from_json(*v, "config.world");
  }
  if (const Json* v = obj.optional("train")) {
    cfg.train = train_config_from_json(*v, "config.train");
  }
  if (const Json* v = obj.optional("eval")) {
    cfg.eval = eval_options_from_json(*v, "config.eval");
  }
  obj.finish();
  finalize(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open config file '" + path.string() + "'");
  }
  Json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

Json run_config_to_json(const RunConfig& cfg) {
  Json j;
  j["seed"] = cfg.seed;
  j["precision"] = cfg.double_precision ? "double" : "single";
  j["pooling"] = cfg.pooling;
  if (cfg.normalize_descriptors) j["normalize_descriptors"] = *cfg.normalize_descriptors;
  j["world"] = world_config_to_json(cfg.world);
  j["train"] = train_config_to_json(cfg.train);
  j["eval"] = eval_options_to_json(cfg.eval);
  return j;
}

void finalize(RunConfig& cfg) {
  cfg.world.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.train.normalize_descriptors =
      cfg.normalize_descriptors.value_or(default_descriptor_normalization(pooling_from_string(cfg.pooling)));
}

}  // namespace netvlad
