#pragma once

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include "netvlad/eval.hpp"
#include "netvlad/geodata.hpp"
#include "netvlad/trainer.hpp"

namespace netvlad {

using Json = nlohmann::ordered_json;

// JSON object reader that rejects unknown keys: every key must be consumed
// before finish().
class StrictObject {
 public:
  StrictObject(const Json& j, std::string context);

  bool has(const std::string& key) const;
  const Json& require(const std::string& key);
  const Json* optional(const std::string& key);
  void finish();
  const std::string& context() const { return context_; }

 private:
  const Json& json_;
  std::string context_;
  std::set<std::string> consumed_;
};

double as_double(const Json& j, const std::string& context);
std::int64_t as_int(const Json& j, const std::string& context);
std::uint64_t as_u64(const Json& j, const std::string& context);
bool as_bool(const Json& j, const std::string& context);
std::string as_string(const Json& j, const std::string& context);

Json world_config_to_json(const WorldConfig& cfg);
WorldConfig world_config_from_json(const Json& j, const std::string& context);

Json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j, const std::string& context);

Json eval_options_to_json(const EvalOptions& opts);
EvalOptions eval_options_from_json(const Json& j, const std::string& context);

// One config file drives a whole run; all randomness flows from `seed`.
struct RunConfig {
  std::uint64_t seed = 17;
  bool double_precision = false;
  std::string pooling = "netvlad";
  // absent -> per-pooling default (normalize for VLAD-family, raw for Max/Sum)
  std::optional<bool> normalize_descriptors;
  WorldConfig world;
  TrainConfig train;
  EvalOptions eval;
};

RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);
Json run_config_to_json(const RunConfig& cfg);

// seed/precision/normalization pushed down into the sub-configs
void finalize(RunConfig& cfg);

}  // namespace netvlad
