#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cir/dataset.hpp"
#include "cir/evaluation.hpp"
#include "cir/model.hpp"
#include "cir/trainer.hpp"
#include "json.hpp"

namespace cir::cli {

struct PathConfig {
  std::string embeddings;  // manifest.json or its directory
  std::string triplets;
  std::string nli;
  std::string annotations;
  std::string accepted;
  std::string rejected;
  std::string checkpoint;  // output of train, input of eval
  std::string init_checkpoint;
  std::string loss_log;
  std::string report;
  std::string results;
  std::string out_dir;  // synth
};

struct AnnotationConfig {
  double mean_threshold = 4.0;
  int max_range = 2;
  std::size_t judges = 3;
  bool mock = false;
  std::string generator_url;
  std::vector<std::string> judge_urls;
  int timeout_ms = 30000;
  int retries = 2;
};

struct SynthConfig {
  std::size_t n_items = 200;
  std::size_t n_attrs = 8;
  std::size_t n_triplets = 0;
  std::size_t n_test = 100;
  double noise = 0.05;
  std::size_t subset_size = 6;
};

// Everything a cirtool run can be told. Resolution order: defaults, then
// the --config file, then explicit flags.
struct RunConfig {
  std::uint64_t seed = 0;
  PathConfig paths;
  ModelDims model;
  TrainConfig stage1 = TrainConfig::stage1_defaults();
  TrainConfig stage2 = TrainConfig::stage2_defaults();
  AnnotationConfig annotation;
  EvalOptions eval;
  SynthConfig synth;
};

nlohmann::ordered_json to_json(const RunConfig& c);

/// Overlays the keys present in j onto c. Unknown keys are rejected.
void apply_json(RunConfig& c, const nlohmann::json& j);

/// Throws kInvalidArgument on out-of-range values.
void validate(const RunConfig& c);

}  // namespace cir::cli
