#pragma once

#include <cstddef>
#include <cstdint>

#include "cir/dataset.hpp"
#include "cir/evaluation.hpp"
#include "cir/model.hpp"
#include "cir/trainer.hpp"

namespace cir {

// Synthetic world -> mock annotation -> filter -> stage 1 -> stage 2 -> eval.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  SynthOptions world;
  std::size_t n_test = 100;
  std::size_t n_judges = 3;
  ModelDims dims;
  bool run_stage1 = true;
  /// When false, stage 2 sees no annotation text and lambda_txt is forced
  /// to 0, leaving InfoNCE as the only objective.
  bool cot_supervision = true;
  TrainConfig stage1 = TrainConfig::stage1_defaults();
  TrainConfig stage2 = TrainConfig::stage2_defaults();
  EvalOptions eval;
};

struct ExperimentResult {
  EvalReport report;
  std::size_t annotated = 0;
  std::size_t accepted = 0;
  ParamSet params;
};

/// Every seed inside config is replaced by config.seed so that one number
/// pins the whole run.
ExperimentResult run_experiment(ExperimentConfig config);

}  // namespace cir
