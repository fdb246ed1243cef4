#include "cir/experiment.hpp"

#include <memory>

#include "cir/annotate.hpp"

namespace cir {

ExperimentResult run_experiment(ExperimentConfig config) {
  config.world.seed = config.seed;
  config.world.vocab_size = config.dims.vocab_size;
  config.world.image_dim = config.dims.image_dim;
  config.stage1.seed = config.seed;
  config.stage2.seed = config.seed;

  const SynthWorld world = generate_synthetic_world(config.world);
  const auto [train, test] = split_holdout(world.triplets, config.n_test);

  MockGenerator generator(config.seed);
  std::vector<std::unique_ptr<MockJudge>> owned;
  std::vector<JudgeClient*> judges;
  for (std::size_t j = 0; j < config.n_judges; ++j) {
    owned.push_back(std::make_unique<MockJudge>(config.seed + 1 + j));
    judges.push_back(owned.back().get());
  }
  const AnnotationRun run = annotate_triplets(train, generator, judges);
  const FilterResult filtered = filter_annotations(run.annotations);

  ExperimentResult out;
  out.annotated = run.annotations.size();
  out.accepted = filtered.accepted.size();

  ParamSet p = init_params(config.dims, config.seed, config.stage1.tau);
  if (config.run_stage1) {
    p = train_stage1(p, world.nli_pairs, config.stage1);
  }
  auto examples = build_examples(world.embeddings, train, filtered.accepted,
                                 config.stage2.annotation_mode,
                                 config.dims.vocab_size);
  if (!config.cot_supervision) {
    config.stage2.lambda_txt = 0.0;
    for (auto& e : examples) e.supervision.clear();
  }
  p = train_stage2(p, examples, config.stage2);
  out.report = evaluate_model(p, world.embeddings, test, config.eval).report;
  out.params = std::move(p);
  return out;
}

}  // namespace cir
