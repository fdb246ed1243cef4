#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cir/dataset.hpp"
#include "cir/model.hpp"

namespace cir {

enum class AnnotationMode { kFull, kFast };

std::string_view to_string(AnnotationMode mode);
AnnotationMode parse_annotation_mode(std::string_view s);

enum class OptimizerKind { kSgd, kAdam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view s);

struct TrainConfig {
  int stage = 2;
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double lambda_txt = 1.0;
  double lambda_info = 1.0;
  double tau = kDefaultTau;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  /// SGD only.
  double momentum = 0.0;
  /// Adam only.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  AnnotationMode annotation_mode = AnnotationMode::kFull;

  static TrainConfig stage1_defaults();
  static TrainConfig stage2_defaults();
};

/// Throws kInvalidArgument when a field is out of its documented range.
void validate(const TrainConfig& c);

using GradientSet = ParamTensors;

struct InfoNceResult {
  double loss = 0.0;
  Tensor d_queries;
  Tensor d_targets;
};

/// In-batch InfoNCE over cosine similarities with temperature tau. Gradients
/// are exact, including the normalization.
InfoNceResult info_nce(const Tensor& queries, const Tensor& targets,
                       double tau);

struct CrossEntropyResult {
  double loss = 0.0;
  /// Same shapes as the input logit sequences.
  std::vector<Tensor> d_logits;
};

/// Mean over every position of -log softmax(logits)[target].
CrossEntropyResult cross_entropy_seq(
    std::span<const Tensor> logit_seqs,
    std::span<const std::vector<std::uint32_t>> target_seqs);

constexpr double combined_loss(double l_txt, double l_info, double lambda_txt,
                               double lambda_info) {
  return lambda_txt * l_txt + lambda_info * l_info;
}

struct LossBreakdown {
  double l_txt = 0.0;
  double l_info = 0.0;
  double combined = 0.0;
};

struct BackwardResult {
  LossBreakdown loss;
  GradientSet grads;
};

/// Gradient of lambda_txt * CE + lambda_info * InfoNCE with respect to every
/// parameter, from a trace produced by forward_batch on the same batch.
BackwardResult backward(const ParamSet& p, const BatchForward& fwd,
                        std::span<const CirExample> batch,
                        const TrainConfig& config);

/// forward_batch followed by backward.
BackwardResult loss_and_gradients(const ParamSet& p,
                                  std::span<const CirExample> batch,
                                  const TrainConfig& config);

LossBreakdown batch_loss(const ParamSet& p, std::span<const CirExample> batch,
                         const TrainConfig& config);

// Stage-1 batch: tokenized (premise, positive) pairs.
struct TextPair {
  TokenSeq premise;
  TokenSeq positive;
};

/// InfoNCE between premise and positive encodings. Only tok_embed, txt_w and
/// txt_b receive gradient.
BackwardResult stage1_loss_and_gradients(const ParamSet& p,
                                         std::span<const TextPair> batch);

/// Central differences of an arbitrary scalar function of a parameter vector.
std::vector<double> finite_diff(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double epsilon);

/// Central-difference gradient of the combined stage-2 loss.
GradientSet finite_diff_grad(const ParamSet& p,
                             std::span<const CirExample> batch,
                             const TrainConfig& config, double epsilon);

GradientSet finite_diff_grad_stage1(const ParamSet& p,
                                    std::span<const TextPair> batch,
                                    double epsilon);

/// theta - lr * g, rounded to f32 precision. tau is untouched.
ParamSet sgd_step(const ParamSet& p, const GradientSet& g, double lr);

struct AdamState {
  GradientSet m;
  GradientSet v;
  std::size_t step = 0;
};

AdamState make_adam_state(const ModelDims& dims);

/// Bias-corrected Adam update, rounded to f32 precision like sgd_step.
ParamSet adam_step(const ParamSet& p, const GradientSet& g, AdamState& state,
                   const TrainConfig& config);

struct LossRecord {
  int stage = 0;
  std::size_t epoch = 0;
  std::size_t step = 0;
  LossBreakdown loss;
};

using LossCallback = std::function<void(const LossRecord&)>;

ParamSet train_stage1(const ParamSet& init, std::span<const NliPair> pairs,
                      const TrainConfig& config,
                      const LossCallback& on_step = {});

/// Fresh-initialized stage-1 run on a synthetic world.
ParamSet train_stage1(const SynthWorld& world, const ModelDims& dims,
                      const TrainConfig& config,
                      const LossCallback& on_step = {});

/// Builds stage-2 items from triplets that have an accepted annotation.
/// Supervision text is caption + reasoning + conclusion in full mode and the
/// conclusion alone in fast mode.
std::vector<CirExample> build_examples(const EmbeddingMatrix& gallery,
                                       std::span<const Triplet> triplets,
                                       std::span<const CoTAnnotation> accepted,
                                       AnnotationMode mode,
                                       std::uint32_t vocab_size);

std::string supervision_text(const CoTAnnotation& a, AnnotationMode mode);

ParamSet train_stage2(const ParamSet& init, std::span<const CirExample> examples,
                      const TrainConfig& config,
                      const LossCallback& on_step = {});

ParamSet train_stage2(const EmbeddingMatrix& gallery,
                      std::span<const Triplet> triplets,
                      std::span<const CoTAnnotation> accepted,
                      const ParamSet& init, const TrainConfig& config,
                      const LossCallback& on_step = {});

inline constexpr std::uint8_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t seed = 0;
  int stage = 0;
};

void save_checkpoint(const ParamSet& p, const std::filesystem::path& path,
                     const CheckpointMeta& meta = {});
ParamSet load_checkpoint(const std::filesystem::path& path,
                         CheckpointMeta* meta = nullptr);

}  // namespace cir
