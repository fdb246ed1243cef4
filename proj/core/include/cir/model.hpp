#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "cir/dataset.hpp"
#include "cir/tensor.hpp"

namespace cir {

struct ModelDims {
  std::uint32_t vocab_size = kDefaultVocabSize;
  std::size_t token_dim = 32;
  std::size_t image_dim = 64;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 32;

  /// The dedicated begin-of-sequence index; the token table has V + 1 rows.
  std::uint32_t bos() const noexcept { return vocab_size; }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

inline constexpr double kDefaultTau = 0.07;
inline constexpr std::size_t kNumParamTensors = 11;

// All trainable tensors. Weights are stored input-major (in x out) so that an
// affine map is y_j = b_j + sum_i x_i W(i, j).
struct ParamTensors {
  Tensor tok_embed;  // (V + 1) x d_t
  Tensor txt_w;      // d_t x d
  Tensor txt_b;      // 1 x d
  Tensor img_w;      // d_img x d
  Tensor img_b;      // 1 x d
  Tensor comp_w;     // 2d x d
  Tensor comp_b;     // 1 x d
  Tensor dec_w;      // (d + d_t) x h
  Tensor dec_b;      // 1 x h
  Tensor out_w;      // h x V
  Tensor out_b;      // 1 x V

  std::array<Tensor*, kNumParamTensors> tensors();
  std::array<const Tensor*, kNumParamTensors> tensors() const;

  static const std::array<std::string_view, kNumParamTensors>& names();

  friend bool operator==(const ParamTensors&, const ParamTensors&) = default;
};

/// Zero tensors with the shapes implied by dims.
ParamTensors zero_tensors(const ModelDims& dims);

struct ParamSet {
  ModelDims dims;
  ParamTensors w;
  /// Fixed softmax temperature for the contrastive loss.
  double tau = kDefaultTau;

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

/// Throws kInvariantViolation on shape mismatch, non-finite values or tau <= 0.
void validate(const ParamSet& p);

ParamSet zero_params(const ModelDims& dims, double tau = kDefaultTau);

/// Uniform [-0.1, 0.1] from seed, rounded to f32 so checkpoints are exact.
ParamSet init_params(const ModelDims& dims, std::uint64_t seed,
                     double tau = kDefaultTau);

using Vec = std::vector<double>;

/// tanh(W_txt^T mean(E_tok[toks]) + b_txt)
Vec encode_text(const ParamSet& p, std::span<const std::uint32_t> toks);

/// tanh(W_img^T img + b_img); the shared image-side projection.
Vec project_image(const ParamSet& p, std::span<const float> img);

/// tanh(W_c^T [project_image(img), txt] + b_c)
Vec compose_query(const ParamSet& p, std::span<const float> img,
                  std::span<const double> txt);

/// Next-token logits given the query and the previous token (or BOS).
Vec decode_step(const ParamSet& p, std::span<const double> q,
                std::uint32_t prev_token);

/// Argmax decoding with ties to the lowest index; stops after emitting EOS
/// (which is included) or at max_len tokens.
TokenSeq greedy_decode(const ParamSet& p, std::span<const double> q,
                       std::size_t max_len);

// One stage-2 training item.
struct CirExample {
  std::vector<float> reference;
  TokenSeq modification;
  std::vector<float> target;
  /// Supervision text tokens; EOS is appended by the forward pass.
  TokenSeq supervision;
};

// Cached activations of one item's forward pass.
struct ItemTrace {
  Vec pooled;    // d_t, mean token embedding of the modification
  Vec txt;       // d
  Vec img_proj;  // d
  Vec query;     // d
  Vec tgt_proj;  // d
  TokenSeq dec_inputs;   // BOS, y_1 ... y_T
  TokenSeq dec_targets;  // y_1 ... y_T, EOS
  Tensor hidden;         // positions x h
  Tensor logits;         // positions x V
};

struct ForwardTrace {
  std::vector<ItemTrace> items;
};

struct BatchForward {
  Tensor queries;  // N x d
  Tensor targets;  // N x d
  ForwardTrace trace;
};

/// Teacher-forced forward pass over a batch. Row j of queries is
/// compose_query of item j; row j of targets is project_image of its target.
BatchForward forward_batch(const ParamSet& p,
                           std::span<const CirExample> batch);

/// Teacher-forced decoder inputs/targets for a supervision sequence.
std::pair<TokenSeq, TokenSeq> teacher_forcing(const ModelDims& dims,
                                              std::span<const std::uint32_t> y);

}  // namespace cir
