#include "cir/model.hpp"

#include <cmath>

#include "cir/error.hpp"
#include "kernels.hpp"
#include "cir/rng.hpp"

namespace cir {
namespace {

// out_j = b_j + sum_i x_i W(i, j), accumulated in a fixed order.
template <typename X>
void affine(std::span<const X> x, const Tensor& w, const Tensor& b,
            std::span<double> out) {
  for (std::size_t j = 0; j < w.cols; ++j) out[j] = b.data[j];
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double xi = static_cast<double>(x[i]);
    if (xi == 0.0) continue;
    const double* wr = &w.data[i * w.cols];
    for (std::size_t j = 0; j < w.cols; ++j) out[j] += xi * wr[j];
  }
}

void tanh_inplace(std::span<double> v) {
  for (auto& x : v) x = std::tanh(x);
}

void check_text_tokens(const ModelDims& dims,
                       std::span<const std::uint32_t> toks) {
  if (toks.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty token sequence");
  }
  for (auto t : toks) {
    if (t >= dims.vocab_size) {
      throw Error(ErrorCode::kInvalidArgument,
                  "token " + std::to_string(t) + " outside vocabulary");
    }
  }
}

Vec pool_tokens(const ParamSet& p, std::span<const std::uint32_t> toks) {
  Vec pooled(p.dims.token_dim, 0.0);
  for (auto t : toks) {
    const auto row = p.w.tok_embed.row(t);
    for (std::size_t k = 0; k < pooled.size(); ++k) pooled[k] += row[k];
  }
  const double inv = 1.0 / static_cast<double>(toks.size());
  for (auto& x : pooled) x *= inv;
  return pooled;
}

Vec text_from_pooled(const ParamSet& p, const Vec& pooled) {
  Vec out(p.dims.embed_dim);
  affine<double>(pooled, p.w.txt_w, p.w.txt_b, out);
  tanh_inplace(out);
  return out;
}

Vec compose_from_parts(const ParamSet& p, const Vec& img_proj,
                       std::span<const double> txt) {
  Vec cat(img_proj);
  cat.insert(cat.end(), txt.begin(), txt.end());
  Vec out(p.dims.embed_dim);
  affine<double>(cat, p.w.comp_w, p.w.comp_b, out);
  tanh_inplace(out);
  return out;
}

void check_prev_token(const ModelDims& dims, std::uint32_t prev) {
  if (prev > dims.bos()) {
    throw Error(ErrorCode::kInvalidArgument,
                "previous token " + std::to_string(prev) +
                    " outside [0, V] (V is BOS)");
  }
}

// Hidden state and logits of one decoder step.
void decoder_step(const ParamSet& p, std::span<const double> q,
                  std::uint32_t prev, std::span<double> hidden,
                  std::span<double> logits) {
  const auto& d = p.dims;
  Vec x(d.embed_dim + d.token_dim);
  std::copy(q.begin(), q.end(), x.begin());
  const auto emb = p.w.tok_embed.row(prev);
  std::copy(emb.begin(), emb.end(),
            x.begin() + static_cast<std::ptrdiff_t>(d.embed_dim));
  affine<double>(x, p.w.dec_w, p.w.dec_b, hidden);
  tanh_inplace(hidden);
  std::copy(p.w.out_b.data.begin(), p.w.out_b.data.end(), logits.begin());
  kernels::gemm_add(hidden.data(), 1, d.hidden_dim, p.w.out_w.data.data(),
                    d.vocab_size, logits.data());
}

}  // namespace

std::array<Tensor*, kNumParamTensors> ParamTensors::tensors() {
  return {&tok_embed, &txt_w, &txt_b,  &img_w, &img_b, &comp_w,
          &comp_b,    &dec_w, &dec_b, &out_w, &out_b};
}

std::array<const Tensor*, kNumParamTensors> ParamTensors::tensors() const {
  return {&tok_embed, &txt_w, &txt_b,  &img_w, &img_b, &comp_w,
          &comp_b,    &dec_w, &dec_b, &out_w, &out_b};
}

const std::array<std::string_view, kNumParamTensors>& ParamTensors::names() {
  static const std::array<std::string_view, kNumParamTensors> kNames = {
      "tok_embed", "txt_w", "txt_b", "img_w", "img_b", "comp_w",
      "comp_b",    "dec_w", "dec_b", "out_w", "out_b"};
  return kNames;
}

ParamTensors zero_tensors(const ModelDims& d) {
  if (d.vocab_size < 2 || d.token_dim == 0 || d.image_dim == 0 ||
      d.embed_dim == 0 || d.hidden_dim == 0) {
    throw Error(ErrorCode::kInvalidArgument, "model dims must be positive");
  }
  ParamTensors t;
  t.tok_embed = Tensor(d.vocab_size + 1, d.token_dim);
  t.txt_w = Tensor(d.token_dim, d.embed_dim);
  t.txt_b = Tensor(1, d.embed_dim);
  t.img_w = Tensor(d.image_dim, d.embed_dim);
  t.img_b = Tensor(1, d.embed_dim);
  t.comp_w = Tensor(2 * d.embed_dim, d.embed_dim);
  t.comp_b = Tensor(1, d.embed_dim);
  t.dec_w = Tensor(d.embed_dim + d.token_dim, d.hidden_dim);
  t.dec_b = Tensor(1, d.hidden_dim);
  t.out_w = Tensor(d.hidden_dim, d.vocab_size);
  t.out_b = Tensor(1, d.vocab_size);
  return t;
}

void validate(const ParamSet& p) {
  if (!(p.tau > 0.0) || !std::isfinite(p.tau)) {
    throw Error(ErrorCode::kInvariantViolation, "tau must be positive");
  }
  const ParamTensors expected = zero_tensors(p.dims);
  const auto have = p.w.tensors();
  const auto want = expected.tensors();
  for (std::size_t i = 0; i < kNumParamTensors; ++i) {
    if (!have[i]->same_shape(*want[i]) ||
        have[i]->data.size() != want[i]->data.size()) {
      throw Error(ErrorCode::kInvariantViolation,
                  "parameter " + std::string(ParamTensors::names()[i]) +
                      " has the wrong shape");
    }
    for (double v : have[i]->data) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::kInvariantViolation,
                    "parameter " + std::string(ParamTensors::names()[i]) +
                        " holds a non-finite value");
      }
    }
  }
}

ParamSet zero_params(const ModelDims& dims, double tau) {
  ParamSet p{dims, zero_tensors(dims), tau};
  validate(p);
  return p;
}

ParamSet init_params(const ModelDims& dims, std::uint64_t seed, double tau) {
  ParamSet p = zero_params(dims, tau);
  Rng rng(seed);
  for (Tensor* t : p.w.tensors()) {
    for (auto& v : t->data) {
      v = static_cast<double>(static_cast<float>(rng.uniform(-0.1, 0.1)));
    }
  }
  return p;
}

Vec encode_text(const ParamSet& p, std::span<const std::uint32_t> toks) {
  check_text_tokens(p.dims, toks);
  return text_from_pooled(p, pool_tokens(p, toks));
}

Vec project_image(const ParamSet& p, std::span<const float> img) {
  if (img.size() != p.dims.image_dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "image vector has " + std::to_string(img.size()) +
                    " dims, model expects " + std::to_string(p.dims.image_dim));
  }
  Vec out(p.dims.embed_dim);
  affine<float>(img, p.w.img_w, p.w.img_b, out);
  tanh_inplace(out);
  return out;
}

Vec compose_query(const ParamSet& p, std::span<const float> img,
                  std::span<const double> txt) {
  if (txt.size() != p.dims.embed_dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "text vector has " + std::to_string(txt.size()) +
                    " dims, model expects " + std::to_string(p.dims.embed_dim));
  }
  return compose_from_parts(p, project_image(p, img), txt);
}

Vec decode_step(const ParamSet& p, std::span<const double> q,
                std::uint32_t prev_token) {
  if (q.size() != p.dims.embed_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "query has the wrong size");
  }
  check_prev_token(p.dims, prev_token);
  Vec hidden(p.dims.hidden_dim);
  Vec logits(p.dims.vocab_size);
  decoder_step(p, q, prev_token, hidden, logits);
  return logits;
}

TokenSeq greedy_decode(const ParamSet& p, std::span<const double> q,
                       std::size_t max_len) {
  if (max_len == 0) {
    throw Error(ErrorCode::kInvalidArgument, "max_len must be >= 1");
  }
  TokenSeq out;
  std::uint32_t prev = p.dims.bos();
  while (out.size() < max_len) {
    const Vec logits = decode_step(p, q, prev);
    std::uint32_t best = 0;
    for (std::uint32_t v = 1; v < logits.size(); ++v) {
      if (logits[v] > logits[best]) best = v;
    }
    out.push_back(best);
    if (best == kEosToken) break;
    prev = best;
  }
  return out;
}

std::pair<TokenSeq, TokenSeq> teacher_forcing(
    const ModelDims& dims, std::span<const std::uint32_t> y) {
  TokenSeq inputs{dims.bos()};
  inputs.insert(inputs.end(), y.begin(), y.end());
  TokenSeq targets(y.begin(), y.end());
  targets.push_back(kEosToken);
  return {std::move(inputs), std::move(targets)};
}

BatchForward forward_batch(const ParamSet& p,
                           std::span<const CirExample> batch) {
  if (batch.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty batch");
  }
  const auto& d = p.dims;
  BatchForward out;
  out.queries = Tensor(batch.size(), d.embed_dim);
  out.targets = Tensor(batch.size(), d.embed_dim);
  out.trace.items.resize(batch.size());

  for (std::size_t n = 0; n < batch.size(); ++n) {
    const CirExample& ex = batch[n];
    ItemTrace& tr = out.trace.items[n];
    check_text_tokens(d, ex.modification);
    for (auto t : ex.supervision) {
      if (t >= d.vocab_size) {
        throw Error(ErrorCode::kInvalidArgument,
                    "supervision token outside vocabulary");
      }
    }
    tr.pooled = pool_tokens(p, ex.modification);
    tr.txt = text_from_pooled(p, tr.pooled);
    tr.img_proj = project_image(p, ex.reference);
    tr.query = compose_from_parts(p, tr.img_proj, tr.txt);
    tr.tgt_proj = project_image(p, ex.target);
    std::copy(tr.query.begin(), tr.query.end(), out.queries.row(n).begin());
    std::copy(tr.tgt_proj.begin(), tr.tgt_proj.end(),
              out.targets.row(n).begin());

    auto [inputs, targets] = teacher_forcing(d, ex.supervision);
    tr.dec_inputs = std::move(inputs);
    tr.dec_targets = std::move(targets);
    tr.hidden = Tensor(tr.dec_inputs.size(), d.hidden_dim);
    tr.logits = Tensor(tr.dec_inputs.size(), d.vocab_size);
    Vec x(d.embed_dim + d.token_dim);
    std::copy(tr.query.begin(), tr.query.end(), x.begin());
    for (std::size_t t = 0; t < tr.dec_inputs.size(); ++t) {
      const auto emb = p.w.tok_embed.row(tr.dec_inputs[t]);
      std::copy(emb.begin(), emb.end(),
                x.begin() + static_cast<std::ptrdiff_t>(d.embed_dim));
      affine<double>(x, p.w.dec_w, p.w.dec_b, tr.hidden.row(t));
      tanh_inplace(tr.hidden.row(t));
      std::copy(p.w.out_b.data.begin(), p.w.out_b.data.end(),
                tr.logits.row(t).begin());
    }
    kernels::gemm_add(tr.hidden.data.data(), tr.hidden.rows, d.hidden_dim,
                      p.w.out_w.data.data(), d.vocab_size,
                      tr.logits.data.data());
  }
  return out;
}

}  // namespace cir
