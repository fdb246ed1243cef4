#include "cir/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "cir/error.hpp"
#include "cir/hash.hpp"
#include "kernels.hpp"

namespace cir {
namespace {

void check_rows_nonzero(const Tensor& m, const char* what) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    double sq = 0.0;
    for (double x : m.row(r)) sq += x * x;
    if (!(sq > 0.0)) {
      throw Error(ErrorCode::kDegenerateInput,
                  std::string(what) + " row " + std::to_string(r) +
                      " is zero; cosine is undefined");
    }
  }
}

// Row-normalized copy plus the original row norms.
std::pair<Tensor, std::vector<double>> normalize_rows(const Tensor& m) {
  Tensor out = m;
  std::vector<double> norms(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) {
    double sq = 0.0;
    for (double x : m.row(r)) sq += x * x;
    norms[r] = std::sqrt(sq);
    for (double& x : out.row(r)) x /= norms[r];
  }
  return {std::move(out), std::move(norms)};
}

// Gradient through x / |x| given the normalized vector and the norm.
void unnormalize_grad(std::span<const double> unit, double norm,
                      std::span<const double> d_unit, std::span<double> out) {
  double proj = 0.0;
  for (std::size_t i = 0; i < unit.size(); ++i) proj += unit[i] * d_unit[i];
  for (std::size_t i = 0; i < unit.size(); ++i) {
    out[i] = (d_unit[i] - unit[i] * proj) / norm;
  }
}

// dW(i, j) += x_i * g_j; db += g; returns W g (gradient w.r.t. x).
template <typename X>
Vec affine_backward(std::span<const X> x, std::span<const double> g,
                    const Tensor& w, Tensor& dw, Tensor& db,
                    bool need_dx = true) {
  const std::size_t cols = w.cols;
  const double* gp = g.data();
  double* dbp = db.data.data();
  for (std::size_t j = 0; j < cols; ++j) dbp[j] += gp[j];
  Vec dx(need_dx ? w.rows : 0, 0.0);
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double xi = static_cast<double>(x[i]);
    double* __restrict dwr = &dw.data[i * cols];
    if (xi != 0.0) {
      for (std::size_t j = 0; j < cols; ++j) dwr[j] += xi * gp[j];
    }
    if (need_dx) dx[i] = kernels::dot(&w.data[i * cols], gp, cols);
  }
  return dx;
}

// g * (1 - y^2) for y = tanh(.)
Vec tanh_backward(std::span<const double> y, std::span<const double> g) {
  Vec out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = g[i] * (1.0 - y[i] * y[i]);
  return out;
}

void add_pooled_grad(const ParamSet& p, std::span<const std::uint32_t> toks,
                     std::span<const double> d_pooled, GradientSet& g) {
  const double inv = 1.0 / static_cast<double>(toks.size());
  for (auto t : toks) {
    auto row = g.tok_embed.row(t);
    for (std::size_t k = 0; k < p.dims.token_dim; ++k) {
      row[k] += d_pooled[k] * inv;
    }
  }
}

// Text-encoder backward from d(text vector) into tok_embed / txt_w / txt_b.
void text_backward(const ParamSet& p, std::span<const std::uint32_t> toks,
                   const Vec& pooled, const Vec& txt,
                   std::span<const double> d_txt, GradientSet& g) {
  const Vec d_pre = tanh_backward(txt, d_txt);
  const Vec d_pooled =
      affine_backward<double>(pooled, d_pre, p.w.txt_w, g.txt_w, g.txt_b);
  add_pooled_grad(p, toks, d_pooled, g);
}

struct EncodedText {
  Vec pooled;
  Vec txt;
};

EncodedText encode_with_cache(const ParamSet& p,
                              std::span<const std::uint32_t> toks) {
  EncodedText e;
  e.pooled.assign(p.dims.token_dim, 0.0);
  if (toks.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty token sequence");
  }
  for (auto t : toks) {
    if (t >= p.dims.vocab_size) {
      throw Error(ErrorCode::kInvalidArgument, "token outside vocabulary");
    }
    const auto row = p.w.tok_embed.row(t);
    for (std::size_t k = 0; k < e.pooled.size(); ++k) e.pooled[k] += row[k];
  }
  const double inv = 1.0 / static_cast<double>(toks.size());
  for (auto& x : e.pooled) x *= inv;
  e.txt.assign(p.dims.embed_dim, 0.0);
  for (std::size_t j = 0; j < e.txt.size(); ++j) e.txt[j] = p.w.txt_b.data[j];
  for (std::size_t i = 0; i < e.pooled.size(); ++i) {
    for (std::size_t j = 0; j < e.txt.size(); ++j) {
      e.txt[j] += e.pooled[i] * p.w.txt_w(i, j);
    }
  }
  for (auto& x : e.txt) x = std::tanh(x);
  return e;
}

void check_same_shapes(const ParamTensors& a, const ParamTensors& b) {
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  for (std::size_t i = 0; i < kNumParamTensors; ++i) {
    if (!ta[i]->same_shape(*tb[i])) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "gradient shape mismatch for " +
                      std::string(ParamTensors::names()[i]));
    }
  }
}

void add_scaled(GradientSet& acc, const GradientSet& g, double scale) {
  auto ta = acc.tensors();
  const auto tg = g.tensors();
  for (std::size_t i = 0; i < kNumParamTensors; ++i) {
    for (std::size_t k = 0; k < ta[i]->data.size(); ++k) {
      ta[i]->data[k] = scale * ta[i]->data[k] + tg[i]->data[k];
    }
  }
}

// Holds whichever optimizer state the config asks for.
class Stepper {
 public:
  Stepper(const ModelDims& dims, const TrainConfig& config)
      : config_(config) {
    if (config.optimizer == OptimizerKind::kAdam) {
      adam_ = make_adam_state(dims);
    } else if (config.momentum > 0.0) {
      velocity_ = zero_tensors(dims);
    }
  }

  ParamSet step(const ParamSet& p, const GradientSet& g) {
    if (config_.optimizer == OptimizerKind::kAdam) {
      return adam_step(p, g, adam_, config_);
    }
    if (config_.momentum > 0.0) {
      add_scaled(velocity_, g, config_.momentum);
      return sgd_step(p, velocity_, config_.learning_rate);
    }
    return sgd_step(p, g, config_.learning_rate);
  }

 private:
  const TrainConfig& config_;
  AdamState adam_;
  GradientSet velocity_;
};

std::uint64_t epoch_seed(std::uint64_t seed, int stage, std::size_t epoch) {
  return mix64(seed ^ mix64(static_cast<std::uint64_t>(stage) << 32 | epoch));
}

}  // namespace

std::string_view to_string(AnnotationMode mode) {
  return mode == AnnotationMode::kFull ? "full" : "fast";
}

AnnotationMode parse_annotation_mode(std::string_view s) {
  if (s == "full") return AnnotationMode::kFull;
  if (s == "fast") return AnnotationMode::kFast;
  throw Error(ErrorCode::kInvalidArgument,
              "annotation mode must be full or fast, got '" + std::string(s) +
                  "'");
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw Error(ErrorCode::kInvalidArgument,
              "optimizer must be sgd or adam, got '" + std::string(s) + "'");
}

TrainConfig TrainConfig::stage1_defaults() {
  TrainConfig c;
  c.stage = 1;
  c.epochs = 10;
  return c;
}

TrainConfig TrainConfig::stage2_defaults() {
  TrainConfig c;
  c.stage = 2;
  c.epochs = 10;
  return c;
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kInvalidArgument, "train config: " + what);
  };
  if (c.stage != 1 && c.stage != 2) fail("stage must be 1 or 2");
  if (!(c.learning_rate > 0.0)) fail("learning_rate must be positive");
  if (c.batch_size == 0) fail("batch_size must be positive");
  if (!(c.lambda_txt >= 0.0) || !(c.lambda_info >= 0.0)) {
    fail("loss weights must be non-negative");
  }
  if (!(c.tau > 0.0)) fail("tau must be positive");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) fail("momentum in [0, 1)");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0)) {
    fail("Adam betas in [0, 1)");
  }
  if (!(c.adam_epsilon > 0.0)) fail("adam_epsilon must be positive");
}

InfoNceResult info_nce(const Tensor& queries, const Tensor& targets,
                       double tau) {
  if (queries.rows == 0) {
    throw Error(ErrorCode::kInvalidArgument, "InfoNCE needs N >= 1");
  }
  if (!queries.same_shape(targets)) {
    throw Error(ErrorCode::kDimensionMismatch, "query/target shape mismatch");
  }
  if (!(tau > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "tau must be positive");
  }
  check_rows_nonzero(queries, "query");
  check_rows_nonzero(targets, "target");

  const std::size_t n = queries.rows;
  const std::size_t d = queries.cols;
  const auto [qn, qnorm] = normalize_rows(queries);
  const auto [tn, tnorm] = normalize_rows(targets);

  Tensor logits(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += qn(j, i) * tn(k, i);
      logits(j, k) = dot / tau;
    }
  }

  InfoNceResult res;
  Tensor g(n, n);  // dL / dlogits
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto row = logits.row(j);
    const double m = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double s : row) sum += std::exp(s - m);
    res.loss += std::max(0.0, m + std::log(sum) - row[j]);
    for (std::size_t k = 0; k < n; ++k) {
      g(j, k) = (std::exp(row[k] - m) / sum - (j == k ? 1.0 : 0.0)) * inv_n;
    }
  }
  res.loss *= inv_n;

  res.d_queries = Tensor(n, d);
  res.d_targets = Tensor(n, d);
  Vec d_unit(d);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(d_unit.begin(), d_unit.end(), 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      const double c = g(j, k) / tau;
      for (std::size_t i = 0; i < d; ++i) d_unit[i] += c * tn(k, i);
    }
    unnormalize_grad(qn.row(j), qnorm[j], d_unit, res.d_queries.row(j));
  }
  for (std::size_t k = 0; k < n; ++k) {
    std::fill(d_unit.begin(), d_unit.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double c = g(j, k) / tau;
      for (std::size_t i = 0; i < d; ++i) d_unit[i] += c * qn(j, i);
    }
    unnormalize_grad(tn.row(k), tnorm[k], d_unit, res.d_targets.row(k));
  }
  return res;
}

namespace {

CrossEntropyResult cross_entropy_core(
    std::span<const Tensor* const> logit_seqs,
    std::span<const std::vector<std::uint32_t>* const> target_seqs) {
  if (logit_seqs.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "cross entropy of empty batch");
  }
  if (logit_seqs.size() != target_seqs.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "logit and target batch sizes differ");
  }
  std::size_t positions = 0;
  for (std::size_t n = 0; n < logit_seqs.size(); ++n) {
    const Tensor& lg = *logit_seqs[n];
    const auto& ys = *target_seqs[n];
    if (lg.rows != ys.size()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "item " + std::to_string(n) + ": " +
                      std::to_string(lg.rows) + " logit rows vs " +
                      std::to_string(ys.size()) + " targets");
    }
    for (auto t : ys) {
      if (t >= lg.cols) {
        throw Error(ErrorCode::kInvalidArgument, "target outside vocabulary");
      }
    }
    positions += ys.size();
  }
  if (positions == 0) {
    throw Error(ErrorCode::kInvalidArgument, "cross entropy over 0 positions");
  }

  CrossEntropyResult res;
  res.d_logits.reserve(logit_seqs.size());
  const double inv = 1.0 / static_cast<double>(positions);
  for (std::size_t n = 0; n < logit_seqs.size(); ++n) {
    const Tensor& lg = *logit_seqs[n];
    Tensor& dl = res.d_logits.emplace_back(lg.rows, lg.cols);
    for (std::size_t t = 0; t < lg.rows; ++t) {
      const auto row = lg.row(t);
      auto drow = dl.row(t);
      const double m = *std::max_element(row.begin(), row.end());
      double sum = 0.0;
      for (std::size_t v = 0; v < row.size(); ++v) {
        drow[v] = std::exp(row[v] - m);
        sum += drow[v];
      }
      const std::uint32_t y = (*target_seqs[n])[t];
      res.loss += m + std::log(sum) - row[y];
      const double scale = inv / sum;
      for (auto& x : drow) x *= scale;
      drow[y] -= inv;
    }
  }
  res.loss *= inv;
  return res;
}

CrossEntropyResult trace_cross_entropy(const ForwardTrace& trace) {
  std::vector<const Tensor*> logits;
  std::vector<const std::vector<std::uint32_t>*> targets;
  for (const auto& it : trace.items) {
    logits.push_back(&it.logits);
    targets.push_back(&it.dec_targets);
  }
  return cross_entropy_core(logits, targets);
}

}  // namespace

CrossEntropyResult cross_entropy_seq(
    std::span<const Tensor> logit_seqs,
    std::span<const std::vector<std::uint32_t>> target_seqs) {
  std::vector<const Tensor*> logits;
  std::vector<const std::vector<std::uint32_t>*> targets;
  for (const auto& t : logit_seqs) logits.push_back(&t);
  for (const auto& t : target_seqs) targets.push_back(&t);
  return cross_entropy_core(logits, targets);
}

BackwardResult backward(const ParamSet& p, const BatchForward& fwd,
                        std::span<const CirExample> batch,
                        const TrainConfig& config) {
  const auto& items = fwd.trace.items;
  if (items.size() != batch.size() || fwd.queries.rows != batch.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "trace was produced by a different batch");
  }
  for (std::size_t n = 0; n < batch.size(); ++n) {
    if (items[n].dec_targets.size() != batch[n].supervision.size() + 1) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "trace was produced by a different batch");
    }
  }
  const auto& d = p.dims;

  const InfoNceResult nce = info_nce(fwd.queries, fwd.targets, p.tau);
  std::size_t total_positions = 0;
  for (const auto& it : items) {
    if (it.logits.rows != it.dec_targets.size() ||
        it.logits.cols != d.vocab_size) {
      throw Error(ErrorCode::kDimensionMismatch, "malformed decoder trace");
    }
    total_positions += it.dec_targets.size();
  }
  const double inv_positions = 1.0 / static_cast<double>(total_positions);
  double l_txt = 0.0;

  BackwardResult out;
  out.grads = zero_tensors(d);
  GradientSet& g = out.grads;
  Tensor dlog;

  Vec x(d.embed_dim + d.token_dim);
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const ItemTrace& tr = items[n];
    Vec d_query(d.embed_dim);
    for (std::size_t i = 0; i < d.embed_dim; ++i) {
      d_query[i] = config.lambda_info * nce.d_queries(n, i);
    }

    // Softmax cross-entropy; the gradient is only formed when it is used.
    const std::size_t positions = tr.dec_inputs.size();
    const bool text_grad = config.lambda_txt != 0.0;
    if (text_grad) dlog = Tensor(positions, d.vocab_size);
    for (std::size_t t = 0; t < positions; ++t) {
      const auto row = tr.logits.row(t);
      const double m = *std::max_element(row.begin(), row.end());
      double sum = 0.0;
      if (text_grad) {
        auto drow = dlog.row(t);
        for (std::size_t v = 0; v < row.size(); ++v) {
          drow[v] = std::exp(row[v] - m);
          sum += drow[v];
        }
        const double scale = config.lambda_txt * inv_positions / sum;
        for (auto& x : drow) x *= scale;
        drow[tr.dec_targets[t]] -= config.lambda_txt * inv_positions;
      } else {
        for (double z : row) sum += std::exp(z - m);
      }
      l_txt += m + std::log(sum) - row[tr.dec_targets[t]];
    }

    if (text_grad) {
      for (std::size_t t = 0; t < positions; ++t) {
        const auto row = dlog.row(t);
        for (std::size_t v = 0; v < d.vocab_size; ++v) g.out_b.data[v] += row[v];
      }
      kernels::gemm_at_add(tr.hidden.data.data(), positions, d.hidden_dim,
                           dlog.data.data(), d.vocab_size, g.out_w.data.data());
      Tensor d_hid(positions, d.hidden_dim);
      kernels::gemm_bt_add(dlog.data.data(), positions, d.vocab_size,
                           p.w.out_w.data.data(), d.hidden_dim,
                           d_hid.data.data());
      for (std::size_t t = 0; t < positions; ++t) {
        const Vec d_hpre = tanh_backward(tr.hidden.row(t), d_hid.row(t));
        std::copy(tr.query.begin(), tr.query.end(), x.begin());
        const auto emb = p.w.tok_embed.row(tr.dec_inputs[t]);
        std::copy(emb.begin(), emb.end(),
                  x.begin() + static_cast<std::ptrdiff_t>(d.embed_dim));
        const Vec dx =
            affine_backward<double>(x, d_hpre, p.w.dec_w, g.dec_w, g.dec_b);
        for (std::size_t i = 0; i < d.embed_dim; ++i) d_query[i] += dx[i];
        auto erow = g.tok_embed.row(tr.dec_inputs[t]);
        for (std::size_t k = 0; k < d.token_dim; ++k) {
          erow[k] += dx[d.embed_dim + k];
        }
      }
    }

    // Composer.
    Vec cat(tr.img_proj);
    cat.insert(cat.end(), tr.txt.begin(), tr.txt.end());
    const Vec d_cpre = tanh_backward(tr.query, d_query);
    const Vec d_cat =
        affine_backward<double>(cat, d_cpre, p.w.comp_w, g.comp_w, g.comp_b);

    // Reference image projection.
    const std::span<const double> d_img(d_cat.data(), d.embed_dim);
    const Vec d_ipre = tanh_backward(tr.img_proj, d_img);
    affine_backward<float>(batch[n].reference, d_ipre, p.w.img_w, g.img_w,
                           g.img_b, false);

    // Target image projection (shared weights).
    Vec d_tgt(d.embed_dim);
    for (std::size_t i = 0; i < d.embed_dim; ++i) {
      d_tgt[i] = config.lambda_info * nce.d_targets(n, i);
    }
    const Vec d_tpre = tanh_backward(tr.tgt_proj, d_tgt);
    affine_backward<float>(batch[n].target, d_tpre, p.w.img_w, g.img_w,
                           g.img_b, false);

    // Text encoder.
    const std::span<const double> d_txt(d_cat.data() + d.embed_dim,
                                        d.embed_dim);
    text_backward(p, batch[n].modification, tr.pooled, tr.txt, d_txt, g);
  }
  l_txt *= inv_positions;
  out.loss.l_txt = l_txt;
  out.loss.l_info = nce.loss;
  out.loss.combined =
      combined_loss(l_txt, nce.loss, config.lambda_txt, config.lambda_info);
  return out;
}

BackwardResult loss_and_gradients(const ParamSet& p,
                                  std::span<const CirExample> batch,
                                  const TrainConfig& config) {
  const BatchForward fwd = forward_batch(p, batch);
  return backward(p, fwd, batch, config);
}

LossBreakdown batch_loss(const ParamSet& p, std::span<const CirExample> batch,
                         const TrainConfig& config) {
  const BatchForward fwd = forward_batch(p, batch);
  const double l_info = info_nce(fwd.queries, fwd.targets, p.tau).loss;
  const double l_txt = trace_cross_entropy(fwd.trace).loss;
  return {l_txt, l_info,
          combined_loss(l_txt, l_info, config.lambda_txt, config.lambda_info)};
}

BackwardResult stage1_loss_and_gradients(const ParamSet& p,
                                         std::span<const TextPair> batch) {
  if (batch.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty stage-1 batch");
  }
  const std::size_t n = batch.size();
  const std::size_t d = p.dims.embed_dim;
  std::vector<EncodedText> prem, pos;
  Tensor pm(n, d), ps(n, d);
  for (std::size_t j = 0; j < n; ++j) {
    prem.push_back(encode_with_cache(p, batch[j].premise));
    pos.push_back(encode_with_cache(p, batch[j].positive));
    std::copy(prem[j].txt.begin(), prem[j].txt.end(), pm.row(j).begin());
    std::copy(pos[j].txt.begin(), pos[j].txt.end(), ps.row(j).begin());
  }
  const InfoNceResult nce = info_nce(pm, ps, p.tau);

  BackwardResult out;
  out.loss = {0.0, nce.loss, nce.loss};
  out.grads = zero_tensors(p.dims);
  for (std::size_t j = 0; j < n; ++j) {
    text_backward(p, batch[j].premise, prem[j].pooled, prem[j].txt,
                  nce.d_queries.row(j), out.grads);
    text_backward(p, batch[j].positive, pos[j].pooled, pos[j].txt,
                  nce.d_targets.row(j), out.grads);
  }
  return out;
}

std::vector<double> finite_diff(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double epsilon) {
  if (!(epsilon > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "epsilon must be positive");
  }
  std::vector<double> work(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    work[i] = x[i] + epsilon;
    const double up = f(work);
    work[i] = x[i] - epsilon;
    const double down = f(work);
    work[i] = x[i];
    grad[i] = (up - down) / (2.0 * epsilon);
  }
  return grad;
}

namespace {

GradientSet finite_diff_params(
    const ParamSet& p, double epsilon,
    const std::function<double(const ParamSet&)>& loss) {
  if (!(epsilon > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "epsilon must be positive");
  }
  ParamSet work = p;
  GradientSet g = zero_tensors(p.dims);
  auto wt = work.w.tensors();
  auto gt = g.tensors();
  for (std::size_t t = 0; t < kNumParamTensors; ++t) {
    for (std::size_t k = 0; k < wt[t]->data.size(); ++k) {
      const double orig = wt[t]->data[k];
      wt[t]->data[k] = orig + epsilon;
      const double up = loss(work);
      wt[t]->data[k] = orig - epsilon;
      const double down = loss(work);
      wt[t]->data[k] = orig;
      gt[t]->data[k] = (up - down) / (2.0 * epsilon);
    }
  }
  return g;
}

}  // namespace

GradientSet finite_diff_grad(const ParamSet& p,
                             std::span<const CirExample> batch,
                             const TrainConfig& config, double epsilon) {
  return finite_diff_params(p, epsilon, [&](const ParamSet& q) {
    return batch_loss(q, batch, config).combined;
  });
}

GradientSet finite_diff_grad_stage1(const ParamSet& p,
                                    std::span<const TextPair> batch,
                                    double epsilon) {
  return finite_diff_params(p, epsilon, [&](const ParamSet& q) {
    const std::size_t n = batch.size();
    Tensor pm(n, q.dims.embed_dim), ps(n, q.dims.embed_dim);
    for (std::size_t j = 0; j < n; ++j) {
      const Vec a = encode_text(q, batch[j].premise);
      const Vec b = encode_text(q, batch[j].positive);
      std::copy(a.begin(), a.end(), pm.row(j).begin());
      std::copy(b.begin(), b.end(), ps.row(j).begin());
    }
    return info_nce(pm, ps, q.tau).loss;
  });
}

ParamSet sgd_step(const ParamSet& p, const GradientSet& g, double lr) {
  check_same_shapes(p.w, g);
  ParamSet out = p;
  auto pt = out.w.tensors();
  const auto gt = g.tensors();
  for (std::size_t t = 0; t < kNumParamTensors; ++t) {
    auto& data = pt[t]->data;
    for (std::size_t k = 0; k < data.size(); ++k) {
      data[k] = static_cast<double>(
          static_cast<float>(data[k] - lr * gt[t]->data[k]));
    }
  }
  return out;
}

AdamState make_adam_state(const ModelDims& dims) {
  return {zero_tensors(dims), zero_tensors(dims), 0};
}

ParamSet adam_step(const ParamSet& p, const GradientSet& g, AdamState& state,
                   const TrainConfig& config) {
  check_same_shapes(p.w, g);
  check_same_shapes(p.w, state.m);
  check_same_shapes(p.w, state.v);
  ++state.step;
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  ParamSet out = p;
  auto pt = out.w.tensors();
  const auto gt = g.tensors();
  auto mt = state.m.tensors();
  auto vt = state.v.tensors();
  for (std::size_t i = 0; i < kNumParamTensors; ++i) {
    auto& data = pt[i]->data;
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double gk = gt[i]->data[k];
      double& m = mt[i]->data[k];
      double& v = vt[i]->data[k];
      m = b1 * m + (1.0 - b1) * gk;
      v = b2 * v + (1.0 - b2) * gk * gk;
      const double update = config.learning_rate * (m / c1) /
                            (std::sqrt(v / c2) + config.adam_epsilon);
      data[k] = static_cast<double>(static_cast<float>(data[k] - update));
    }
  }
  return out;
}

ParamSet train_stage1(const ParamSet& init, std::span<const NliPair> pairs,
                      const TrainConfig& config, const LossCallback& on_step) {
  validate(config);
  if (config.stage != 1) {
    throw Error(ErrorCode::kInvalidArgument, "train_stage1 needs stage = 1");
  }
  if (pairs.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "no stage-1 text pairs");
  }
  std::vector<TextPair> data;
  data.reserve(pairs.size());
  for (const auto& pr : pairs) {
    TextPair tp{tokenize(pr.premise, init.dims.vocab_size),
                tokenize(pr.positive, init.dims.vocab_size)};
    if (tp.premise.empty() || tp.positive.empty()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "stage-1 pair with empty text: '" + pr.premise + "'");
    }
    data.push_back(std::move(tp));
  }

  ParamSet p = init;
  p.tau = config.tau;
  validate(p);
  Stepper stepper(p.dims, config);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = batch_indices(data.size(), config.batch_size,
                                       epoch_seed(config.seed, 1, epoch));
    for (const auto& idx : batches) {
      std::vector<TextPair> batch;
      batch.reserve(idx.size());
      for (auto i : idx) batch.push_back(data[i]);
      BackwardResult r = stage1_loss_and_gradients(p, batch);
      if (on_step) on_step({1, epoch, step, r.loss});
      p = stepper.step(p, r.grads);
      ++step;
    }
  }
  return p;
}

ParamSet train_stage1(const SynthWorld& world, const ModelDims& dims,
                      const TrainConfig& config, const LossCallback& on_step) {
  return train_stage1(init_params(dims, config.seed, config.tau),
                      world.nli_pairs, config, on_step);
}

std::string supervision_text(const CoTAnnotation& a, AnnotationMode mode) {
  if (mode == AnnotationMode::kFast) return a.conclusion;
  std::string out = a.caption;
  for (const auto& s : a.reasoning_steps) out += " " + s;
  out += " " + a.conclusion;
  return out;
}

std::vector<CirExample> build_examples(const EmbeddingMatrix& gallery,
                                       std::span<const Triplet> triplets,
                                       std::span<const CoTAnnotation> accepted,
                                       AnnotationMode mode,
                                       std::uint32_t vocab_size) {
  std::unordered_map<std::string, const CoTAnnotation*> by_pair;
  for (const auto& a : accepted) {
    if (a.accepted) by_pair.emplace(a.pair_id, &a);
  }
  std::vector<CirExample> out;
  for (const auto& t : triplets) {
    auto it = by_pair.find(t.pair_id);
    if (it == by_pair.end()) continue;
    const auto ref = lookup(gallery, t.reference_id);
    const auto tgt = lookup(gallery, t.target_id);
    CirExample ex;
    ex.reference.assign(ref.begin(), ref.end());
    ex.target.assign(tgt.begin(), tgt.end());
    ex.modification = tokenize(t.modification_text, vocab_size);
    if (ex.modification.empty()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "triplet '" + t.pair_id + "' has no modification tokens");
    }
    ex.supervision = tokenize(supervision_text(*it->second, mode), vocab_size);
    out.push_back(std::move(ex));
  }
  return out;
}

ParamSet train_stage2(const ParamSet& init,
                      std::span<const CirExample> examples,
                      const TrainConfig& config, const LossCallback& on_step) {
  validate(config);
  if (config.stage != 2) {
    throw Error(ErrorCode::kInvalidArgument, "train_stage2 needs stage = 2");
  }
  if (examples.empty()) {
    throw Error(ErrorCode::kInvalidArgument,
                "no triplets with accepted annotations to train on");
  }
  ParamSet p = init;
  p.tau = config.tau;
  validate(p);
  Stepper stepper(p.dims, config);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = batch_indices(examples.size(), config.batch_size,
                                       epoch_seed(config.seed, 2, epoch));
    for (const auto& idx : batches) {
      std::vector<CirExample> batch;
      batch.reserve(idx.size());
      for (auto i : idx) batch.push_back(examples[i]);
      BackwardResult r = loss_and_gradients(p, batch, config);
      if (on_step) on_step({2, epoch, step, r.loss});
      p = stepper.step(p, r.grads);
      ++step;
    }
  }
  return p;
}

ParamSet train_stage2(const EmbeddingMatrix& gallery,
                      std::span<const Triplet> triplets,
                      std::span<const CoTAnnotation> accepted,
                      const ParamSet& init, const TrainConfig& config,
                      const LossCallback& on_step) {
  if (gallery.dims() != init.dims.image_dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "gallery dims " + std::to_string(gallery.dims()) +
                    " != model image_dim " +
                    std::to_string(init.dims.image_dim));
  }
  const auto examples = build_examples(gallery, triplets, accepted,
                                       config.annotation_mode,
                                       init.dims.vocab_size);
  return train_stage2(init, examples, config, on_step);
}

}  // namespace cir
