#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cir/annotate.hpp"
#include "cir/error.hpp"
#include "cir/trainer.hpp"
#include "oracles.hpp"

namespace cir {
namespace {

using testing::random_batch;
using testing::random_params;
using testing::random_tensor;
using testing::small_dims;
using testing::tensor_relative_error;

Tensor rows(std::initializer_list<std::initializer_list<double>> r) {
  Tensor t(r.size(), r.begin()->size());
  std::size_t i = 0;
  for (const auto& row : r) {
    std::copy(row.begin(), row.end(), t.row(i++).begin());
  }
  return t;
}

TEST(InfoNce, HandEvaluatedCases) {
  const Tensor one = rows({{0.3, -1.2, 2.0}});
  EXPECT_NEAR(info_nce(one, rows({{1.0, 0.5, -0.1}}), 0.07).loss, 0.0, 1e-12);

  const Tensor eye = rows({{1, 0}, {0, 1}});
  EXPECT_NEAR(info_nce(eye, eye, 1.0).loss,
              -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-12);
  EXPECT_NEAR(info_nce(eye, eye, 1.0).loss, 0.31326, 1e-5);

  // Every query and target is the same direction: all cosines equal 1.
  Tensor same(4, 3);
  for (std::size_t i = 0; i < 4; ++i) {
    same(i, 0) = 1.0 + static_cast<double>(i);
    same(i, 1) = 2.0 + 2.0 * static_cast<double>(i);
  }
  EXPECT_NEAR(info_nce(same, same, 0.07).loss, std::log(4.0), 1e-9);
}

TEST(InfoNce, Errors) {
  const Tensor good = rows({{1, 0}, {0, 1}});
  EXPECT_THROW(info_nce(Tensor(0, 2), Tensor(0, 2), 1.0), Error);
  EXPECT_THROW(info_nce(good, good, 0.0), Error);
  EXPECT_THROW(info_nce(good, good, -1.0), Error);
  EXPECT_THROW(info_nce(good, rows({{1, 0}, {0, 0}}), 1.0), Error);
  EXPECT_THROW(info_nce(good, rows({{1, 0, 0}, {0, 1, 0}}), 1.0), Error);
}

TEST(InfoNce, MatchesOracleAndIsNonNegative) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(10), d = 1 + rng.below(6);
    const Tensor q = random_tensor(n, d, rng), t = random_tensor(n, d, rng);
    const double tau = rng.uniform(0.05, 2.0);
    const double loss = info_nce(q, t, tau).loss;
    EXPECT_NEAR(loss, testing::oracle_info_nce(q, t, tau), 1e-9);
    EXPECT_GE(loss, 0.0);
  }
}

TEST(InfoNce, PermutationInvariant) {
  Rng rng(2);
  const Tensor q = random_tensor(6, 4, rng), t = random_tensor(6, 4, rng);
  std::vector<std::size_t> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<std::size_t>(perm));
  Tensor qp(6, 4), tp(6, 4);
  for (std::size_t i = 0; i < 6; ++i) {
    std::copy(q.row(perm[i]).begin(), q.row(perm[i]).end(), qp.row(i).begin());
    std::copy(t.row(perm[i]).begin(), t.row(perm[i]).end(), tp.row(i).begin());
  }
  EXPECT_NEAR(info_nce(q, t, 0.1).loss, info_nce(qp, tp, 0.1).loss, 1e-12);
}

TEST(InfoNce, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  const Tensor q = random_tensor(5, 3, rng), t = random_tensor(5, 3, rng);
  const auto r = info_nce(q, t, 0.2);
  const auto dq = finite_diff(
      [&](std::span<const double> x) {
        Tensor m = q;
        std::copy(x.begin(), x.end(), m.data.begin());
        return info_nce(m, t, 0.2).loss;
      },
      q.data, 1e-5);
  const auto dt = finite_diff(
      [&](std::span<const double> x) {
        Tensor m = t;
        std::copy(x.begin(), x.end(), m.data.begin());
        return info_nce(q, m, 0.2).loss;
      },
      t.data, 1e-5);
  Tensor nq(5, 3), nt(5, 3);
  nq.data = dq;
  nt.data = dt;
  EXPECT_LT(tensor_relative_error(r.d_queries, nq), 1e-7);
  EXPECT_LT(tensor_relative_error(r.d_targets, nt), 1e-7);
}

TEST(CrossEntropy, Examples) {
  const std::vector<Tensor> uniform2{Tensor(1, 2)};
  const std::vector<std::vector<std::uint32_t>> t0{{0}};
  EXPECT_NEAR(cross_entropy_seq(uniform2, t0).loss, std::log(2.0), 1e-12);

  const std::vector<Tensor> zeros{Tensor(3, 17), Tensor(2, 17)};
  const std::vector<std::vector<std::uint32_t>> any{{1, 5, 16}, {0, 3}};
  EXPECT_NEAR(cross_entropy_seq(zeros, any).loss, std::log(17.0), 1e-12);
}

TEST(CrossEntropy, MatchesOracleAndGradient) {
  Rng rng(4);
  std::vector<Tensor> logits{random_tensor(3, 7, rng), random_tensor(2, 7, rng)};
  for (auto& l : logits) {
    for (double& x : l.data) x *= 4.0;
  }
  const std::vector<std::vector<std::uint32_t>> targets{{1, 6, 0}, {3, 3}};
  const auto r = cross_entropy_seq(logits, targets);
  EXPECT_NEAR(r.loss, testing::oracle_cross_entropy(logits, targets), 1e-9);
  ASSERT_EQ(r.d_logits.size(), 2u);
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t t = 0; t < targets[s].size(); ++t) {
      double z = 0;
      for (std::size_t v = 0; v < 7; ++v) z += std::exp(logits[s](t, v));
      for (std::size_t v = 0; v < 7; ++v) {
        const double expect =
            (std::exp(logits[s](t, v)) / z - (v == targets[s][t] ? 1.0 : 0.0)) /
            5.0;
        EXPECT_NEAR(r.d_logits[s](t, v), expect, 1e-12);
      }
    }
  }
}

TEST(CrossEntropy, Errors) {
  const std::vector<Tensor> one{Tensor(2, 3)};
  const std::vector<std::vector<std::uint32_t>> short_t{{0}};
  EXPECT_THROW(cross_entropy_seq(one, short_t), Error);
  EXPECT_THROW(cross_entropy_seq(std::vector<Tensor>{},
                                 std::vector<std::vector<std::uint32_t>>{}),
               Error);
  const std::vector<std::vector<std::uint32_t>> out_of_range{{0, 3}};
  EXPECT_THROW(cross_entropy_seq(one, out_of_range), Error);
}

TEST(CombinedLoss, Examples) {
  EXPECT_NEAR(combined_loss(0.5, 0.3, 1.0, 1.0), 0.8, 1e-15);
  EXPECT_EQ(combined_loss(0.7, 0.25, 0.0, 1.0), 0.25);
  EXPECT_EQ(combined_loss(0.0, 0.0, 3.0, 2.0), 0.0);
  static_assert(combined_loss(1.0, 2.0, 2.0, 0.5) == 3.0);
}

TEST(Backward, ShapesMatchParams) {
  Rng rng(5);
  const ParamSet p = random_params(small_dims(), rng);
  const auto batch = random_batch(p.dims, 3, rng);
  const auto r = loss_and_gradients(p, batch, TrainConfig{});
  const auto g = r.grads.tensors();
  const auto w = p.w.tensors();
  for (std::size_t t = 0; t < kNumParamTensors; ++t) {
    EXPECT_TRUE(g[t]->same_shape(*w[t])) << ParamTensors::names()[t];
  }
  const LossBreakdown l = batch_loss(p, batch, TrainConfig{});
  EXPECT_NEAR(r.loss.l_txt, l.l_txt, 1e-12);
  EXPECT_NEAR(r.loss.l_info, l.l_info, 1e-12);
  EXPECT_NEAR(r.loss.combined, l.l_txt + l.l_info, 1e-12);
}

TEST(Backward, MatchesFiniteDifferences) {
  Rng rng(6);
  for (int draw = 0; draw < 3; ++draw) {
    const ParamSet p = random_params(small_dims(), rng);
    const auto batch = random_batch(p.dims, 2 + draw, rng);
    TrainConfig c;
    c.lambda_txt = rng.uniform(0.2, 2.0);
    c.lambda_info = rng.uniform(0.2, 2.0);
    const auto check = testing::check_gradients(p, batch, c, 1e-4);
    EXPECT_LT(check.worst, 1e-4) << check.worst_tensor;
  }
}

TEST(Backward, ZeroTextWeightSilencesDecoder) {
  Rng rng(7);
  const ParamSet p = random_params(small_dims(), rng);
  auto batch = random_batch(p.dims, 4, rng);
  TrainConfig c;
  c.lambda_txt = 0.0;
  const auto g = loss_and_gradients(p, batch, c).grads;
  for (const Tensor* t : {&g.dec_w, &g.dec_b, &g.out_w, &g.out_b}) {
    for (double x : t->data) EXPECT_EQ(x, 0.0);
  }
  // The supervision text no longer matters at all.
  for (auto& e : batch) e.supervision = {1, 2, 3, 4, 5, 6, 7};
  EXPECT_EQ(loss_and_gradients(p, batch, c).grads, g);
}

TEST(Backward, LinearInLambdaTxt) {
  Rng rng(8);
  const ParamSet p = random_params(small_dims(), rng);
  const auto batch = random_batch(p.dims, 3, rng);
  auto grads = [&](double lt) {
    TrainConfig c;
    c.lambda_txt = lt;
    return loss_and_gradients(p, batch, c).grads;
  };
  const auto g0 = grads(0.0), g1 = grads(1.0), g2 = grads(2.0);
  const auto t0 = g0.tensors(), t1 = g1.tensors(), t2 = g2.tensors();
  for (std::size_t t = 0; t < kNumParamTensors; ++t) {
    for (std::size_t k = 0; k < t0[t]->size(); ++k) {
      const double once = t1[t]->data[k] - t0[t]->data[k];
      const double twice = t2[t]->data[k] - t0[t]->data[k];
      EXPECT_NEAR(twice, 2.0 * once, 1e-12 * (1.0 + std::abs(twice)));
    }
  }
}

TEST(Backward, RejectsForeignTrace) {
  Rng rng(9);
  const ParamSet p = random_params(small_dims(), rng);
  const auto a = random_batch(p.dims, 3, rng);
  auto b = a;
  b[0].supervision.push_back(1);
  const BatchForward f = forward_batch(p, a);
  EXPECT_THROW(backward(p, f, b, TrainConfig{}), Error);
  EXPECT_THROW(backward(p, f, std::span(a).first(2), TrainConfig{}), Error);
}

TEST(Stage1Gradients, MatchFiniteDifferencesAndTouchTextOnly) {
  Rng rng(10);
  const ParamSet p = random_params(small_dims(), rng);
  const auto pairs = testing::random_text_pairs(p.dims, 4, rng);
  const auto r = stage1_loss_and_gradients(p, pairs);
  const auto n = finite_diff_grad_stage1(p, pairs, 1e-4);
  EXPECT_LT(tensor_relative_error(r.grads.tok_embed, n.tok_embed), 1e-4);
  EXPECT_LT(tensor_relative_error(r.grads.txt_w, n.txt_w), 1e-4);
  EXPECT_LT(tensor_relative_error(r.grads.txt_b, n.txt_b), 1e-4);
  for (const Tensor* t : {&r.grads.img_w, &r.grads.comp_w, &r.grads.dec_w,
                          &r.grads.out_w}) {
    for (double x : t->data) EXPECT_EQ(x, 0.0);
  }
}

TEST(FiniteDiff, QuadraticAndDeterminism) {
  const auto f = [](std::span<const double> x) { return x[0] * x[0]; };
  const std::vector<double> x{3.0};
  EXPECT_NEAR(finite_diff(f, x, 1e-4)[0], 6.0, 1e-6);
  EXPECT_EQ(finite_diff(f, x, 1e-4), finite_diff(f, x, 1e-4));
  EXPECT_THROW(finite_diff(f, x, 0.0), Error);
}

TEST(SgdStep, Arithmetic) {
  const ModelDims d = small_dims();
  ParamSet p = zero_params(d);
  p.w.txt_b.data[0] = 1.0;
  GradientSet g = zero_tensors(d);
  g.txt_b.data[0] = 0.5;
  EXPECT_NEAR(sgd_step(p, g, 0.1).w.txt_b.data[0], 0.95, 1e-7);
  EXPECT_EQ(sgd_step(p, g, 0.0), p);
  p.tau = 0.3;
  EXPECT_EQ(sgd_step(p, g, 0.1).tau, 0.3);
  GradientSet bad = g;
  bad.out_w = Tensor(1, 1);
  EXPECT_THROW(sgd_step(p, bad, 0.1), Error);
}

TEST(SgdStep, TwoStepsEqualOneSummedStep) {
  Rng rng(11);
  const ParamSet p = init_params(small_dims(), 3);
  GradientSet g = zero_tensors(p.dims);
  for (Tensor* t : g.tensors()) {
    for (double& x : t->data) x = rng.uniform(-1, 1);
  }
  const ParamSet two = sgd_step(sgd_step(p, g, 0.01), g, 0.01);
  const ParamSet one = sgd_step(p, g, 0.02);
  const auto a = two.w.tensors(), b = one.w.tensors();
  for (std::size_t t = 0; t < kNumParamTensors; ++t) {
    EXPECT_LT(tensor_relative_error(*a[t], *b[t]), 1e-6);
  }
}

TEST(AdamStep, FirstStepMovesByLearningRate) {
  const ModelDims d = small_dims();
  const ParamSet p = zero_params(d);
  GradientSet g = zero_tensors(d);
  g.txt_b.data[0] = 0.25;
  g.txt_b.data[1] = -3.0;
  AdamState s = make_adam_state(d);
  TrainConfig c;
  c.learning_rate = 0.01;
  const ParamSet q = adam_step(p, g, s, c);
  EXPECT_EQ(s.step, 1u);
  EXPECT_NEAR(q.w.txt_b.data[0], -0.01, 1e-7);
  EXPECT_NEAR(q.w.txt_b.data[1], 0.01, 1e-7);
  EXPECT_EQ(q.w.txt_b.data[2], 0.0);
}

TEST(TrainConfig, DefaultsAndValidation) {
  const TrainConfig s1 = TrainConfig::stage1_defaults();
  const TrainConfig s2 = TrainConfig::stage2_defaults();
  EXPECT_EQ(s1.stage, 1);
  EXPECT_EQ(s2.stage, 2);
  EXPECT_EQ(s2.lambda_txt, 1.0);
  EXPECT_EQ(s2.lambda_info, 1.0);
  EXPECT_EQ(s2.tau, 0.07);
  EXPECT_NO_THROW(validate(s1));
  EXPECT_NO_THROW(validate(s2));
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(validate(c), Error);
  };
  bad([](TrainConfig& c) { c.stage = 3; });
  bad([](TrainConfig& c) { c.learning_rate = 0; });
  bad([](TrainConfig& c) { c.batch_size = 0; });
  bad([](TrainConfig& c) { c.lambda_txt = -1; });
  bad([](TrainConfig& c) { c.tau = 0; });
  bad([](TrainConfig& c) { c.momentum = 1.0; });
  bad([](TrainConfig& c) { c.beta2 = 1.0; });
}

TEST(TrainConfig, Parsing) {
  EXPECT_EQ(parse_annotation_mode("fast"), AnnotationMode::kFast);
  EXPECT_EQ(parse_annotation_mode("full"), AnnotationMode::kFull);
  EXPECT_THROW(parse_annotation_mode("half"), Error);
  EXPECT_EQ(parse_optimizer("sgd"), OptimizerKind::kSgd);
  EXPECT_EQ(to_string(OptimizerKind::kAdam), "adam");
  EXPECT_THROW(parse_optimizer("rmsprop"), Error);
}

// Shared small world for the training tests.
struct SmallWorld {
  SynthWorld world;
  std::vector<Triplet> train;
  std::vector<CoTAnnotation> accepted;
  ModelDims dims;

  SmallWorld() {
    SynthOptions o;
    o.n_items = 40;
    o.vocab_size = 256;
    world = generate_synthetic_world(o);
    train = world.triplets;
    MockGenerator gen(0);
    MockJudge a(1), b(2), c(3);
    JudgeClient* judges[] = {&a, &b, &c};
    accepted = filter_annotations(annotate_triplets(train, gen, judges).annotations)
                   .accepted;
    dims.vocab_size = 256;
  }
};

const SmallWorld& small_world() {
  static const SmallWorld w;
  return w;
}

TEST(TrainStage1, ZeroEpochsDeterminismAndLearning) {
  const auto& w = small_world();
  TrainConfig c = TrainConfig::stage1_defaults();
  c.epochs = 0;
  const ParamSet init = init_params(w.dims, c.seed);
  EXPECT_EQ(train_stage1(init, w.world.nli_pairs, c), init);

  c.epochs = 4;
  std::vector<double> first, last;
  const ParamSet a = train_stage1(w.world, w.dims, c, [&](const LossRecord& r) {
    EXPECT_EQ(r.stage, 1);
    EXPECT_EQ(r.loss.l_txt, 0.0);
    if (r.epoch == 0) first.push_back(r.loss.l_info);
    if (r.epoch == 3) last.push_back(r.loss.l_info);
  });
  EXPECT_EQ(train_stage1(w.world, w.dims, c), a);
  const auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  EXPECT_LT(mean(last), mean(first));
  // Only text-side parameters move.
  EXPECT_EQ(a.w.img_w, init.w.img_w);
  EXPECT_EQ(a.w.comp_w, init.w.comp_w);
  EXPECT_EQ(a.w.out_w, init.w.out_w);
  EXPECT_NE(a.w.txt_w, init.w.txt_w);
}

TEST(TrainStage1, Errors) {
  const auto& w = small_world();
  TrainConfig c = TrainConfig::stage1_defaults();
  EXPECT_THROW(train_stage1(init_params(w.dims, 0), std::vector<NliPair>{}, c),
               Error);
  c.stage = 2;
  EXPECT_THROW(train_stage1(w.world, w.dims, c), Error);
}

TEST(TrainStage2, ZeroWeightsLeaveParamsUnchanged) {
  const auto& w = small_world();
  TrainConfig c = TrainConfig::stage2_defaults();
  c.epochs = 1;
  c.lambda_txt = 0;
  c.lambda_info = 0;
  const ParamSet init = init_params(w.dims, 5);
  for (auto opt : {OptimizerKind::kAdam, OptimizerKind::kSgd}) {
    c.optimizer = opt;
    EXPECT_EQ(train_stage2(w.world.embeddings, w.train, w.accepted, init, c),
              init);
  }
}

TEST(TrainStage2, DeterministicAndLogsBothLosses) {
  const auto& w = small_world();
  TrainConfig c = TrainConfig::stage2_defaults();
  c.epochs = 1;
  c.annotation_mode = AnnotationMode::kFast;
  const ParamSet init = init_params(w.dims, 5);
  std::size_t steps = 0;
  const ParamSet a = train_stage2(w.world.embeddings, w.train, w.accepted, init, c,
                                  [&](const LossRecord& r) {
                                    ++steps;
                                    EXPECT_GT(r.loss.l_txt, 0.0);
                                    EXPECT_GT(r.loss.l_info, 0.0);
                                  });
  EXPECT_EQ(steps, (w.accepted.size() + c.batch_size - 1) / c.batch_size);
  EXPECT_EQ(train_stage2(w.world.embeddings, w.train, w.accepted, init, c), a);
  EXPECT_NE(a, init);
}

TEST(TrainStage2, Errors) {
  const auto& w = small_world();
  TrainConfig c = TrainConfig::stage2_defaults();
  const ParamSet init = init_params(w.dims, 5);
  EXPECT_THROW(train_stage2(w.world.embeddings, w.train,
                            std::vector<CoTAnnotation>{}, init, c),
               Error);
  c.stage = 1;
  EXPECT_THROW(train_stage2(w.world.embeddings, w.train, w.accepted, init, c),
               Error);
  ModelDims wrong = w.dims;
  wrong.image_dim = 8;
  EXPECT_THROW(train_stage2(w.world.embeddings, w.train, w.accepted,
                            init_params(wrong, 0), TrainConfig::stage2_defaults()),
               Error);
}

TEST(BuildExamples, AcceptedOnlyAndFastIsShorter) {
  const auto& w = small_world();
  auto mixed = w.accepted;
  mixed[0].accepted = false;
  const auto full = build_examples(w.world.embeddings, w.train, mixed,
                                   AnnotationMode::kFull, w.dims.vocab_size);
  const auto fast = build_examples(w.world.embeddings, w.train, mixed,
                                   AnnotationMode::kFast, w.dims.vocab_size);
  EXPECT_EQ(full.size(), w.accepted.size() - 1);
  ASSERT_EQ(fast.size(), full.size());
  std::size_t full_tokens = 0, fast_tokens = 0;
  for (std::size_t i = 0; i < full.size(); ++i) {
    EXPECT_LT(fast[i].supervision.size(), full[i].supervision.size());
    full_tokens += full[i].supervision.size();
    fast_tokens += fast[i].supervision.size();
  }
  EXPECT_LT(fast_tokens, full_tokens);
}

TEST(SupervisionText, Modes) {
  const CoTAnnotation a{"p", "cap", {"one", "two"}, "end", {}, true};
  EXPECT_EQ(supervision_text(a, AnnotationMode::kFull), "cap one two end");
  EXPECT_EQ(supervision_text(a, AnnotationMode::kFast), "end");
}

}  // namespace
}  // namespace cir
