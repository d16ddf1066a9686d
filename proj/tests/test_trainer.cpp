// Copyright 2026 The mavqa Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mavqa/checkpoint.hpp"
#include "mavqa/experiment.hpp"
#include "mavqa/trainer.hpp"

#include <gtest/gtest.h>

#include <limits>

#include "tiny_config.hpp"

namespace mavqa {
namespace {

using testing::tiny_config;

// ---------------------------------------------------------------------------
// Adam.

struct OneParam {
  Vec w = Vec::Zero(3);
  std::vector<ParamView> views() { return {ParamView{"w", w.data(), w.size(), 1}}; }
};

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  OneParam p, g;
  p.w << 1, -2, 3;
  const Vec before = p.w;
  AdamState s = AdamState::for_params(p.views(), TrainConfig{});
  for (int i = 0; i < 5; ++i) adam_step(s, p.views(), g.views());
  EXPECT_EQ(p.w, before);
  EXPECT_EQ(s.step, 5u);
}

TEST(Adam, FirstStepValue) {
  OneParam p, g;
  g.w << 1, -1, 0.5;
  AdamState s = AdamState::for_params(p.views(), TrainConfig{});
  adam_step(s, p.views(), g.views());
  EXPECT_NEAR(p.w[0], -9.9999999e-5, 1e-12);
  EXPECT_NEAR(p.w[1], 9.9999999e-5, 1e-12);
  EXPECT_NEAR(p.w[2], -1e-4 * 0.5 / (0.5 + 1e-8), 1e-12);
}

TEST(Adam, RepeatedConstantGradientMovesByLrPerStep) {
  OneParam p, g;
  g.w.setConstant(2.0);
  AdamState s = AdamState::for_params(p.views(), TrainConfig{});
  for (int i = 0; i < 10; ++i) adam_step(s, p.views(), g.views());
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p.w[i], -10 * 1e-4, 1e-11);
}

TEST(Adam, LayoutMismatchIsAnError) {
  OneParam p;
  Vec other = Vec::Zero(2);
  std::vector<ParamView> bad{ParamView{"w", other.data(), other.size(), 1}};
  AdamState s = AdamState::for_params(p.views(), TrainConfig{});
  EXPECT_THROW(adam_step(s, p.views(), bad), DimensionError);
}

// ---------------------------------------------------------------------------
// Training step.

BatchData first_batch(const Dataset& d, std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return gather(d.samples, idx);
}

TEST(TrainStep, DeterministicAndReportsItsLoss) {
  const RunConfig rc = tiny_config();
  const Dataset d = make_dataset(rc.n_samples, rc.world);
  const BatchData b = first_batch(d, 4);
  TrainerState s1 = TrainerState::fresh(rc), s2 = TrainerState::fresh(rc);
  Rng peek = s1.rng;
  const AveDraw draw = draw_ave(peek, s1.models.schedule, s1.models.c() + s1.models.visual_dim(), 4);
  const LossBreakdown want = joint_loss(s1.models, b, rc.train, draw);
  const LossBreakdown l1 = train_step(s1.models, s1.adam, b, rc.train, s1.rng);
  const LossBreakdown l2 = train_step(s2.models, s2.adam, b, rc.train, s2.rng);
  EXPECT_EQ(l1.total, want.total);
  EXPECT_EQ(l1.total, l2.total);
  EXPECT_EQ(l1.total, l1.l_avqa + l1.lambda1 * l1.l_rmmr + l1.lambda2 * l1.l_ave);
  EXPECT_TRUE(s1.models.bank.audio == s2.models.bank.audio);
  EXPECT_TRUE(s1.models.eps.mid.weight == s2.models.eps.mid.weight);
  EXPECT_TRUE(s1.models.head.out.weight == s2.models.head.out.weight);
  EXPECT_TRUE(s1.rng == peek);
}

TEST(TrainStep, FrozenModulesWithZeroWeightsReduceToAPlainClassifier) {
  RunConfig rc = tiny_config();
  rc.train.lambda1 = 0;
  rc.train.lambda2 = 0;
  rc.train.freeze_rmm = true;
  rc.train.freeze_eps = true;
  rc.train.mix_complete = 1;
  rc.train.mix_audio_missing = 0;
  rc.train.mix_visual_missing = 0;
  const Dataset d = make_dataset(rc.n_samples, rc.world);
  const auto train = d.split(Dataset::Split::Train);

  TrainerState st = TrainerState::fresh(rc);
  const Models start = st.models;
  train_epoch(st, train, rc.train);

  // Reference: Adam on the head alone, driving the rng the same way.
  QaHead head = start.head;
  std::vector<ParamView> hp;
  head.append_params(hp);
  AdamState adam = AdamState::for_params(hp, rc.train);
  Rng rng(rc.train.seed);
  const auto order = shuffled_indices(train.size(), rng);
  for (std::size_t s = 0; s < order.size(); s += 4) {
    const std::size_t len = std::min<std::size_t>(4, order.size() - s);
    const BatchData b = gather(train, std::span<const std::size_t>(order).subspan(s, len));
    draw_ave(rng, start.schedule, start.c() + start.visual_dim(), b.size());
    const QaPass p = qa_forward(head, b.audio, b.visual, b.text);
    Mat gl;
    ce_loss_batch(p.logits, b.labels, &gl);
    QaHead g = head.zeros_like();
    qa_backward(head, p, 3.0 * gl, g);
    std::vector<ParamView> gp;
    g.append_params(gp);
    adam_step(adam, hp, gp);
  }
  std::vector<ParamView> trained;
  st.models.head.append_params(trained);
  for (std::size_t i = 0; i < hp.size(); ++i) {
    const auto a = hp[i].span();
    const auto b = trained[i].span();
    for (std::size_t k = 0; k < a.size(); ++k) ASSERT_NEAR(a[k], b[k], 1e-12) << hp[i].name;
  }
  EXPECT_TRUE(st.models.bank.audio == start.bank.audio);
  EXPECT_TRUE(st.models.eps.in.weight == start.eps.in.weight);
  EXPECT_TRUE(st.rng == rng);
}

TEST(TrainStep, NonFiniteLossRaisesAndLeavesModelsUnchanged) {
  const RunConfig rc = tiny_config();
  const Dataset d = make_dataset(rc.n_samples, rc.world);
  BatchData b = first_batch(d, 4);
  b.audio *= 1e160;
  TrainerState st = TrainerState::fresh(rc);
  const Models before = st.models;
  try {
    train_step(st.models, st.adam, b, rc.train, st.rng);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("l_rmmr"), std::string::npos) << e.what();
  }
  EXPECT_TRUE(st.models.bank.audio == before.bank.audio);
  EXPECT_TRUE(st.models.head.out.weight == before.head.out.weight);
  EXPECT_EQ(st.adam.step, 0u);
}

TEST(TrainStep, ZeroLossConstructionHasZeroModuleGradients) {
  // One slot holding the exact features of every sample: recall is exact.
  // A noise predictor whose output is the drawn noise: prediction is exact.
  Rng r(3);
  const int c = 2, n = 3;
  Models m;
  m.bank = SlotBank::init(1, 1, 1, c, r);
  m.eps = EpsNet::init({2 * c, 4, 2}, r);
  m.head = QaHead::init({c, c, 4, 3}, r);
  m.schedule = make_schedule(3, 0.05, 0.3);
  m.entry = 3;
  BatchData b;
  b.audio = m.bank.audio.transpose().replicate(1, n);
  b.visual = m.bank.visual.transpose().replicate(1, n);
  b.text = r.normal_mat(c, n);
  b.labels = {0, 1, 2};
  AveDraw draw;
  draw.steps = {1, 2, 3};
  const Vec noise = r.normal_vec(2 * c);
  draw.noise = noise.replicate(1, n);
  m.eps.out.weight.setZero();
  m.eps.out.bias = noise;

  TrainConfig tc;
  tc.mix_complete = 1;
  tc.mix_audio_missing = 0;
  tc.mix_visual_missing = 0;
  Models g = m.zeros_like();
  const LossBreakdown lb = joint_loss(m, b, tc, draw, &g);
  EXPECT_LT(lb.l_rmmr, 1e-20);
  EXPECT_LT(lb.l_ave, 1e-20);
  const double bank_norm =
      std::sqrt(g.bank.audio.squaredNorm() + g.bank.visual.squaredNorm() + g.bank.text.squaredNorm());
  double eps_norm = 0;
  std::vector<ParamView> ev;
  g.eps.append_params(ev);
  for (const auto& v : ev) eps_norm += v.map().squaredNorm();
  EXPECT_LT(bank_norm, 1e-8);
  EXPECT_LT(std::sqrt(eps_norm), 1e-8);
}

// ---------------------------------------------------------------------------
// Evaluation.

TEST(Evaluate, RatioZeroMatchesCompleteEvaluation) {
  RunConfig rc = tiny_config();
  const TrainedRun run = train_run(rc);
  const auto test = run.data.split(Dataset::Split::Test);
  for (Arm arm : {Arm::Neither, Arm::RmmOnly, Arm::AvrOnly, Arm::Both}) {
    Rng r1(1), r2(1);
    const EvalMetrics a = evaluate(run.state.models, test, Scenario::AudioMissing, 0.0, r1, arm);
    const EvalMetrics b = evaluate(run.state.models, test, Scenario::None, 1.0, r2, arm);
    EXPECT_EQ(a.accuracy, b.accuracy);
    EXPECT_EQ(a.n_missing, 0);
    EXPECT_EQ(a.per_class_accuracy, b.per_class_accuracy);
  }
}

TEST(Evaluate, UninformativeHeadScoresAtChance) {
  RunConfig rc;
  rc.n_samples = 2000;
  const Dataset d = make_dataset(rc.n_samples, rc.world);
  Models m = Models::init(rc.model, rc.world, 0);
  m.head.out.weight.setZero();
  m.head.out.bias.setZero();
  Rng r(0);
  const EvalMetrics e = evaluate(m, d.samples, Scenario::VisualMissing, 0.5, r);
  const double sd = std::sqrt(0.125 * 0.875 / 2000);
  EXPECT_NEAR(e.accuracy, 0.125, 4 * sd);
  EXPECT_EQ(e.n, 2000);
  EXPECT_NEAR(e.n_missing, 1000, 4 * std::sqrt(500.0));
  int total = 0;
  for (int c : e.per_class_count) total += c;
  EXPECT_EQ(total, 2000);
}

TEST(Evaluate, DeterministicGivenTheRng) {
  const RunConfig rc = tiny_config();
  const TrainedRun run = train_run(rc);
  const auto test = run.data.split(Dataset::Split::Test);
  Rng r1(9), r2(9);
  const EvalMetrics a = evaluate(run.state.models, test, Scenario::VisualMissing, 0.5, r1);
  const EvalMetrics b = evaluate(run.state.models, test, Scenario::VisualMissing, 0.5, r2, Arm::Both, 3);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_NEAR(a.pseudo_mse_v, b.pseudo_mse_v, 1e-12);
  EXPECT_EQ(a.n_missing, b.n_missing);
}

TEST(Evaluate, ArmNames) {
  for (Arm a : {Arm::Neither, Arm::RmmOnly, Arm::AvrOnly, Arm::Both}) EXPECT_EQ(parse_arm(to_string(a)), a);
  EXPECT_EQ(parse_arm("zero-fill"), Arm::Neither);
  EXPECT_THROW(parse_arm("all"), ValidationError);
}

// ---------------------------------------------------------------------------
// Gradient verification.

class GradCheck : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GradCheck, JointObjectiveMatchesCentralDifferences) {
  GradProbe p = make_grad_probe(GetParam());
  const GradCheckReport rep = grad_check(p.models, p.batch, p.train, p.draw);
  ASSERT_EQ(rep.groups.size(), 3u);
  for (const auto& g : rep.groups) {
    EXPECT_LT(g.max_rel_error, 1e-6) << g.group;
    EXPECT_GT(g.analytic_norm, 0.0) << g.group;
  }
}

TEST_P(GradCheck, DetachedVariantMatchesItsOwnObjectiveOnTheHead) {
  GradProbe p = make_grad_probe(GetParam());
  p.train.detach_enhanced = true;
  p.train.freeze_rmm = true;
  p.train.freeze_eps = true;
  p.train.lambda1 = 0;
  p.train.lambda2 = 0;
  const GradCheckReport rep = grad_check(p.models, p.batch, p.train, p.draw);
  for (const auto& g : rep.groups) EXPECT_LT(g.max_rel_error, 1e-6) << g.group;
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradCheck, ::testing::Values(0u, 1u, 2u, 3u));

// ---------------------------------------------------------------------------
// Checkpoints.

TEST(Checkpoint, ByteIdenticalRoundTrip) {
  const RunConfig rc = tiny_config();
  const TrainedRun run = train_run(rc);
  const std::string bytes = encode_checkpoint({rc, run.state});
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(to_config_text(back.config), to_config_text(rc));
  EXPECT_EQ(back.state.epochs_done, 2);
  EXPECT_TRUE(back.state.rng == run.state.rng);
}

TEST(Checkpoint, ResumeEqualsUninterruptedRun) {
  RunConfig rc = tiny_config();
  rc.train.epochs = 3;
  const TrainedRun full = train_run(rc);

  const Dataset data = make_dataset(rc.n_samples, rc.world);
  TrainerState st = TrainerState::fresh(rc);
  RunConfig first = rc;
  first.train.epochs = 1;
  train_to(st, data, first);
  const Checkpoint mid = decode_checkpoint(encode_checkpoint({rc, st}));
  TrainerState resumed = mid.state;
  train_to(resumed, data, rc);
  EXPECT_EQ(encode_checkpoint({rc, resumed}), encode_checkpoint({rc, full.state}));
}

CheckpointError::Kind kind_of(const std::string& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return CheckpointError::Kind::Corrupt;
}

TEST(Checkpoint, RejectsDamagedFiles) {
  const RunConfig rc = tiny_config();
  const std::string bytes = encode_checkpoint({rc, TrainerState::fresh(rc)});
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(kind_of(bad), CheckpointError::Kind::BadMagic);
  std::string ver = bytes;
  ver[5] = 2;
  EXPECT_EQ(kind_of(ver), CheckpointError::Kind::VersionMismatch);
  EXPECT_EQ(kind_of(bytes.substr(0, bytes.size() / 2)), CheckpointError::Kind::Truncated);
  EXPECT_EQ(kind_of(bytes.substr(0, 3)), CheckpointError::Kind::Truncated);
  EXPECT_EQ(kind_of(bytes + "zz"), CheckpointError::Kind::Corrupt);
}

}  // namespace
}  // namespace mavqa
