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

#include "mavqa/diffusion.hpp"
#include "mavqa/trainer.hpp"
#include "mavqa/world.hpp"

#include <gtest/gtest.h>

namespace mavqa {
namespace {

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

TEST(Schedule, SingleStep) {
  const NoiseSchedule s = make_schedule(1, 0.1, 0.1);
  EXPECT_EQ(s.steps(), 1);
  EXPECT_EQ(s.beta(1), 0.1);
  EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-15);
}

TEST(Schedule, DefaultLinearScheduleAgainstProductOracle) {
  const NoiseSchedule s = make_schedule(10, 1e-4, 0.2);
  double prod = 1.0;
  for (int t = 1; t <= 10; ++t) {
    const double beta = 1e-4 + (0.2 - 1e-4) * (t - 1) / 9.0;
    EXPECT_NEAR(s.beta(t), beta, 1e-15);
    prod *= 1.0 - beta;
  }
  EXPECT_NEAR(s.alpha_bar(10), prod, 1e-12);
  EXPECT_EQ(s.beta(1), 1e-4);
  EXPECT_NEAR(s.beta(10), 0.2, 1e-15);
}

TEST(Schedule, ConsistencyAndMonotonicity) {
  for (const auto& s : {make_schedule(10, 1e-4, 0.2), make_schedule(20, 0.01, 0.01), make_schedule(5, 0.3, 0.9)}) {
    EXPECT_NEAR(s.alpha_bar(1), s.alpha(1), 1e-15);
    for (int t = 2; t <= s.steps(); ++t) {
      EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
      EXPECT_NEAR(s.alpha_bar(t) / s.alpha_bar(t - 1), s.alpha(t), 1e-15);
      EXPECT_EQ(s.alpha(t), 1.0 - s.beta(t));
    }
  }
}

TEST(Schedule, InvalidRanges) {
  EXPECT_THROW(make_schedule(0, 0.1, 0.2), ValidationError);
  EXPECT_THROW(make_schedule(5, 0.0, 0.2), ValidationError);
  EXPECT_THROW(make_schedule(5, 0.3, 0.2), ValidationError);
  EXPECT_THROW(make_schedule(5, 0.1, 1.0), ValidationError);
  EXPECT_THROW(make_schedule(5, 0.1, 0.2).beta(6), ValidationError);
}

TEST(Combined, LayoutAndRoundTrip) {
  const CombinedFeature f = concat_av(FeatureVec(vec({1, 2})), unflatten_visual(vec({3, 4}), 1, 1, 2));
  EXPECT_EQ(f.values(), vec({1, 2, 3, 4}));
  const auto [a, v] = split_av(f);
  EXPECT_EQ(a.values(), vec({1, 2}));
  EXPECT_EQ(v.flat(), vec({3, 4}));

  Rng r(1);
  const FeatureVec ra(r.normal_vec(3));
  const VisualFeatureMap rv = unflatten_visual(r.normal_vec(2 * 4 * 3), 2, 4, 3);
  const auto [a2, v2] = split_av(concat_av(ra, rv));
  EXPECT_TRUE(a2 == ra);
  EXPECT_TRUE(v2 == rv);

  const CombinedFeature z = concat_av(FeatureVec::zeros(2), VisualFeatureMap::zeros(2, 2, 2));
  EXPECT_EQ(z.values(), Vec::Zero(10));
}

TEST(Combined, ShapeErrors) {
  EXPECT_THROW(concat_av(FeatureVec::zeros(3), VisualFeatureMap::zeros(1, 1, 2)), DimensionError);
  EXPECT_THROW(CombinedFeature(Vec::Zero(5), 1, 1, 2), DimensionError);
}

TEST(Forward, LimitsAndWorkedExample) {
  const Vec f = vec({0.3, -2}), e = vec({1.5, 0.25});
  EXPECT_EQ(forward_step(f, 1, e, NoiseSchedule::from_betas({0.0})), f);
  EXPECT_EQ(forward_step(f, 1, e, NoiseSchedule::from_betas({1.0})), e);
  const Vec y = forward_step(vec({1, 0}), 1, vec({0, 1}), NoiseSchedule::from_betas({0.19}));
  EXPECT_NEAR(y[0], 0.9, 1e-5);
  EXPECT_NEAR(y[1], 0.43589, 1e-5);
  EXPECT_THROW(forward_step(f, 2, e, NoiseSchedule::from_betas({0.1})), ValidationError);
}

TEST(Marginal, ZeroNoiseCollapsesIteratedChain) {
  const NoiseSchedule s = make_schedule(10, 1e-4, 0.2);
  Rng r(2);
  const Vec f0 = r.normal_vec(6);
  Vec x = f0;
  for (int t = 1; t <= 10; ++t) {
    x = forward_step(x, t, Vec::Zero(6), s);
    EXPECT_LT((marginal_sample(f0, t, Vec::Zero(6), s) - x).cwiseAbs().maxCoeff(), 1e-14);
  }
  const NoiseSchedule zero = NoiseSchedule::from_betas({0, 0, 0});
  EXPECT_EQ(marginal_sample(f0, 3, r.normal_vec(6), zero), f0);
}

TEST(Marginal, MomentsMatchIteratedForwardProcess) {
  const NoiseSchedule s = make_schedule(10, 1e-4, 0.2);
  const Vec f0 = vec({1.0, -0.5});
  const int n = 100000, t = 5;
  Rng r(3);
  Eigen::Vector2d s1 = Eigen::Vector2d::Zero(), s2 = s1, m1 = s1, m2 = s1;
  for (int i = 0; i < n; ++i) {
    Vec x = f0;
    for (int k = 1; k <= t; ++k) x = forward_step(x, k, r.normal_vec(2), s);
    const Vec y = marginal_sample(f0, t, r.normal_vec(2), s);
    s1 += x;
    s2 += x.cwiseProduct(x);
    m1 += y;
    m2 += y.cwiseProduct(y);
  }
  for (int k = 0; k < 2; ++k) {
    const double mx = s1[k] / n, my = m1[k] / n;
    const double vx = s2[k] / n - mx * mx, vy = m2[k] / n - my * my;
    const double se_mean = std::sqrt(vx / n + vy / n);
    EXPECT_LT(std::abs(mx - my), 3 * se_mean) << "coordinate " << k;
    const double se_var = std::sqrt(2 * vx * vx / n + 2 * vy * vy / n);
    EXPECT_LT(std::abs(vx - vy), 3 * se_var) << "coordinate " << k;
  }
}

EpsNet small_net(Rng& r, int d, bool zero_output) { return EpsNet::init({d, 6, 4}, r, zero_output); }

TEST(EpsNetTest, ZeroOutputLayerPredictsZero) {
  Rng r(4);
  const EpsNet net = EpsNet::init({}, r);
  EXPECT_EQ(predict_noise(net, r.normal_vec(272), 3), Vec::Zero(272));
}

TEST(EpsNetTest, DeterministicAndTimeSensitive) {
  Rng r(5);
  const EpsNet net = small_net(r, 4, false);
  const Vec f = r.normal_vec(4);
  EXPECT_EQ(predict_noise(net, f, 2), predict_noise(net, f, 2));
  EXPECT_NE(predict_noise(net, f, 2), predict_noise(net, f, 3));
}

TEST(EpsNetTest, TimeEmbeddingsArePairwiseDistinct) {
  for (int dim : {4, 16}) {
    for (int a = 1; a <= 20; ++a) {
      for (int b = a + 1; b <= 20; ++b) {
        EXPECT_GT((time_embedding(a, dim) - time_embedding(b, dim)).norm(), 1e-3) << a << " vs " << b;
      }
    }
  }
  const Vec e = time_embedding(3, 4);
  EXPECT_NEAR(e[0], std::sin(3.0), 1e-15);
  EXPECT_NEAR(e[1], std::cos(3.0), 1e-15);
  EXPECT_NEAR(e[2], std::sin(0.03), 1e-15);
  EXPECT_NEAR(e[3], std::cos(0.03), 1e-15);
}

TEST(Reverse, ZeroBetaIsIdentity) {
  Rng r(6);
  const EpsNet net = small_net(r, 3, false);
  const NoiseSchedule s = NoiseSchedule::from_betas({0.0, 0.0});
  const Vec f = r.normal_vec(3);
  EXPECT_EQ(reverse_step(f, 2, net, s, nullptr), f);
  const CombinedFeature cf(vec({1, 2, 3}), 1, 2, 1);
  EXPECT_EQ(enhance(cf, net, s, nullptr).values(), cf.values());
}

TEST(Reverse, ZeroPredictionScalesByAlpha) {
  Rng r(7);
  const EpsNet net = small_net(r, 3, true);
  const NoiseSchedule s = make_schedule(10, 1e-4, 0.2);
  const Vec f = r.normal_vec(3);
  for (int t = 1; t <= 10; ++t) {
    EXPECT_LT((reverse_step(f, t, net, s, nullptr) - f / std::sqrt(s.alpha(t))).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Reverse, StepOutOfRange) {
  Rng r(8);
  const EpsNet net = small_net(r, 3, true);
  const NoiseSchedule s = make_schedule(4, 0.1, 0.2);
  EXPECT_THROW(reverse_step(Vec::Zero(3), 0, net, s, nullptr), ValidationError);
  EXPECT_THROW(reverse_step(Vec::Zero(3), 5, net, s, nullptr), ValidationError);
}

TEST(Reverse, RecoversCleanSignalWithTrueNoise) {
  const NoiseSchedule s = make_schedule(10, 1e-4, 0.2);
  Rng r(9);
  for (int t = 1; t <= 10; ++t) {
    const Vec f0 = r.normal_vec(8), eps = r.normal_vec(8);
    const Vec ft = marginal_sample(f0, t, eps, s);
    EXPECT_LT((recover_x0(ft, t, eps, s) - f0).cwiseAbs().maxCoeff(), 1e-12) << "t=" << t;
  }
}

TEST(Enhance, ZeroPredictionClosedForm) {
  Rng r(10);
  const EpsNet net = EpsNet::init({}, r);
  const NoiseSchedule s = make_schedule(10, 1e-4, 0.2);
  const CombinedFeature f(r.normal_vec(272), 4, 4, 16);
  const Vec out = enhance(f, net, s, nullptr).values();
  EXPECT_LT((out - f.values() / std::sqrt(s.alpha_bar(10))).cwiseAbs().maxCoeff(), 1e-12);
  // The batched chain agrees with the per-sample chain.
  const EnhancePass p = enhance_forward(net, s, f.values(), 10);
  EXPECT_EQ(p.output.col(0), out);
}

TEST(Enhance, EntryStepRunsAShorterChain) {
  Rng r(11);
  const EpsNet net = small_net(r, 4, true);
  const NoiseSchedule s = make_schedule(10, 1e-4, 0.2);
  const CombinedFeature f(r.normal_vec(4), 1, 1, 2);
  double scale = 1.0;
  for (int t = 1; t <= 4; ++t) scale *= std::sqrt(s.alpha(t));
  EXPECT_LT((enhance(f, net, s, nullptr, 4).values() - f.values() / scale).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Enhance, StochasticModeReproducibleUnderSeed) {
  Rng r(12);
  const EpsNet net = small_net(r, 4, false);
  const NoiseSchedule s = make_schedule(10, 1e-4, 0.2);
  const CombinedFeature f(r.normal_vec(4), 1, 1, 2);
  Rng a(99), b(99);
  EXPECT_EQ(enhance(f, net, s, &a).values(), enhance(f, net, s, &b).values());
  Rng c(100);
  EXPECT_NE(enhance(f, net, s, &a).values(), enhance(f, net, s, &c).values());
}

TEST(AveLoss, OracleNetworkGivesZero) {
  // A net whose output ignores its input (all weights zero) predicts its
  // output bias; making that bias the drawn noise gives zero loss.
  Rng r(13);
  const NoiseSchedule s = make_schedule(10, 1e-4, 0.2);
  EpsNet net = small_net(r, 5, true);
  net.in.weight.setZero();
  net.mid.weight.setZero();
  AveDraw d = draw_ave(r, s, 5, 1);
  net.out.bias = d.noise.col(0);
  EXPECT_EQ(ave_loss_batch(net, r.normal_mat(5, 1), s, d), 0.0);
}

TEST(AveLoss, ZeroPredictionMatchesChiSquareMean) {
  Rng r(14);
  const NoiseSchedule s = make_schedule(10, 1e-4, 0.2);
  const EpsNet net = small_net(r, 20, true);
  const CombinedFeature f0(r.normal_vec(20), 1, 9, 2);
  const int n = 10000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += ave_loss(net, f0, s, r);
  // ||eps||^2 ~ chi2(20): mean 20, variance 40.
  EXPECT_LT(std::abs(sum / n - 20.0), 3 * std::sqrt(40.0 / n));
}

double rel_err(const Mat& a, const Mat& b) {
  const double d = std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
  return d == 0 ? 0 : (a - b).cwiseAbs().maxCoeff() / d;
}

template <typename F>
Mat central_diff(Mat& x, const F& f, double h = 1e-5) {
  Mat g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double o = x.data()[i];
    x.data()[i] = o + h;
    const double up = f();
    x.data()[i] = o - h;
    const double dn = f();
    x.data()[i] = o;
    g.data()[i] = (up - dn) / (2 * h);
  }
  return g;
}

TEST(AveLoss, GradientMatchesFiniteDifferences) {
  Rng r(15);
  const NoiseSchedule s = make_schedule(4, 0.05, 0.3);
  EpsNet net = small_net(r, 4, false);
  const Mat f0 = r.normal_mat(4, 3);
  const AveDraw d = draw_ave(r, s, 4, 3);
  EpsNet g = net.zeros_like();
  ave_loss_batch(net, f0, s, d, &g);
  const auto f = [&] { return ave_loss_batch(net, f0, s, d); };
  EXPECT_LT(rel_err(g.in.weight, central_diff(net.in.weight, f)), 1e-6);
  EXPECT_LT(rel_err(g.mid.weight, central_diff(net.mid.weight, f)), 1e-6);
  EXPECT_LT(rel_err(g.out.weight, central_diff(net.out.weight, f)), 1e-6);
  Mat b = g.in.bias;
  Mat nb = net.in.bias;
  const auto fb = [&] {
    net.in.bias = nb;
    return ave_loss_batch(net, f0, s, d);
  };
  EXPECT_LT(rel_err(b, central_diff(nb, fb)), 1e-6);
}

TEST(Enhance, ChainGradientMatchesFiniteDifferences) {
  Rng r(16);
  const NoiseSchedule s = make_schedule(3, 0.05, 0.3);
  EpsNet net = small_net(r, 4, false);
  Mat x = r.normal_mat(4, 2);
  const Mat w = r.normal_mat(4, 2);  // loss = <w, enhance(x)>
  const EnhancePass p = enhance_forward(net, s, x, 3);
  EpsNet g = net.zeros_like();
  const Mat gx = enhance_backward(net, s, p, w, &g);
  const auto f = [&] { return enhance_forward(net, s, x, 3).output.cwiseProduct(w).sum(); };
  EXPECT_LT(rel_err(gx, central_diff(x, f)), 1e-6);
  EXPECT_LT(rel_err(g.in.weight, central_diff(net.in.weight, f)), 1e-6);
  EXPECT_LT(rel_err(g.out.weight, central_diff(net.out.weight, f)), 1e-6);
}

TEST(AveLoss, TrainingReducesItBelowTheZeroPredictor) {
  // Fixed feature distribution: the default synthetic world.
  WorldConfig wc;
  const Dataset data = make_dataset(400, wc);
  Mat f0(wc.c + wc.visual_dim(), static_cast<Eigen::Index>(data.samples.size()));
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    f0.col(static_cast<Eigen::Index>(i)) << data.samples[i].audio.values(), data.samples[i].visual.flat();
  }
  const NoiseSchedule s = make_schedule(10, 1e-4, 0.2);
  constexpr int kBatch = 32;
  double ratio_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng r(seed);
    EpsNet net = EpsNet::init({}, r);
    TrainConfig tc;
    tc.lr = 1e-3;
    std::vector<ParamView> ps;
    net.append_params(ps);
    AdamState adam = AdamState::for_params(ps, tc);
    for (int step = 0; step < 500; ++step) {
      Mat batch(f0.rows(), kBatch);
      for (int j = 0; j < kBatch; ++j) batch.col(j) = f0.col(static_cast<Eigen::Index>(r.uniform_int(f0.cols())));
      const AveDraw d = draw_ave(r, s, f0.rows(), kBatch);
      EpsNet g = net.zeros_like();
      ave_loss_batch(net, batch, s, d, &g);
      std::vector<ParamView> ps2, gs;
      net.append_params(ps2);
      g.append_params(gs);
      adam_step(adam, ps2, gs);
    }
    // Held-out draws: trained net versus the zero predictor on the same draws.
    const AveDraw d = draw_ave(r, s, f0.rows(), f0.cols());
    const double trained = ave_loss_batch(net, f0, s, d);
    const double zero = d.noise.squaredNorm() / static_cast<double>(f0.cols());
    ratio_sum += trained / zero;
  }
  EXPECT_LT(ratio_sum / 3, 0.7);
}

}  // namespace
}  // namespace mavqa
