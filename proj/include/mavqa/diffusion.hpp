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

/// Feature-space denoising diffusion over concatenated audio-visual vectors.
///
/// The forward chain is f_t = sqrt(1 - beta_t) f_{t-1} + sqrt(beta_t) eps.
/// The reverse chain uses the eps-parameterised mean
///
///   mu(f_t, t) = (f_t - beta_t / sqrt(1 - abar_t) * eps_hat(f_t, t)) / sqrt(alpha_t)
///
/// with variance fixed to beta_t (no noise is injected at t = 1). "Enhancing"
/// a (pseudo, real) pair means treating it as the state at the entry step and
/// running the reverse chain down to t = 1.

#pragma once

#include "mavqa/core.hpp"
#include "mavqa/params.hpp"

#include <optional>
#include <vector>

namespace mavqa {

/// Per-step beta_t, alpha_t = 1 - beta_t and abar_t = prod_{s<=t} alpha_s.
/// Steps are 1-based in the public API.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  /// Accepts betas in [0, 1] so that degenerate chains (beta = 0 identity,
  /// beta = 1 pure noise) can be built for testing. Use make_schedule for
  /// the validated linear schedule.
  static NoiseSchedule from_betas(std::vector<double> betas) {
    if (betas.empty()) throw ValidationError("NoiseSchedule: need at least one step");
    NoiseSchedule s;
    double abar = 1.0;
    for (double b : betas) {
      if (!(b >= 0.0 && b <= 1.0)) throw ValidationError("NoiseSchedule: beta outside [0, 1]");
      s.beta_.push_back(b);
      s.alpha_.push_back(1.0 - b);
      abar *= 1.0 - b;
      s.alpha_bar_.push_back(abar);
    }
    return s;
  }

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_.at(index(t)); }
  double alpha(int t) const { return alpha_.at(index(t)); }
  double alpha_bar(int t) const { return alpha_bar_.at(index(t)); }

  /// beta_t / sqrt(1 - abar_t), taken as 0 when beta_t = 0.
  double eps_coef(int t) const {
    const double b = beta(t);
    return b == 0.0 ? 0.0 : b / std::sqrt(1.0 - alpha_bar(t));
  }

  void check_step(int t, const char* what) const {
    if (t < 1 || t > steps()) {
      throw ValidationError(std::string(what) + ": step " + std::to_string(t) + " outside [1, " +
                            std::to_string(steps()) + "]");
    }
  }

 private:
  std::size_t index(int t) const {
    check_step(t, "NoiseSchedule");
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> beta_, alpha_, alpha_bar_;
};

/// Linear betas from beta_start to beta_end over steps 1..T.
inline NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ValidationError("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ValidationError("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / (steps - 1);
    betas[static_cast<std::size_t>(t)] = beta_start + (beta_end - beta_start) * frac;
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

// ---------------------------------------------------------------------------

/// Audio segment [0, c) followed by the flattened visual map [c, c + whc).
class CombinedFeature {
 public:
  CombinedFeature() = default;
  CombinedFeature(Vec values, int w, int h, int c) : values_(std::move(values)), w_(w), h_(h), c_(c) {
    detail::require_dim(values_.size(), Eigen::Index(c) + Eigen::Index(w) * h * c, "CombinedFeature");
    detail::require_finite(values_, "CombinedFeature");
  }

  const Vec& values() const { return values_; }
  int dim() const { return static_cast<int>(values_.size()); }
  int w() const { return w_; }
  int h() const { return h_; }
  int c() const { return c_; }

  bool operator==(const CombinedFeature& o) const {
    return w_ == o.w_ && h_ == o.h_ && c_ == o.c_ && values_ == o.values_;
  }

 private:
  Vec values_;
  int w_ = 0, h_ = 0, c_ = 0;
};

inline CombinedFeature concat_av(const FeatureVec& audio, const VisualFeatureMap& visual) {
  detail::require_dim(audio.dim(), visual.c(), "concat_av: audio length vs visual channels");
  Vec v(audio.dim() + visual.size());
  v << audio.values(), visual.flat();
  return CombinedFeature(std::move(v), visual.w(), visual.h(), visual.c());
}

inline std::pair<FeatureVec, VisualFeatureMap> split_av(const CombinedFeature& f) {
  const Vec& v = f.values();
  detail::require_dim(v.size(), Eigen::Index(f.c()) * (1 + f.w() * f.h()), "split_av");
  return {FeatureVec(v.head(f.c())), VisualFeatureMap(f.w(), f.h(), f.c(), v.tail(v.size() - f.c()))};
}

inline Vec forward_step(const Vec& f_prev, int t, const Vec& eps, const NoiseSchedule& s) {
  s.check_step(t, "forward_step");
  detail::require_dim(eps.size(), f_prev.size(), "forward_step: noise");
  return std::sqrt(1.0 - s.beta(t)) * f_prev + std::sqrt(s.beta(t)) * eps;
}

inline Vec marginal_sample(const Vec& f0, int t, const Vec& eps, const NoiseSchedule& s) {
  s.check_step(t, "marginal_sample");
  detail::require_dim(eps.size(), f0.size(), "marginal_sample: noise");
  return std::sqrt(s.alpha_bar(t)) * f0 + std::sqrt(1.0 - s.alpha_bar(t)) * eps;
}

/// Clean-signal estimate implied by a noise prediction at step t.
inline Vec recover_x0(const Vec& f_t, int t, const Vec& eps_hat, const NoiseSchedule& s) {
  return (f_t - std::sqrt(1.0 - s.alpha_bar(t)) * eps_hat) / std::sqrt(s.alpha_bar(t));
}

// ---------------------------------------------------------------------------

/// Sinusoidal embedding: [sin(t w_0), cos(t w_0), sin(t w_1), cos(t w_1), ...]
/// with w_k = 10000^(-k / (dim/2)).
inline Vec time_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ValidationError("time_embedding: dimension must be even and >= 2");
  Vec e(dim);
  const int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    const double freq = std::pow(10000.0, -static_cast<double>(k) / half);
    e[2 * k] = std::sin(t * freq);
    e[2 * k + 1] = std::cos(t * freq);
  }
  return e;
}

struct EpsNetConfig {
  int feature_dim = 272;  // c + whc
  int hidden = 256;
  int time_dim = 16;
};

/// Noise predictor: [state; embed(t)] -> tanh(hidden) -> tanh(hidden) -> state.
struct EpsNet {
  Linear in, mid, out;
  int time_dim = 16;

  EpsNet() = default;

  /// Hidden layers ~ N(0, 1/fan_in). With zero_output the final layer starts
  /// at zero so the untrained net predicts no noise.
  static EpsNet init(const EpsNetConfig& cfg, Rng& rng, bool zero_output = true) {
    if (cfg.feature_dim < 1 || cfg.hidden < 1) throw ValidationError("EpsNet: bad dimensions");
    EpsNet n;
    n.time_dim = cfg.time_dim;
    n.in = Linear::init(cfg.feature_dim + cfg.time_dim, cfg.hidden, rng);
    n.mid = Linear::init(cfg.hidden, cfg.hidden, rng);
    n.out = zero_output ? Linear(cfg.hidden, cfg.feature_dim) : Linear::init(cfg.hidden, cfg.feature_dim, rng);
    return n;
  }

  int feature_dim() const { return out.out(); }
  int hidden() const { return mid.out(); }

  EpsNet zeros_like() const {
    EpsNet z;
    z.in = in.zeros_like();
    z.mid = mid.zeros_like();
    z.out = out.zeros_like();
    z.time_dim = time_dim;
    return z;
  }

  void append_params(std::vector<ParamView>& ps) {
    in.append_params("eps.in", ps);
    mid.append_params("eps.mid", ps);
    out.append_params("eps.out", ps);
  }
};

struct EpsNetPass {
  Mat input;  // (D + time_dim) x N
  Mat h1, h2;
  Mat output;
};

inline EpsNetPass eps_forward(const EpsNet& net, const Mat& x, const std::vector<int>& steps) {
  detail::require_dim(x.rows(), net.feature_dim(), "EpsNet: state width");
  detail::require_dim(static_cast<Eigen::Index>(steps.size()), x.cols(), "EpsNet: step count");
  EpsNetPass p;
  p.input.resize(x.rows() + net.time_dim, x.cols());
  p.input.topRows(x.rows()) = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    p.input.col(j).tail(net.time_dim) = time_embedding(steps[static_cast<std::size_t>(j)], net.time_dim);
  }
  p.h1 = net.in.forward(p.input).array().tanh();
  p.h2 = net.mid.forward(p.h1).array().tanh();
  p.output = net.out.forward(p.h2);
  return p;
}

/// Accumulates into `grad` and returns dL/dstate (D x N).
inline Mat eps_backward(const EpsNet& net, const EpsNetPass& p, const Mat& grad_out, EpsNet& grad) {
  Mat g2 = tanh_grad(p.h2, net.out.backward(p.h2, grad_out, grad.out));
  Mat g1 = tanh_grad(p.h1, net.mid.backward(p.h1, g2, grad.mid));
  Mat gin = net.in.backward(p.input, g1, grad.in);
  return gin.topRows(net.feature_dim());
}

inline Vec predict_noise(const EpsNet& net, const Vec& f_t, int t) {
  return eps_forward(net, f_t, {t}).output.col(0);
}

/// One reverse step. A null rng selects deterministic mode (no injected
/// noise at any step).
inline Vec reverse_step(const Vec& f_t, int t, const EpsNet& net, const NoiseSchedule& s, Rng* rng) {
  s.check_step(t, "reverse_step");
  const Vec eps_hat = predict_noise(net, f_t, t);
  Vec mean = (f_t - s.eps_coef(t) * eps_hat) / std::sqrt(s.alpha(t));
  if (rng != nullptr && t > 1) mean += std::sqrt(s.beta(t)) * rng->normal_vec(f_t.size());
  return mean;
}

// ---------------------------------------------------------------------------
// Reverse chain over a batch, keeping what the backward pass needs.

struct EnhancePass {
  int entry = 0;
  std::vector<EpsNetPass> nets;  // nets[k] evaluated at step entry - k
  Mat output;
};

/// Deterministic reverse chain from `entry` down to 1 over a D x N batch.
inline EnhancePass enhance_forward(const EpsNet& net, const NoiseSchedule& s, const Mat& x_in, int entry) {
  s.check_step(entry, "enhance");
  EnhancePass p;
  p.entry = entry;
  p.nets.reserve(static_cast<std::size_t>(entry));
  Mat x = x_in;
  for (int t = entry; t >= 1; --t) {
    p.nets.push_back(eps_forward(net, x, std::vector<int>(static_cast<std::size_t>(x.cols()), t)));
    x = (x - s.eps_coef(t) * p.nets.back().output) / std::sqrt(s.alpha(t));
  }
  p.output = std::move(x);
  return p;
}

inline Mat enhance_backward(const EpsNet& net, const NoiseSchedule& s, const EnhancePass& p, const Mat& grad_out,
                            EpsNet* grad) {
  Mat g = grad_out;
  for (int k = p.entry - 1; k >= 0; --k) {
    const int t = p.entry - k;
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
    const Mat g_eps = (-s.eps_coef(t) * inv_sqrt_alpha) * g;
    Mat through_net;
    if (grad != nullptr) {
      through_net = eps_backward(net, p.nets[static_cast<std::size_t>(k)], g_eps, *grad);
    } else {
      EpsNet scratch = net.zeros_like();
      through_net = eps_backward(net, p.nets[static_cast<std::size_t>(k)], g_eps, scratch);
    }
    g = inv_sqrt_alpha * g + through_net;
  }
  return g;
}

/// Runs the reverse chain on one combined feature, starting at `entry`
/// (0 means the last step T). With an rng the chain is stochastic.
inline CombinedFeature enhance(const CombinedFeature& f_in, const EpsNet& net, const NoiseSchedule& s,
                               Rng* rng, int entry = 0) {
  const int start = entry == 0 ? s.steps() : entry;
  s.check_step(start, "enhance");
  Vec x = f_in.values();
  for (int t = start; t >= 1; --t) x = reverse_step(x, t, net, s, rng);
  return CombinedFeature(std::move(x), f_in.w(), f_in.h(), f_in.c());
}

// ---------------------------------------------------------------------------

/// Draws for one noise-prediction loss evaluation.
struct AveDraw {
  std::vector<int> steps;
  Mat noise;  // D x N
};

/// Per sample, in order: t ~ U{1..T}, then D standard normals.
inline AveDraw draw_ave(Rng& rng, const NoiseSchedule& s, Eigen::Index dim, Eigen::Index n) {
  AveDraw d;
  d.noise.resize(dim, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    d.steps.push_back(1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(s.steps()))));
    d.noise.col(j) = rng.normal_vec(dim);
  }
  return d;
}

/// Batch-mean of ||eps_hat(f_t, t) - eps||^2 with f_t from marginal_sample.
/// When `grad` is non-null, parameter gradients (scaled by `weight`) are
/// accumulated into it.
inline double ave_loss_batch(const EpsNet& net, const Mat& f0, const NoiseSchedule& s, const AveDraw& d,
                             EpsNet* grad = nullptr, double weight = 1.0) {
  const Eigen::Index n = f0.cols();
  Mat ft(f0.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const int t = d.steps[static_cast<std::size_t>(j)];
    ft.col(j) = std::sqrt(s.alpha_bar(t)) * f0.col(j) + std::sqrt(1.0 - s.alpha_bar(t)) * d.noise.col(j);
  }
  const EpsNetPass p = eps_forward(net, ft, d.steps);
  const Mat diff = p.output - d.noise;
  const double loss = diff.squaredNorm() / static_cast<double>(n);
  if (grad != nullptr) eps_backward(net, p, (2.0 * weight / static_cast<double>(n)) * diff, *grad);
  return loss;
}

inline double ave_loss(const EpsNet& net, const CombinedFeature& f0, const NoiseSchedule& s, Rng& rng) {
  const AveDraw d = draw_ave(rng, s, f0.dim(), 1);
  return ave_loss_batch(net, f0.values(), s, d);
}

}  // namespace mavqa
