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

/// Joint training of the slot banks, the noise predictor and the answer head.
///
/// Every batch is complete. Per batch the objective is
///
///   L = CE(a, v, t) + CE(enh(pa, v), t) + CE(enh(a, pv), t)
///       + lambda1 * L_rmmr + lambda2 * L_ave
///
/// where pa, pv are slot-bank recalls and enh() is the deterministic reverse
/// chain. Gradients of the two enhanced answer terms flow back through the
/// chain into the noise predictor and the slot banks unless
/// `detach_enhanced` is set.

#pragma once

#include "mavqa/config.hpp"
#include "mavqa/core.hpp"
#include "mavqa/diffusion.hpp"
#include "mavqa/params.hpp"
#include "mavqa/qa_head.hpp"
#include "mavqa/rmm.hpp"
#include "mavqa/world.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace mavqa {

struct Models {
  SlotBank bank;
  EpsNet eps;
  QaHead head;
  NoiseSchedule schedule;
  int entry = 10;  // reverse-chain entry step

  /// Deterministic initialisation from a seed; the model rng stream is
  /// separate from the training stream.
  static Models init(const ModelConfig& mc, const WorldConfig& wc, std::uint64_t seed) {
    mc.validate();
    wc.validate();
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    Models m;
    m.bank = SlotBank::init(mc.slots, wc.w, wc.h, wc.c, rng);
    m.eps = EpsNet::init({wc.c + wc.visual_dim(), mc.eps_hidden, mc.time_dim}, rng);
    m.head = QaHead::init({wc.c, wc.visual_dim(), mc.qa_hidden, wc.classes}, rng);
    m.schedule = make_schedule(mc.timesteps, mc.beta_start, mc.beta_end);
    m.entry = mc.entry();
    return m;
  }

  int c() const { return bank.c; }
  int visual_dim() const { return bank.visual_dim(); }

  Models zeros_like() const {
    Models z;
    z.bank = bank.zeros_like();
    z.eps = eps.zeros_like();
    z.head = head.zeros_like();
    z.schedule = schedule;
    z.entry = entry;
    return z;
  }

  std::vector<ParamView> params() {
    std::vector<ParamView> ps;
    bank.append_params(ps);
    eps.append_params(ps);
    head.append_params(ps);
    return ps;
  }
};

/// Parameter group of a view: "slots", "eps" or "qa".
inline std::string param_group(const ParamView& p) { return p.name.substr(0, p.name.find('.')); }

// ---------------------------------------------------------------------------

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Vec> m, v;

  static AdamState for_params(const std::vector<ParamView>& ps, const TrainConfig& tc) {
    AdamState s;
    s.lr = tc.lr;
    s.beta1 = tc.adam_beta1;
    s.beta2 = tc.adam_beta2;
    s.eps = tc.adam_eps;
    for (const auto& p : ps) {
      s.m.push_back(Vec::Zero(p.size()));
      s.v.push_back(Vec::Zero(p.size()));
    }
    return s;
  }
};

/// Bias-corrected Adam update, in place.
inline void adam_step(AdamState& s, const std::vector<ParamView>& params, const std::vector<ParamView>& grads) {
  require_same_layout(params, grads);
  if (s.m.size() != params.size() || s.v.size() != params.size()) {
    throw DimensionError("adam_step: moment count does not match parameter count");
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    detail::require_dim(s.m[i].size(), params[i].size(), "adam_step: moment shape");
    auto p = params[i].span();
    auto g = grads[i].span();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const auto ki = static_cast<Eigen::Index>(k);
      s.m[i][ki] = s.beta1 * s.m[i][ki] + (1.0 - s.beta1) * g[k];
      s.v[i][ki] = s.beta2 * s.v[i][ki] + (1.0 - s.beta2) * g[k] * g[k];
      const double mh = s.m[i][ki] / c1;
      const double vh = s.v[i][ki] / c2;
      p[k] -= s.lr * mh / (std::sqrt(vh) + s.eps);
    }
  }
}

// ---------------------------------------------------------------------------

/// Column-stacked complete batch.
struct BatchData {
  Mat audio, visual, text;
  std::vector<int> labels;

  static BatchData from(const Batch& b) { return {b.audio_matrix(), b.visual_matrix(), b.text_matrix(), b.labels()}; }
  int size() const { return static_cast<int>(audio.cols()); }
};

inline Mat stack_av(const Mat& audio, const Mat& visual) {
  Mat x(audio.rows() + visual.rows(), audio.cols());
  x.topRows(audio.rows()) = audio;
  x.bottomRows(visual.rows()) = visual;
  return x;
}

/// Evaluates the joint objective on one batch. With `grads` non-null the
/// full gradient of `total` is written there (it must be zeros_like).
inline LossBreakdown joint_loss(const Models& m, const BatchData& b, const TrainConfig& tc, const AveDraw& draw,
                                Models* grads = nullptr) {
  const int c = m.c();
  const auto wts = tc.term_weights();
  const bool want = grads != nullptr;

  // Real-feature answer term.
  Mat g_logits;
  const QaPass qa_real = qa_forward(m.head, b.audio, b.visual, b.text);
  const double ce_real = ce_loss_batch(qa_real.logits, b.labels, want ? &g_logits : nullptr);
  if (want) qa_backward(m.head, qa_real, wts[0] * g_logits, grads->head);

  // Slot-bank recall for both directions.
  const RmmPass rmm = rmm_forward(m.bank, b.audio, b.visual, b.text);
  const RmmrLoss rl = rmmr_loss(b.audio, rmm.audio.output, b.visual, rmm.visual.output);
  Mat g_pa, g_pv;
  if (want) {
    g_pa = tc.lambda1 * rmmr_grad(b.audio, rmm.audio.output);
    g_pv = tc.lambda1 * rmmr_grad(b.visual, rmm.visual.output);
  }

  // Enhanced answer terms.
  const auto enhanced_term = [&](const Mat& audio_in, const Mat& visual_in, double weight, Mat* g_audio_in,
                                 Mat* g_visual_in) {
    const EnhancePass ep = enhance_forward(m.eps, m.schedule, stack_av(audio_in, visual_in), m.entry);
    const Mat ea = ep.output.topRows(c);
    const Mat ev = ep.output.bottomRows(ep.output.rows() - c);
    const QaPass qp = qa_forward(m.head, ea, ev, b.text);
    Mat gl;
    const double ce = ce_loss_batch(qp.logits, b.labels, want ? &gl : nullptr);
    if (want) {
      const QaInputGrads gi = qa_backward(m.head, qp, weight * gl, grads->head);
      if (!tc.detach_enhanced) {
        const Mat g_in = enhance_backward(m.eps, m.schedule, ep, stack_av(gi.audio, gi.visual), &grads->eps);
        if (g_audio_in) *g_audio_in += g_in.topRows(c);
        if (g_visual_in) *g_visual_in += g_in.bottomRows(g_in.rows() - c);
      }
    }
    return ce;
  };
  const double ce_amiss = enhanced_term(rmm.audio.output, b.visual, wts[1], want ? &g_pa : nullptr, nullptr);
  const double ce_vmiss = enhanced_term(b.audio, rmm.visual.output, wts[2], nullptr, want ? &g_pv : nullptr);

  if (want) {
    RmmGrads rg = rmm_backward(rmm, m.bank, g_pa, g_pv);
    grads->bank.visual += rg.bank.visual;
    grads->bank.audio += rg.bank.audio;
    grads->bank.text += rg.bank.text;
  }

  // Noise-prediction term on the real concatenation.
  const double l_ave =
      ave_loss_batch(m.eps, stack_av(b.audio, b.visual), m.schedule, draw, want ? &grads->eps : nullptr, tc.lambda2);

  const double l_avqa = wts[0] * ce_real + wts[1] * ce_amiss + wts[2] * ce_vmiss;
  const std::pair<const char*, double> terms[] = {{"l_avqa", l_avqa}, {"l_rmmr", rl.total()}, {"l_ave", l_ave}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) throw NumericError(std::string("training diverged: ") + name + " is not finite");
  }
  return total_loss(l_avqa, rl.total(), l_ave, tc.lambda1, tc.lambda2);
}

inline void zero_frozen(Models& grads, const TrainConfig& tc) {
  if (tc.freeze_rmm) grads.bank = grads.bank.zeros_like();
  if (tc.freeze_eps) grads.eps = grads.eps.zeros_like();
}

/// One optimisation step: draws the noise-prediction sample, evaluates the
/// objective and its gradient, and applies Adam to every parameter.
inline LossBreakdown train_step(Models& m, AdamState& adam, const BatchData& b, const TrainConfig& tc, Rng& rng) {
  const AveDraw draw = draw_ave(rng, m.schedule, m.c() + m.visual_dim(), b.size());
  Models grads = m.zeros_like();
  const LossBreakdown lb = joint_loss(m, b, tc, draw, &grads);
  zero_frozen(grads, tc);
  for (const auto& g : grads.params()) {
    if (!detail::all_finite(g.map())) throw NumericError("non-finite gradient in '" + g.name + "'");
  }
  adam_step(adam, m.params(), grads.params());
  return lb;
}

// ---------------------------------------------------------------------------

struct EpochStats {
  int epoch = 0;  // 1-based
  double l_avqa = 0.0, l_rmmr = 0.0, l_ave = 0.0, total = 0.0;
};

/// Everything needed to continue a run bit-exactly.
struct TrainerState {
  Models models;
  AdamState adam;
  Rng rng;
  int epochs_done = 0;
  std::vector<EpochStats> history;

  static TrainerState fresh(const RunConfig& rc) {
    TrainerState s;
    s.models = Models::init(rc.model, rc.world, rc.train.seed);
    s.adam = AdamState::for_params(s.models.params(), rc.train);
    s.rng = Rng(rc.train.seed);
    return s;
  }
};

inline BatchData gather(const std::vector<TrimodalSample>& samples, std::span<const std::size_t> idx) {
  const auto& s0 = samples.at(idx.front());
  BatchData b;
  const auto n = static_cast<Eigen::Index>(idx.size());
  b.audio.resize(s0.audio.dim(), n);
  b.visual.resize(s0.visual.size(), n);
  b.text.resize(s0.text.dim(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& s = samples.at(idx[static_cast<std::size_t>(j)]);
    b.audio.col(j) = s.audio.values();
    b.visual.col(j) = s.visual.flat();
    b.text.col(j) = s.text.values();
    b.labels.push_back(s.label);
  }
  return b;
}

/// Fisher-Yates shuffle of 0..n-1 driven by `rng`.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

/// Runs one epoch over `train` and appends its mean losses to the history.
inline EpochStats train_epoch(TrainerState& st, const std::vector<TrimodalSample>& train, const TrainConfig& tc) {
  if (train.empty()) throw ValidationError("train_epoch: empty training split");
  const auto order = shuffled_indices(train.size(), st.rng);
  EpochStats e;
  e.epoch = st.epochs_done + 1;
  int batches = 0;
  const auto bs = static_cast<std::size_t>(tc.batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t len = std::min(bs, order.size() - start);
    const BatchData b = gather(train, std::span<const std::size_t>(order).subspan(start, len));
    const LossBreakdown lb = train_step(st.models, st.adam, b, tc, st.rng);
    e.l_avqa += lb.l_avqa;
    e.l_rmmr += lb.l_rmmr;
    e.l_ave += lb.l_ave;
    e.total += lb.total;
    ++batches;
  }
  e.l_avqa /= batches;
  e.l_rmmr /= batches;
  e.l_ave /= batches;
  e.total /= batches;
  ++st.epochs_done;
  st.history.push_back(e);
  return e;
}

// ---------------------------------------------------------------------------
// Evaluation.

/// What replaces a missing modality at evaluation time.
enum class Arm {
  Neither,  // zeros
  RmmOnly,  // slot-bank recall, fed straight to the head
  AvrOnly,  // zeros, then the reverse chain
  Both,     // slot-bank recall, then the reverse chain
};

inline std::string to_string(Arm a) {
  switch (a) {
    case Arm::Neither: return "neither";
    case Arm::RmmOnly: return "rmm";
    case Arm::AvrOnly: return "avr";
    case Arm::Both: return "both";
  }
  return "?";
}

inline Arm parse_arm(const std::string& s) {
  if (s == "neither" || s == "zero-fill") return Arm::Neither;
  if (s == "rmm") return Arm::RmmOnly;
  if (s == "avr") return Arm::AvrOnly;
  if (s == "both") return Arm::Both;
  throw ValidationError("unknown arm '" + s + "'");
}

inline bool uses_rmm(Arm a) { return a == Arm::RmmOnly || a == Arm::Both; }
inline bool uses_avr(Arm a) { return a == Arm::AvrOnly || a == Arm::Both; }

struct EvalMetrics {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;  // 0 for classes absent from the split
  std::vector<int> per_class_count;
  double pseudo_mse_a = 0.0;  // mean squared L2 error of recalled audio
  double pseudo_mse_v = 0.0;
  int n = 0;
  int n_missing = 0;
};

/// Answer logits for a batch whose missing modality (if any) is given by
/// `missing`, substituting according to `arm`.
inline Mat answer_logits(const Models& m, const BatchData& b, Scenario missing, Arm arm) {
  if (missing == Scenario::None) return qa_forward(m.head, b.audio, b.visual, b.text).logits;
  Mat audio = b.audio, visual = b.visual;
  if (missing == Scenario::AudioMissing) {
    audio = uses_rmm(arm) ? recall_forward(b.visual, m.bank.visual, b.text, m.bank.text, m.bank.audio, m.c()).output
                          : Mat::Zero(b.audio.rows(), b.audio.cols());
  } else {
    visual = uses_rmm(arm) ? recall_forward(b.audio, m.bank.audio, b.text, m.bank.text, m.bank.visual, m.c()).output
                           : Mat::Zero(b.visual.rows(), b.visual.cols());
  }
  if (uses_avr(arm)) {
    const Mat x = enhance_forward(m.eps, m.schedule, stack_av(audio, visual), m.entry).output;
    audio = x.topRows(m.c());
    visual = x.bottomRows(x.rows() - m.c());
  }
  return qa_forward(m.head, audio, visual, b.text).logits;
}

/// Masks each sample with probability `ratio` (one uniform per sample, in
/// order), answers with the configured substitution, and reports accuracy
/// and recall error over the split.
inline EvalMetrics evaluate(const Models& m, const std::vector<TrimodalSample>& split, Scenario scenario,
                            double ratio, Rng& rng, Arm arm = Arm::Both, std::size_t chunk = 256) {
  if (split.empty()) throw ValidationError("evaluate: empty split");
  EvalMetrics out;
  const int k = m.head.classes();
  out.per_class_accuracy.assign(static_cast<std::size_t>(k), 0.0);
  out.per_class_count.assign(static_cast<std::size_t>(k), 0);
  std::vector<int> correct_by_class(static_cast<std::size_t>(k), 0);

  std::vector<std::size_t> complete_idx, missing_idx;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const TrimodalSample s = apply_missing(split[i], scenario, ratio, rng);
    (s.mask.complete() ? complete_idx : missing_idx).push_back(i);
  }
  out.n = static_cast<int>(split.size());
  out.n_missing = static_cast<int>(missing_idx.size());

  int correct = 0;
  const auto score = [&](const std::vector<std::size_t>& idx, Scenario miss) {
    for (std::size_t start = 0; start < idx.size(); start += chunk) {
      const std::size_t len = std::min(chunk, idx.size() - start);
      const auto sub = std::span<const std::size_t>(idx).subspan(start, len);
      const BatchData b = gather(split, sub);
      const Mat logits = answer_logits(m, b, miss, arm);
      for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        Eigen::Index pred;
        logits.col(j).maxCoeff(&pred);
        const int label = b.labels[static_cast<std::size_t>(j)];
        ++out.per_class_count[static_cast<std::size_t>(label)];
        if (pred == label) {
          ++correct;
          ++correct_by_class[static_cast<std::size_t>(label)];
        }
      }
    }
  };
  score(complete_idx, Scenario::None);
  score(missing_idx, scenario);

  out.accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
  for (std::size_t c = 0; c < correct_by_class.size(); ++c) {
    if (out.per_class_count[c] > 0) {
      out.per_class_accuracy[c] = static_cast<double>(correct_by_class[c]) / out.per_class_count[c];
    }
  }

  // Recall error over the whole split, independent of the mask.
  std::vector<std::size_t> all(split.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  double sa = 0.0, sv = 0.0;
  for (std::size_t start = 0; start < all.size(); start += chunk) {
    const std::size_t len = std::min(chunk, all.size() - start);
    const BatchData b = gather(split, std::span<const std::size_t>(all).subspan(start, len));
    const RmmPass p = rmm_forward(m.bank, b.audio, b.visual, b.text);
    sa += (p.audio.output - b.audio).squaredNorm();
    sv += (p.visual.output - b.visual).squaredNorm();
  }
  out.pseudo_mse_a = sa / static_cast<double>(split.size());
  out.pseudo_mse_v = sv / static_cast<double>(split.size());
  return out;
}

// ---------------------------------------------------------------------------
// Gradient verification by central differences.

struct GroupCheck {
  std::string group;
  double max_rel_error = 0.0;  // max |analytic - numeric| / max(max |analytic|, max |numeric|)
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  std::size_t entries = 0;
};

struct GradCheckReport {
  LossBreakdown loss;
  std::vector<GroupCheck> groups;  // slots, eps, qa

  double worst() const {
    double w = 0.0;
    for (const auto& g : groups) w = std::max(w, g.max_rel_error);
    return w;
  }
};

/// Compares the analytic gradient of the joint objective with central
/// differences for every parameter entry. `draw` fixes the noise-prediction
/// sample so the objective is a deterministic function of the parameters.
inline GradCheckReport grad_check(const Models& models, const BatchData& probe, const TrainConfig& tc,
                                  const AveDraw& draw, double step = 1e-5) {
  GradCheckReport rep;
  Models work = models;
  Models analytic = models.zeros_like();
  rep.loss = joint_loss(work, probe, tc, draw, &analytic);
  zero_frozen(analytic, tc);

  struct Acc {
    double max_abs_diff = 0.0, max_a = 0.0, max_n = 0.0, sq_a = 0.0, sq_n = 0.0;
    std::size_t n = 0;
  };
  std::map<std::string, Acc> acc;
  std::vector<std::string> order;
  auto ps = work.params();
  auto gs = analytic.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const std::string grp = param_group(ps[i]);
    if (!acc.count(grp)) order.push_back(grp);
    Acc& a = acc[grp];
    const bool frozen = (grp == "slots" && tc.freeze_rmm) || (grp == "eps" && tc.freeze_eps);
    auto p = ps[i].span();
    auto g = gs[i].span();
    for (std::size_t k = 0; k < p.size(); ++k) {
      double numeric = 0.0;
      if (!frozen) {
        const double orig = p[k];
        p[k] = orig + step;
        const double up = joint_loss(work, probe, tc, draw).total;
        p[k] = orig - step;
        const double down = joint_loss(work, probe, tc, draw).total;
        p[k] = orig;
        numeric = (up - down) / (2.0 * step);
      }
      a.max_abs_diff = std::max(a.max_abs_diff, std::abs(g[k] - numeric));
      a.max_a = std::max(a.max_a, std::abs(g[k]));
      a.max_n = std::max(a.max_n, std::abs(numeric));
      a.sq_a += g[k] * g[k];
      a.sq_n += numeric * numeric;
      ++a.n;
    }
  }
  for (const auto& grp : order) {
    const Acc& a = acc[grp];
    const double denom = std::max(a.max_a, a.max_n);
    rep.groups.push_back({grp, denom > 0.0 ? a.max_abs_diff / denom : 0.0, std::sqrt(a.sq_a), std::sqrt(a.sq_n), a.n});
  }
  return rep;
}

/// Small random instance for grad_check: L=3 slots, c=2, w=h=1, a
/// non-zero noise-predictor output layer and a short chain, so every path
/// of the objective carries gradient and central differences stay cheap.
struct GradProbe {
  Models models;
  BatchData batch;
  TrainConfig train;
  AveDraw draw;
};

inline GradProbe make_grad_probe(std::uint64_t seed, int batch = 3) {
  Rng rng(seed);
  const int c = 2, w = 1, h = 1, k = 3;
  GradProbe p;
  p.models.bank = SlotBank::init(3, w, h, c, rng);
  p.models.bank.visual *= 2.0;
  p.models.bank.audio *= 2.0;
  p.models.bank.text *= 2.0;
  p.models.eps = EpsNet::init({2 * c, 5, 4}, rng, /*zero_output=*/false);
  p.models.head = QaHead::init({c, w * h * c, 4, k}, rng);
  p.models.schedule = make_schedule(3, 0.05, 0.3);
  p.models.entry = 3;
  p.batch.audio = rng.normal_mat(c, batch);
  p.batch.visual = rng.normal_mat(w * h * c, batch);
  p.batch.text = rng.normal_mat(c, batch);
  for (int j = 0; j < batch; ++j) p.batch.labels.push_back(static_cast<int>(rng.uniform_int(k)));
  p.draw = draw_ave(rng, p.models.schedule, 2 * c, batch);
  return p;
}

}  // namespace mavqa
