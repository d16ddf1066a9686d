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

/// Small answer classifier standing in for a full question-answering
/// backbone, plus the cross-entropy and total-loss bookkeeping.

#pragma once

#include "mavqa/core.hpp"
#include "mavqa/params.hpp"

#include <array>
#include <span>
#include <vector>

namespace mavqa {

struct QaHeadConfig {
  int c = 16;
  int visual_dim = 256;
  int hidden = 64;
  int classes = 8;
};

/// Per-modality projections summed into one hidden vector, a tanh hidden
/// layer, and a linear output over answer classes.
struct QaHead {
  Linear audio, visual, text;
  Linear hidden, out;

  static QaHead init(const QaHeadConfig& cfg, Rng& rng) {
    if (cfg.c < 1 || cfg.visual_dim < 1 || cfg.hidden < 1 || cfg.classes < 2) {
      throw ValidationError("QaHead: bad dimensions");
    }
    QaHead q;
    q.audio = Linear::init(cfg.c, cfg.hidden, rng);
    q.visual = Linear::init(cfg.visual_dim, cfg.hidden, rng);
    q.text = Linear::init(cfg.c, cfg.hidden, rng);
    q.hidden = Linear::init(cfg.hidden, cfg.hidden, rng);
    q.out = Linear::init(cfg.hidden, cfg.classes, rng);
    return q;
  }

  int classes() const { return out.out(); }

  QaHead zeros_like() const {
    return {audio.zeros_like(), visual.zeros_like(), text.zeros_like(), hidden.zeros_like(), out.zeros_like()};
  }

  void append_params(std::vector<ParamView>& ps) {
    audio.append_params("qa.audio", ps);
    visual.append_params("qa.visual", ps);
    text.append_params("qa.text", ps);
    hidden.append_params("qa.hidden", ps);
    out.append_params("qa.out", ps);
  }
};

struct QaPass {
  Mat audio, visual, text;
  Mat h1, h2;
  Mat logits;  // K x N
};

inline QaPass qa_forward(const QaHead& q, const Mat& audio, const Mat& visual, const Mat& text) {
  detail::require_dim(audio.rows(), q.audio.in(), "QaHead: audio width");
  detail::require_dim(visual.rows(), q.visual.in(), "QaHead: visual width");
  detail::require_dim(text.rows(), q.text.in(), "QaHead: text width");
  if (visual.cols() != audio.cols() || text.cols() != audio.cols()) {
    throw DimensionError("QaHead: batch sizes differ");
  }
  QaPass p{audio, visual, text, {}, {}, {}};
  p.h1 = (q.audio.forward(audio) + q.visual.forward(visual) + q.text.forward(text)).array().tanh();
  p.h2 = q.hidden.forward(p.h1).array().tanh();
  p.logits = q.out.forward(p.h2);
  return p;
}

struct QaInputGrads {
  Mat audio, visual, text;
};

inline QaInputGrads qa_backward(const QaHead& q, const QaPass& p, const Mat& grad_logits, QaHead& grad) {
  const Mat g2 = tanh_grad(p.h2, q.out.backward(p.h2, grad_logits, grad.out));
  const Mat g1 = tanh_grad(p.h1, q.hidden.backward(p.h1, g2, grad.hidden));
  return {q.audio.backward(p.audio, g1, grad.audio), q.visual.backward(p.visual, g1, grad.visual),
          q.text.backward(p.text, g1, grad.text)};
}

inline Vec predict(const QaHead& q, const FeatureVec& audio, const VisualFeatureMap& visual, const FeatureVec& text) {
  return qa_forward(q, audio.values(), visual.flat(), text.values()).logits.col(0);
}

inline double ce_loss(const Vec& logits, int label) {
  if (label < 0 || label >= logits.size()) {
    throw ValidationError("ce_loss: label " + std::to_string(label) + " outside [0, " +
                          std::to_string(logits.size()) + ")");
  }
  return log_sum_exp(logits) - logits[label];
}

/// Batch-mean cross-entropy over columns; fills dL/dlogits when requested.
inline double ce_loss_batch(const Mat& logits, std::span<const int> labels, Mat* grad = nullptr) {
  detail::require_dim(static_cast<Eigen::Index>(labels.size()), logits.cols(), "ce_loss: labels");
  const double n = static_cast<double>(logits.cols());
  double total = 0.0;
  if (grad != nullptr) grad->resize(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const Vec col = logits.col(j);
    total += ce_loss(col, labels[static_cast<std::size_t>(j)]);
    if (grad != nullptr) {
      Vec g = softmax(col);
      g[labels[static_cast<std::size_t>(j)]] -= 1.0;
      grad->col(j) = g / n;
    }
  }
  return total / n;
}

/// One (audio, visual, text) input set for a batch.
struct FeatureTriple {
  Mat audio, visual, text;
};

/// Sum of three batch-mean cross-entropies: real features, enhanced
/// (pseudo audio, visual), enhanced (audio, pseudo visual). `weights`
/// multiplies each term; all ones gives the plain sum.
inline double avqa_loss(const QaHead& q, std::span<const FeatureTriple> triples, std::span<const int> labels,
                        std::array<double, 3> weights = {1.0, 1.0, 1.0}) {
  if (triples.size() != 3) throw ValidationError("avqa_loss: need exactly three feature triples");
  double total = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& tr = triples[k];
    if (tr.audio.cols() == 0 || tr.visual.cols() == 0 || tr.text.cols() == 0) {
      throw ValidationError("avqa_loss: feature triple " + std::to_string(k) + " is missing");
    }
    total += weights[k] * ce_loss_batch(qa_forward(q, tr.audio, tr.visual, tr.text).logits, labels);
  }
  return total;
}

struct LossBreakdown {
  double l_avqa = 0.0;
  double l_rmmr = 0.0;
  double l_ave = 0.0;
  double total = 0.0;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
};

inline LossBreakdown total_loss(double l_avqa, double l_rmmr, double l_ave, double lambda1 = 1.0,
                                double lambda2 = 1.0) {
  for (double v : {l_avqa, l_rmmr, l_ave, lambda1, lambda2}) {
    if (!std::isfinite(v)) throw NumericError("total_loss: non-finite input");
  }
  return {l_avqa, l_rmmr, l_ave, l_avqa + lambda1 * l_rmmr + lambda2 * l_ave, lambda1, lambda2};
}

}  // namespace mavqa
