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

/// Relation-aware missing-modality generator.
///
/// Three slot banks hold L learnable rows each: visual rows of length w*h*c,
/// audio and text rows of length c. A surviving modality and the text are
/// each matched against their own bank (scaled dot product, softmax over
/// slots); the two addressing vectors are multiplied elementwise and
/// re-normalised with a second softmax; the result weights the rows of the
/// missing modality's bank.
///
/// Scores are always divided by sqrt(c), the channel dimension, including on
/// the visual path where the dot product runs over w*h*c entries.

#pragma once

#include "mavqa/core.hpp"
#include "mavqa/params.hpp"

#include <span>

namespace mavqa {

struct SlotBank {
  Mat visual;  // L x whc
  Mat audio;   // L x c
  Mat text;    // L x c
  int w = 0, h = 0;
  int c = 0;  // channel dimension, also the score scaling dimension

  SlotBank() = default;
  SlotBank(Mat g_visual, Mat g_audio, Mat g_text, int width, int height, int channels)
      : visual(std::move(g_visual)), audio(std::move(g_audio)), text(std::move(g_text)),
        w(width), h(height), c(channels) {
    if (visual.rows() != audio.rows() || audio.rows() != text.rows() || visual.rows() < 1) {
      throw DimensionError("SlotBank: banks must share a positive slot count");
    }
    if (w < 1 || h < 1 || c < 1 || audio.cols() != c || text.cols() != c ||
        visual.cols() != Eigen::Index(w) * h * c) {
      throw DimensionError("SlotBank: bank widths inconsistent with " + std::to_string(w) + "x" +
                           std::to_string(h) + "x" + std::to_string(c));
    }
    detail::require_finite(visual, "SlotBank.visual");
    detail::require_finite(audio, "SlotBank.audio");
    detail::require_finite(text, "SlotBank.text");
  }

  /// Entries i.i.d. N(0, 1/c).
  static SlotBank init(int slots, int w, int h, int c, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(c));
    Mat gv = rng.normal_mat(slots, w * h * c) * s;
    Mat ga = rng.normal_mat(slots, c) * s;
    Mat gt = rng.normal_mat(slots, c) * s;
    return SlotBank(std::move(gv), std::move(ga), std::move(gt), w, h, c);
  }

  int slots() const { return static_cast<int>(audio.rows()); }
  int visual_dim() const { return static_cast<int>(visual.cols()); }

  SlotBank zeros_like() const {
    SlotBank z;
    z.visual = Mat::Zero(visual.rows(), visual.cols());
    z.audio = Mat::Zero(audio.rows(), audio.cols());
    z.text = Mat::Zero(text.rows(), text.cols());
    z.w = w;
    z.h = h;
    z.c = c;
    return z;
  }

  void append_params(std::vector<ParamView>& out) {
    out.push_back(view("slots.visual", visual));
    out.push_back(view("slots.audio", audio));
    out.push_back(view("slots.text", text));
  }
};

/// Softmax weights over L slots; nonnegative and summing to one.
class AddressingVec {
 public:
  explicit AddressingVec(Vec weights) : w_(std::move(weights)) {}
  const Vec& weights() const { return w_; }
  int size() const { return static_cast<int>(w_.size()); }
  double operator[](int j) const { return w_[j]; }

 private:
  Vec w_;
};

inline AddressingVec address(const Vec& feature, const Mat& bank, int scale_dim) {
  if (scale_dim <= 0) throw ValidationError("address: scale dimension must be positive");
  detail::require_dim(feature.size(), bank.cols(), "address: feature vs bank width");
  const Vec scores = bank * feature / std::sqrt(static_cast<double>(scale_dim));
  return AddressingVec(softmax(scores));
}

inline AddressingVec combine_addressing(const AddressingVec& a1, const AddressingVec& a2) {
  detail::require_dim(a2.size(), a1.size(), "combine_addressing");
  return AddressingVec(softmax(a1.weights().cwiseProduct(a2.weights())));
}

// ---------------------------------------------------------------------------
// Batched recall. Columns of every matrix are samples.

/// Cached forward values for one recall direction.
struct RecallPass {
  Mat query;      // surviving modality, d x N
  Mat text;       // c x N
  Mat addr_query; // L x N
  Mat addr_text;  // L x N
  Mat combined;   // L x N
  Mat output;     // value width x N
};

inline RecallPass recall_forward(const Mat& query, const Mat& key_bank, const Mat& text,
                                 const Mat& text_bank, const Mat& value_bank, int c) {
  detail::require_dim(query.rows(), key_bank.cols(), "recall: query width");
  detail::require_dim(text.rows(), text_bank.cols(), "recall: text width");
  detail::require_dim(text.cols(), query.cols(), "recall: batch size");
  const double inv = 1.0 / std::sqrt(static_cast<double>(c));
  RecallPass p;
  p.query = query;
  p.text = text;
  p.addr_query = softmax_cols((key_bank * query) * inv);
  p.addr_text = softmax_cols((text_bank * text) * inv);
  p.combined = softmax_cols(p.addr_query.cwiseProduct(p.addr_text));
  p.output = value_bank.transpose() * p.combined;
  return p;
}

/// Accumulates bank gradients and returns (dL/dquery, dL/dtext).
inline std::pair<Mat, Mat> recall_backward(const RecallPass& p, const Mat& key_bank, const Mat& text_bank,
                                           const Mat& value_bank, int c, const Mat& grad_out,
                                           Mat& grad_key_bank, Mat& grad_text_bank, Mat& grad_value_bank) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(c));
  grad_value_bank.noalias() += p.combined * grad_out.transpose();
  const Mat grad_combined = value_bank * grad_out;
  const Mat grad_prod = softmax_cols_backward(p.combined, grad_combined);
  const Mat grad_aq = grad_prod.cwiseProduct(p.addr_text);
  const Mat grad_at = grad_prod.cwiseProduct(p.addr_query);
  const Mat grad_sq = softmax_cols_backward(p.addr_query, grad_aq) * inv;
  const Mat grad_st = softmax_cols_backward(p.addr_text, grad_at) * inv;
  grad_key_bank.noalias() += grad_sq * p.query.transpose();
  grad_text_bank.noalias() += grad_st * p.text.transpose();
  return {key_bank.transpose() * grad_sq, text_bank.transpose() * grad_st};
}

/// Both missing directions for a batch of complete samples.
struct RmmPass {
  RecallPass audio;   // pseudo audio from (visual, text)
  RecallPass visual;  // pseudo visual from (audio, text)
};

inline RmmPass rmm_forward(const SlotBank& bank, const Mat& audio, const Mat& visual, const Mat& text) {
  RmmPass p;
  p.audio = recall_forward(visual, bank.visual, text, bank.text, bank.audio, bank.c);
  p.visual = recall_forward(audio, bank.audio, text, bank.text, bank.visual, bank.c);
  return p;
}

struct RmmGrads {
  SlotBank bank;
  Mat audio;
  Mat visual;
  Mat text;
};

/// Backprop from upstream gradients on the pseudo audio (c x N) and pseudo
/// visual (whc x N) outputs. Either upstream may be empty (0 columns) to skip
/// that direction.
inline RmmGrads rmm_backward(const RmmPass& p, const SlotBank& bank, const Mat& grad_pseudo_audio,
                             const Mat& grad_pseudo_visual) {
  RmmGrads g;
  g.bank = bank.zeros_like();
  const Eigen::Index n = std::max(p.audio.query.cols(), p.visual.query.cols());
  g.audio = Mat::Zero(bank.audio.cols(), n);
  g.visual = Mat::Zero(bank.visual.cols(), n);
  g.text = Mat::Zero(bank.text.cols(), n);
  if (grad_pseudo_audio.cols() > 0) {
    auto [gq, gt] = recall_backward(p.audio, bank.visual, bank.text, bank.audio, bank.c,
                                    grad_pseudo_audio, g.bank.visual, g.bank.text, g.bank.audio);
    g.visual += gq;
    g.text += gt;
  }
  if (grad_pseudo_visual.cols() > 0) {
    auto [gq, gt] = recall_backward(p.visual, bank.audio, bank.text, bank.visual, bank.c,
                                    grad_pseudo_visual, g.bank.audio, g.bank.text, g.bank.visual);
    g.audio += gq;
    g.text += gt;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Per-sample entry points.

inline FeatureVec generate_pseudo_audio(const VisualFeatureMap& visual, const FeatureVec& text,
                                        const SlotBank& bank) {
  detail::require_dim(visual.size(), bank.visual_dim(), "generate_pseudo_audio: visual");
  detail::require_dim(text.dim(), bank.c, "generate_pseudo_audio: text");
  const auto av = address(visual.flat(), bank.visual, bank.c);
  const auto at = address(text.values(), bank.text, bank.c);
  const auto avt = combine_addressing(av, at);
  return FeatureVec(bank.audio.transpose() * avt.weights());
}

inline VisualFeatureMap generate_pseudo_visual(const FeatureVec& audio, const FeatureVec& text,
                                               const SlotBank& bank) {
  detail::require_dim(audio.dim(), bank.c, "generate_pseudo_visual: audio");
  detail::require_dim(text.dim(), bank.c, "generate_pseudo_visual: text");
  const auto aa = address(audio.values(), bank.audio, bank.c);
  const auto at = address(text.values(), bank.text, bank.c);
  const auto aat = combine_addressing(aa, at);
  return unflatten_visual(bank.visual.transpose() * aat.weights(), bank.w, bank.h, bank.c);
}

// ---------------------------------------------------------------------------
// Recalling loss: batch mean of squared L2 distances, audio term plus visual
// term. No averaging over feature dimensions.

struct RmmrLoss {
  double audio = 0.0;
  double visual = 0.0;
  double total() const { return audio + visual; }
};

inline RmmrLoss rmmr_loss(const Mat& real_a, const Mat& pseudo_a, const Mat& real_v, const Mat& pseudo_v) {
  if (real_a.rows() != pseudo_a.rows() || real_v.rows() != pseudo_v.rows()) {
    throw DimensionError("rmmr_loss: feature widths differ");
  }
  if (real_a.cols() != pseudo_a.cols() || real_v.cols() != pseudo_v.cols() ||
      real_a.cols() != real_v.cols()) {
    throw DimensionError("rmmr_loss: batch sizes differ");
  }
  if (real_a.cols() < 1) throw ValidationError("rmmr_loss: empty batch");
  const double n = static_cast<double>(real_a.cols());
  return {(pseudo_a - real_a).squaredNorm() / n, (pseudo_v - real_v).squaredNorm() / n};
}

inline double rmmr_loss(std::span<const FeatureVec> real_a, std::span<const FeatureVec> pseudo_a,
                        std::span<const VisualFeatureMap> real_v, std::span<const VisualFeatureMap> pseudo_v) {
  const std::size_t n = real_a.size();
  if (pseudo_a.size() != n || real_v.size() != n || pseudo_v.size() != n) {
    throw DimensionError("rmmr_loss: batch sizes differ");
  }
  if (n == 0) throw ValidationError("rmmr_loss: empty batch");
  double la = 0.0, lv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    detail::require_dim(pseudo_a[i].dim(), real_a[i].dim(), "rmmr_loss: audio");
    detail::require_dim(pseudo_v[i].size(), real_v[i].size(), "rmmr_loss: visual");
    la += (pseudo_a[i].values() - real_a[i].values()).squaredNorm();
    lv += (pseudo_v[i].flat() - real_v[i].flat()).squaredNorm();
  }
  return la / static_cast<double>(n) + lv / static_cast<double>(n);
}

/// dL_rmmr/dpseudo for one direction.
inline Mat rmmr_grad(const Mat& real, const Mat& pseudo) {
  return 2.0 * (pseudo - real) / static_cast<double>(real.cols());
}

}  // namespace mavqa
