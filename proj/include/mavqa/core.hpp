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

/// Shared feature types, errors, deterministic randomness and the small
/// numeric helpers (softmax, shape checks) every other header builds on.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mavqa {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Errors. Validation problems (bad shapes, bad config) map to CLI exit code 1;
// numeric problems (divergence, non-finite values) map to exit code 2.

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

inline void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected length " + std::to_string(want) +
                         ", got " + std::to_string(got));
  }
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.derived().array().isFinite().all();
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& x, const char* what) {
  if (!all_finite(x)) throw ValidationError(std::string(what) + ": non-finite entry");
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// One modality embedding of length c (audio, text, or a pseudo/enhanced
/// version of either).
class FeatureVec {
 public:
  FeatureVec() = default;
  explicit FeatureVec(Vec values) : values_(std::move(values)) {
    if (values_.size() < 1) throw DimensionError("FeatureVec: empty");
    detail::require_finite(values_, "FeatureVec");
  }
  static FeatureVec zeros(int c) { return FeatureVec(Vec::Zero(c)); }

  int dim() const { return static_cast<int>(values_.size()); }
  const Vec& values() const { return values_; }
  double operator[](int i) const { return values_[i]; }

  bool operator==(const FeatureVec& o) const {
    return values_.size() == o.values_.size() && values_ == o.values_;
  }

 private:
  Vec values_;
};

/// w x h x c visual feature map. Storage is row-major with w outermost and
/// c innermost: (iw, ih, ic) lives at iw*h*c + ih*c + ic.
class VisualFeatureMap {
 public:
  VisualFeatureMap() = default;
  VisualFeatureMap(int w, int h, int c, Vec flat) : w_(w), h_(h), c_(c), data_(std::move(flat)) {
    if (w < 1 || h < 1 || c < 1) throw DimensionError("VisualFeatureMap: non-positive dimension");
    detail::require_dim(data_.size(), Eigen::Index(w) * h * c, "VisualFeatureMap");
    detail::require_finite(data_, "VisualFeatureMap");
  }
  static VisualFeatureMap zeros(int w, int h, int c) {
    return VisualFeatureMap(w, h, c, Vec::Zero(Eigen::Index(w) * h * c));
  }

  int w() const { return w_; }
  int h() const { return h_; }
  int c() const { return c_; }
  int size() const { return w_ * h_ * c_; }

  double at(int iw, int ih, int ic) const { return data_[(iw * h_ + ih) * c_ + ic]; }
  const Vec& flat() const { return data_; }

  bool operator==(const VisualFeatureMap& o) const {
    return w_ == o.w_ && h_ == o.h_ && c_ == o.c_ && data_ == o.data_;
  }

 private:
  int w_ = 0, h_ = 0, c_ = 0;
  Vec data_;
};

inline Vec flatten_visual(const VisualFeatureMap& v) { return v.flat(); }

inline VisualFeatureMap unflatten_visual(const Vec& x, int w, int h, int c) {
  if (x.size() != Eigen::Index(w) * h * c) {
    throw DimensionError("unflatten_visual: length " + std::to_string(x.size()) +
                         " does not match " + std::to_string(w) + "x" + std::to_string(h) + "x" +
                         std::to_string(c));
  }
  return VisualFeatureMap(w, h, c, x);
}

/// Text is always present; at most one of audio/visual may be absent.
struct ModalityMask {
  bool audio_present = true;
  bool visual_present = true;

  ModalityMask() = default;
  ModalityMask(bool audio, bool visual) : audio_present(audio), visual_present(visual) {
    if (!audio && !visual) throw ValidationError("ModalityMask: audio and visual both missing");
  }
  bool complete() const { return audio_present && visual_present; }
  bool operator==(const ModalityMask&) const = default;
};

struct TrimodalSample {
  FeatureVec audio;
  VisualFeatureMap visual;
  FeatureVec text;
  int label = 0;
  ModalityMask mask;
};

/// Non-empty, dimensionally uniform list of samples.
class Batch {
 public:
  explicit Batch(std::vector<TrimodalSample> samples) : samples_(std::move(samples)) {
    if (samples_.empty()) throw ValidationError("Batch: empty");
    const auto& s0 = samples_.front();
    for (const auto& s : samples_) {
      if (s.audio.dim() != s0.audio.dim() || s.text.dim() != s0.text.dim() ||
          s.visual.w() != s0.visual.w() || s.visual.h() != s0.visual.h() ||
          s.visual.c() != s0.visual.c()) {
        throw DimensionError("Batch: samples disagree on dimensions");
      }
    }
  }
  int size() const { return static_cast<int>(samples_.size()); }
  const TrimodalSample& operator[](int i) const { return samples_[i]; }
  const std::vector<TrimodalSample>& samples() const { return samples_; }

  /// Column-stacked matrices, one column per sample.
  Mat audio_matrix() const {
    Mat m(samples_.front().audio.dim(), size());
    for (int i = 0; i < size(); ++i) m.col(i) = samples_[i].audio.values();
    return m;
  }
  Mat visual_matrix() const {
    Mat m(samples_.front().visual.size(), size());
    for (int i = 0; i < size(); ++i) m.col(i) = samples_[i].visual.flat();
    return m;
  }
  Mat text_matrix() const {
    Mat m(samples_.front().text.dim(), size());
    for (int i = 0; i < size(); ++i) m.col(i) = samples_[i].text.values();
    return m;
  }
  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(samples_.size());
    for (const auto& s : samples_) out.push_back(s.label);
    return out;
  }

 private:
  std::vector<TrimodalSample> samples_;
};

// ---------------------------------------------------------------------------

/// Seeded random stream. Uniforms take the top 53 bits of a 64-bit Mersenne
/// twister draw and normals use Box-Muller without caching, so the stream is
/// fully described by the engine state and reproducible across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw ValidationError("Rng::uniform_int: empty range");
    // Rejection sampling keeps the draw exactly uniform.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Vec normal_vec(Eigen::Index n) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }
  Mat normal_mat(Eigen::Index r, Eigen::Index c) {
    Mat m(r, c);
    // column-major fill order is part of the determinism contract
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal();
    return m;
  }

  /// Child stream seeded from this one.
  Rng fork() { return Rng(next_u64()); }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }
  void set_state(const std::string& s) {
    std::istringstream is(s);
    std::mt19937_64 e;
    is >> e;
    if (is.fail()) throw ValidationError("Rng: malformed state");
    engine_ = e;
  }

  bool operator==(const Rng& o) const { return engine_ == o.engine_; }

 private:
  std::mt19937_64 engine_;
};

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// ---------------------------------------------------------------------------
// Softmax helpers, all with max subtraction.

inline Vec softmax(const Vec& logits) {
  Vec e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

/// Column-wise softmax.
inline Mat softmax_cols(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) out.col(j) = softmax(logits.col(j));
  return out;
}

/// Backward of a column-wise softmax: given y = softmax(x) and dL/dy,
/// returns dL/dx = y * (g - <y, g>).
inline Mat softmax_cols_backward(const Mat& y, const Mat& grad_y) {
  Mat out(y.rows(), y.cols());
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    const double dot = y.col(j).dot(grad_y.col(j));
    out.col(j) = y.col(j).array() * (grad_y.col(j).array() - dot);
  }
  return out;
}

inline double log_sum_exp(const Vec& x) {
  const double m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

}  // namespace mavqa
