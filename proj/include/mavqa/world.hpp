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

/// Synthetic trimodal world.
///
/// Each scene is a latent z ~ N(0, I_m). Audio and the flattened visual map
/// are tanh(A z) and tanh(V z) plus Gaussian noise; the text only sees the
/// first `cross_modal_rank` latent coordinates. The answer is the argmax of
/// a fixed projection of z, so text narrows the answer but the audio or the
/// visual stream is needed to pin it down. All fixed maps come from the
/// config seed.

#pragma once

#include "mavqa/binary_io.hpp"
#include "mavqa/core.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace mavqa {

struct WorldConfig {
  int m = 8;
  int c = 16;
  int w = 4;
  int h = 4;
  int classes = 8;
  double noise_std = 0.05;
  int cross_modal_rank = 4;
  std::uint64_t seed = 0;

  int visual_dim() const { return w * h * c; }

  void validate() const {
    if (m < 1 || c < 1 || w < 1 || h < 1) throw ValidationError("WorldConfig: dimensions must be positive");
    if (classes < 2) throw ValidationError("WorldConfig: need at least two classes");
    if (m == 1 && classes > 2) throw ValidationError("WorldConfig: more than two classes need m >= 2");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ValidationError("WorldConfig: noise_std must be >= 0");
    if (cross_modal_rank < 1 || cross_modal_rank > m) {
      throw ValidationError("WorldConfig: cross_modal_rank must lie in [1, m]");
    }
  }
};

struct SceneLatent {
  Vec z;
  int label = 0;
};

/// The fixed random maps of one world.
class World {
 public:
  explicit World(const WorldConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed ^ 0x5eed0f3a7d1b2c49ULL);
    const double sm = 1.0 / std::sqrt(static_cast<double>(cfg_.m));
    const double sr = 1.0 / std::sqrt(static_cast<double>(cfg_.cross_modal_rank));
    label_map_ = rng.normal_mat(cfg_.classes, cfg_.m);
    if (cfg_.classes <= cfg_.m) {
      // Orthonormal rows: z is rotation invariant, so classes are equiprobable.
      Eigen::HouseholderQR<Mat> qr(label_map_.transpose());
      label_map_ = Mat(qr.householderQ()).leftCols(cfg_.classes).transpose();
    } else {
      // More classes than latent dimensions: evenly spaced directions in a
      // random plane, so each class owns an equal wedge of the projected angle.
      const Mat basis = Mat(Eigen::HouseholderQR<Mat>(rng.normal_mat(cfg_.m, 2)).householderQ()).leftCols(2);
      for (int k = 0; k < cfg_.classes; ++k) {
        const double th = 2.0 * std::numbers::pi * k / cfg_.classes;
        label_map_.row(k) = (std::cos(th) * basis.col(0) + std::sin(th) * basis.col(1)).transpose();
      }
    }
    audio_map_ = rng.normal_mat(cfg_.c, cfg_.m) * sm;
    visual_map_ = rng.normal_mat(cfg_.visual_dim(), cfg_.m) * sm;
    text_map_ = rng.normal_mat(cfg_.c, cfg_.cross_modal_rank) * sr;
  }

  const WorldConfig& config() const { return cfg_; }
  const Mat& label_map() const { return label_map_; }
  const Mat& audio_map() const { return audio_map_; }
  const Mat& visual_map() const { return visual_map_; }
  const Mat& text_map() const { return text_map_; }

  int label_of(const Vec& z) const {
    Eigen::Index k;
    (label_map_ * z).maxCoeff(&k);
    return static_cast<int>(k);
  }

 private:
  WorldConfig cfg_;
  Mat label_map_, audio_map_, visual_map_, text_map_;
};

inline SceneLatent gen_scene(Rng& rng, const World& world) {
  SceneLatent s;
  s.z = rng.normal_vec(world.config().m);
  s.label = world.label_of(s.z);
  return s;
}

struct Modalities {
  FeatureVec audio;
  VisualFeatureMap visual;
  FeatureVec text;
};

/// Noise draws, in order: audio (c), visual (whc), text (c).
inline Modalities render_modalities(const SceneLatent& scene, const World& world, Rng& rng) {
  const auto& cfg = world.config();
  detail::require_dim(scene.z.size(), cfg.m, "render_modalities: latent");
  const auto noise = [&](Eigen::Index n) -> Vec {
    return cfg.noise_std == 0.0 ? Vec(Vec::Zero(n)) : Vec(cfg.noise_std * rng.normal_vec(n));
  };
  Vec a = (world.audio_map() * scene.z).array().tanh();
  a += noise(cfg.c);
  Vec v = (world.visual_map() * scene.z).array().tanh();
  v += noise(cfg.visual_dim());
  Vec t = (world.text_map() * scene.z.head(cfg.cross_modal_rank)).array().tanh();
  t += noise(cfg.c);
  return {FeatureVec(std::move(a)), VisualFeatureMap(cfg.w, cfg.h, cfg.c, std::move(v)), FeatureVec(std::move(t))};
}

// ---------------------------------------------------------------------------

struct Dataset {
  WorldConfig config;
  std::vector<TrimodalSample> samples;
  std::size_t train_end = 0;  // [0, train_end) train
  std::size_t val_end = 0;    // [train_end, val_end) val, [val_end, n) test

  enum class Split { Train, Val, Test, All };

  std::vector<TrimodalSample> split(Split s) const {
    auto range = [&](std::size_t b, std::size_t e) {
      return std::vector<TrimodalSample>(samples.begin() + static_cast<std::ptrdiff_t>(b),
                                         samples.begin() + static_cast<std::ptrdiff_t>(e));
    };
    switch (s) {
      case Split::Train: return range(0, train_end);
      case Split::Val: return range(train_end, val_end);
      case Split::Test: return range(val_end, samples.size());
      case Split::All: return samples;
    }
    return {};
  }
};

/// 70/10/20 split (floors for train and val, remainder to test).
inline void assign_splits(Dataset& d) {
  const std::size_t n = d.samples.size();
  d.train_end = n * 7 / 10;
  d.val_end = d.train_end + n / 10;
}

inline Dataset make_dataset(int n, const WorldConfig& cfg) {
  if (n < 10) throw ValidationError("make_dataset: need at least 10 samples");
  const World world(cfg);
  Rng rng(cfg.seed);
  Dataset d;
  d.config = cfg;
  d.samples.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const SceneLatent scene = gen_scene(rng, world);
    Modalities mods = render_modalities(scene, world, rng);
    d.samples.push_back({std::move(mods.audio), std::move(mods.visual), std::move(mods.text), scene.label, {}});
  }
  assign_splits(d);
  return d;
}

enum class Scenario { None, AudioMissing, VisualMissing };

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::None: return "complete";
    case Scenario::AudioMissing: return "audio-missing";
    case Scenario::VisualMissing: return "visual-missing";
  }
  return "?";
}

inline Scenario parse_scenario(const std::string& s) {
  if (s == "complete" || s == "none") return Scenario::None;
  if (s == "audio-missing") return Scenario::AudioMissing;
  if (s == "visual-missing") return Scenario::VisualMissing;
  throw ValidationError("unknown scenario '" + s + "'");
}

/// With probability `ratio`, clears the scenario's mask bit. Exactly one
/// uniform is drawn per call regardless of scenario.
inline TrimodalSample apply_missing(TrimodalSample sample, Scenario scenario, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ValidationError("apply_missing: ratio outside [0, 1]");
  const bool drop = rng.uniform() < ratio;
  if (drop && scenario == Scenario::AudioMissing) sample.mask = ModalityMask(false, sample.mask.visual_present);
  if (drop && scenario == Scenario::VisualMissing) sample.mask = ModalityMask(sample.mask.audio_present, false);
  return sample;
}

// ---------------------------------------------------------------------------
// Flat binary dataset file: "TMW1", then m, c, w, h, K, count, seed as u32,
// then per sample audio, visual, text as f64, label as i32, mask as one byte
// (bit 0 audio present, bit 1 visual present). Split boundaries are derived
// from the count on load.

inline std::string encode_dataset(const Dataset& d) {
  const auto& cfg = d.config;
  ByteWriter w;
  w.bytes("TMW1");
  for (int v : {cfg.m, cfg.c, cfg.w, cfg.h, cfg.classes}) w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(d.samples.size()));
  w.u32(static_cast<std::uint32_t>(cfg.seed & 0xffffffffULL));
  for (const auto& s : d.samples) {
    for (double x : s.audio.values()) w.f64(x);
    for (double x : s.visual.flat()) w.f64(x);
    for (double x : s.text.values()) w.f64(x);
    w.i32(s.label);
    w.u8(static_cast<std::uint8_t>((s.mask.audio_present ? 1 : 0) | (s.mask.visual_present ? 2 : 0)));
  }
  return w.data();
}

inline Dataset decode_dataset(std::string bytes) {
  ByteReader r(std::move(bytes));
  if (r.bytes(4) != "TMW1") throw ValidationError("dataset: bad magic");
  Dataset d;
  auto& cfg = d.config;
  cfg.m = static_cast<int>(r.u32());
  cfg.c = static_cast<int>(r.u32());
  cfg.w = static_cast<int>(r.u32());
  cfg.h = static_cast<int>(r.u32());
  cfg.classes = static_cast<int>(r.u32());
  const std::uint32_t count = r.u32();
  cfg.seed = r.u32();
  cfg.cross_modal_rank = std::min(cfg.cross_modal_rank, cfg.m);
  cfg.validate();
  d.samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto read_vec = [&](int n) {
      Vec v(n);
      for (int k = 0; k < n; ++k) v[k] = r.f64();
      return v;
    };
    Vec a = read_vec(cfg.c);
    Vec v = read_vec(cfg.visual_dim());
    Vec t = read_vec(cfg.c);
    const int label = r.i32();
    if (label < 0 || label >= cfg.classes) throw ValidationError("dataset: label out of range");
    const std::uint8_t mask = r.u8();
    d.samples.push_back({FeatureVec(std::move(a)), VisualFeatureMap(cfg.w, cfg.h, cfg.c, std::move(v)),
                         FeatureVec(std::move(t)), label, ModalityMask((mask & 1) != 0, (mask & 2) != 0)});
  }
  if (!r.at_end()) throw ValidationError("dataset: trailing bytes");
  assign_splits(d);
  return d;
}

inline void save_dataset(const std::string& path, const Dataset& d) { write_file(path, encode_dataset(d)); }
inline Dataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

}  // namespace mavqa
