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

/// Run configuration: world, model, training and experiment-grid settings,
/// read from `key = value` text files. `to_config_text` renders a canonical
/// form used for checkpoints and for the provenance hash in reports.

#pragma once

#include "mavqa/core.hpp"
#include "mavqa/world.hpp"

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace mavqa {

struct ModelConfig {
  int slots = 75;
  int timesteps = 10;
  double beta_start = 1e-4;
  double beta_end = 0.2;
  int enhance_entry_t = 0;  // 0 = start the reverse chain at T
  int eps_hidden = 256;
  int time_dim = 16;
  int qa_hidden = 64;

  void validate() const {
    if (slots < 1) throw ValidationError("slots must be >= 1");
    if (timesteps < 1) throw ValidationError("timesteps must be >= 1");
    if (enhance_entry_t < 0 || enhance_entry_t > timesteps) {
      throw ValidationError("enhance_entry_t must lie in [0, timesteps]");
    }
    if (eps_hidden < 1 || qa_hidden < 1) throw ValidationError("hidden widths must be >= 1");
    if (time_dim < 2 || time_dim % 2 != 0) throw ValidationError("time_dim must be even and >= 2");
  }
  int entry() const { return enhance_entry_t == 0 ? timesteps : enhance_entry_t; }
};

struct TrainConfig {
  int batch_size = 4;
  int epochs = 5;
  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  std::uint64_t seed = 0;
  // Weights of the complete / audio-missing / visual-missing answer terms.
  double mix_complete = 1.0 / 3.0;
  double mix_audio_missing = 1.0 / 3.0;
  double mix_visual_missing = 1.0 / 3.0;
  bool detach_enhanced = false;
  bool freeze_rmm = false;
  bool freeze_eps = false;

  void validate() const {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (!(lr > 0.0)) throw ValidationError("lr must be > 0");
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ValidationError("lambdas must be >= 0");
    if (mix_complete < 0 || mix_audio_missing < 0 || mix_visual_missing < 0 ||
        std::abs(mix_complete + mix_audio_missing + mix_visual_missing - 1.0) > 1e-9) {
      throw ValidationError("scenario mix fractions must be >= 0 and sum to 1");
    }
  }

  /// Multipliers for the three answer terms; equal fractions give 1, 1, 1.
  std::array<double, 3> term_weights() const {
    return {3.0 * mix_complete, 3.0 * mix_audio_missing, 3.0 * mix_visual_missing};
  }
};

struct RunConfig {
  WorldConfig world;
  int n_samples = 4000;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<int> slot_axis{25, 50, 75, 100};
  std::vector<int> timestep_axis{5, 10, 20};
  std::vector<double> ratio_axis{0.0, 0.25, 0.5, 0.75, 1.0};

  void validate() const {
    world.validate();
    model.validate();
    train.validate();
    if (n_samples < 10) throw ValidationError("n_samples must be >= 10");
    if (seeds.empty()) throw ValidationError("seeds must be non-empty");
    if (slot_axis.empty() || timestep_axis.empty() || ratio_axis.empty()) {
      throw ValidationError("sweep axes must be non-empty");
    }
    for (int v : slot_axis) if (v < 1) throw ValidationError("slot_axis values must be >= 1");
    for (int v : timestep_axis) if (v < 1) throw ValidationError("timestep_axis values must be >= 1");
    for (double r : ratio_axis) if (!(r >= 0.0 && r <= 1.0)) throw ValidationError("ratio_axis values must lie in [0, 1]");
  }
};

// ---------------------------------------------------------------------------

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* b = text.data();
  const char* e = b + text.size();
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e) throw ValidationError("config: bad value for '" + key + "': '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ValidationError("config: bad boolean for '" + key + "': '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  if (text.empty()) return out;
  for (const auto& item : split(text, ',')) out.push_back(parse_number<T>(key, item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_floating_point_v<T>) {
      s += format_double(xs[i]);
    } else {
      s += std::to_string(xs[i]);
    }
  }
  return s;
}

/// Binds every config key to a getter and a setter. The order here is the
/// canonical order of `to_config_text`.
struct KeyBinding {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define MAVQA_NUM(KEY, FIELD, T)                                                                      \
  KeyBinding {                                                                                        \
    KEY, [](const RunConfig& c) { return num_str(c.FIELD); },                                         \
        [](RunConfig& c, const std::string& v) { c.FIELD = parse_number<T>(KEY, v); }                  \
  }
#define MAVQA_BOOL(KEY, FIELD)                                                                        \
  KeyBinding {                                                                                        \
    KEY, [](const RunConfig& c) { return std::string(c.FIELD ? "true" : "false"); },                  \
        [](RunConfig& c, const std::string& v) { c.FIELD = parse_bool(KEY, v); }                       \
  }
#define MAVQA_LIST(KEY, FIELD, T)                                                                     \
  KeyBinding {                                                                                        \
    KEY, [](const RunConfig& c) { return join(c.FIELD); },                                            \
        [](RunConfig& c, const std::string& v) { c.FIELD = parse_list<T>(KEY, v); }                    \
  }

template <typename T>
std::string num_str(T v) {
  if constexpr (std::is_floating_point_v<T>) {
    return format_double(v);
  } else {
    return std::to_string(v);
  }
}

inline const std::vector<KeyBinding>& key_bindings() {
  static const std::vector<KeyBinding> keys = {
      MAVQA_NUM("world.m", world.m, int),
      MAVQA_NUM("world.c", world.c, int),
      MAVQA_NUM("world.w", world.w, int),
      MAVQA_NUM("world.h", world.h, int),
      MAVQA_NUM("world.classes", world.classes, int),
      MAVQA_NUM("world.noise_std", world.noise_std, double),
      MAVQA_NUM("world.cross_modal_rank", world.cross_modal_rank, int),
      MAVQA_NUM("world.seed", world.seed, std::uint64_t),
      MAVQA_NUM("data.n_samples", n_samples, int),
      MAVQA_NUM("model.slots", model.slots, int),
      MAVQA_NUM("model.timesteps", model.timesteps, int),
      MAVQA_NUM("model.beta_start", model.beta_start, double),
      MAVQA_NUM("model.beta_end", model.beta_end, double),
      MAVQA_NUM("model.enhance_entry_t", model.enhance_entry_t, int),
      MAVQA_NUM("model.eps_hidden", model.eps_hidden, int),
      MAVQA_NUM("model.time_dim", model.time_dim, int),
      MAVQA_NUM("model.qa_hidden", model.qa_hidden, int),
      MAVQA_NUM("train.batch_size", train.batch_size, int),
      MAVQA_NUM("train.epochs", train.epochs, int),
      MAVQA_NUM("train.lr", train.lr, double),
      MAVQA_NUM("train.adam_beta1", train.adam_beta1, double),
      MAVQA_NUM("train.adam_beta2", train.adam_beta2, double),
      MAVQA_NUM("train.adam_eps", train.adam_eps, double),
      MAVQA_NUM("train.lambda1", train.lambda1, double),
      MAVQA_NUM("train.lambda2", train.lambda2, double),
      MAVQA_NUM("train.seed", train.seed, std::uint64_t),
      MAVQA_NUM("train.mix_complete", train.mix_complete, double),
      MAVQA_NUM("train.mix_audio_missing", train.mix_audio_missing, double),
      MAVQA_NUM("train.mix_visual_missing", train.mix_visual_missing, double),
      MAVQA_BOOL("train.detach_enhanced", train.detach_enhanced),
      MAVQA_BOOL("train.freeze_rmm", train.freeze_rmm),
      MAVQA_BOOL("train.freeze_eps", train.freeze_eps),
      MAVQA_LIST("experiment.seeds", seeds, std::uint64_t),
      MAVQA_LIST("experiment.slot_axis", slot_axis, int),
      MAVQA_LIST("experiment.timestep_axis", timestep_axis, int),
      MAVQA_LIST("experiment.ratio_axis", ratio_axis, double),
  };
  return keys;
}

#undef MAVQA_NUM
#undef MAVQA_BOOL
#undef MAVQA_LIST

}  // namespace detail

/// Applies `key = value` lines on top of `base`. `#` starts a comment.
/// Unknown keys and malformed lines are validation errors.
inline RunConfig parse_config_text(const std::string& text, RunConfig base = {}) {
  std::map<std::string, const detail::KeyBinding*> index;
  for (const auto& kb : detail::key_bindings()) index[kb.key] = &kb;
  std::size_t line_no = 0;
  std::string line;
  std::istringstream in(text);
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    auto it = index.find(key);
    if (it == index.end()) throw ValidationError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    it->second->set(base, value);
  }
  base.validate();
  return base;
}

inline std::string to_config_text(const RunConfig& c) {
  std::string out;
  for (const auto& kb : detail::key_bindings()) out += kb.key + " = " + kb.get(c) + "\n";
  return out;
}

/// SHA-1 of `body` framed as a git blob object, in lowercase hex.
inline std::string git_blob_sha1(const std::string& body) {
  const std::string blob = "blob " + std::to_string(body.size()) + std::string(1, '\0') + body;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("git_blob_sha1: digest failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

/// Provenance hash of a run: git blob id of the canonical config text.
inline std::string config_hash(const RunConfig& c) { return git_blob_sha1(to_config_text(c)); }

}  // namespace mavqa
