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

/// Training checkpoints.
///
/// Layout: "MAVQ1", u32 version, u32 section count, then sections. Each
/// section is u32 name length, name bytes, one kind byte, and a payload:
///   kind 0: u32 rows, u32 cols, rows*cols f64 (column-major)
///   kind 1: u32 length, raw bytes
/// Sections are written in a fixed order so save -> load -> save is
/// byte-identical.

#pragma once

#include "mavqa/binary_io.hpp"
#include "mavqa/config.hpp"
#include "mavqa/trainer.hpp"

#include <map>
#include <string>

namespace mavqa {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, VersionMismatch, Truncated, Corrupt };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Checkpoint {
  RunConfig config;
  TrainerState state;
};

namespace detail {

inline void put_matrix(ByteWriter& w, const std::string& name, const double* data, Eigen::Index rows,
                       Eigen::Index cols) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(rows));
  w.u32(static_cast<std::uint32_t>(cols));
  for (Eigen::Index i = 0; i < rows * cols; ++i) w.f64(data[i]);
}

inline void put_text(ByteWriter& w, const std::string& name, const std::string& text) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.u8(1);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
}

struct Section {
  std::uint8_t kind = 0;
  Mat matrix;
  std::string text;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  Checkpoint c = ck;  // params() needs mutable access
  auto& st = c.state;
  const auto params = st.models.params();
  ByteWriter w;
  w.bytes("MAVQ1");
  w.u32(kCheckpointVersion);
  const std::size_t count = 5 + 3 * params.size();
  w.u32(static_cast<std::uint32_t>(count));

  detail::put_text(w, "config", to_config_text(c.config));
  detail::put_text(w, "rng", st.rng.state());
  const double counters[] = {static_cast<double>(st.epochs_done), static_cast<double>(st.adam.step)};
  detail::put_matrix(w, "counters", counters, 2, 1);
  Mat hist(5, static_cast<Eigen::Index>(st.history.size()));
  for (std::size_t i = 0; i < st.history.size(); ++i) {
    const auto& e = st.history[i];
    hist.col(static_cast<Eigen::Index>(i)) << e.epoch, e.l_avqa, e.l_rmmr, e.l_ave, e.total;
  }
  detail::put_matrix(w, "history", hist.data(), hist.rows(), hist.cols());
  const double adam_hp[] = {st.adam.lr, st.adam.beta1, st.adam.beta2, st.adam.eps};
  detail::put_matrix(w, "adam.hyper", adam_hp, 4, 1);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    detail::put_matrix(w, p.name, p.data, p.rows, p.cols);
    detail::put_matrix(w, "adam.m." + p.name, st.adam.m[i].data(), p.rows, p.cols);
    detail::put_matrix(w, "adam.v." + p.name, st.adam.v[i].data(), p.rows, p.cols);
  }
  return w.data();
}

/// Parses a checkpoint. On any error nothing is returned, so callers never
/// see partially restored state.
inline Checkpoint decode_checkpoint(std::string bytes) {
  using K = CheckpointError::Kind;
  try {
    ByteReader r(std::move(bytes));
    if (r.bytes(5) != "MAVQ1") throw CheckpointError(K::BadMagic, "checkpoint: bad magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
      throw CheckpointError(K::VersionMismatch, "checkpoint: version " + std::to_string(version) +
                                                    " is not supported (expected " +
                                                    std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint32_t count = r.u32();
    std::map<std::string, detail::Section> sections;
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint32_t nlen = r.u32();
      if (nlen > r.remaining()) throw TruncatedInput("checkpoint: section name overruns file");
      std::string name = r.bytes(nlen);
      detail::Section s;
      s.kind = r.u8();
      if (s.kind == 0) {
        const std::uint32_t rows = r.u32(), cols = r.u32();
        if (static_cast<std::uint64_t>(rows) * cols * 8 > r.remaining()) {
          throw TruncatedInput("checkpoint: section '" + name + "' overruns file");
        }
        s.matrix.resize(rows, cols);
        for (Eigen::Index k = 0; k < s.matrix.size(); ++k) s.matrix.data()[k] = r.f64();
      } else if (s.kind == 1) {
        const std::uint32_t len = r.u32();
        s.text = r.bytes(len);
      } else {
        throw CheckpointError(K::Corrupt, "checkpoint: unknown section kind in '" + name + "'");
      }
      if (!sections.emplace(std::move(name), std::move(s)).second) {
        throw CheckpointError(K::Corrupt, "checkpoint: duplicate section");
      }
    }
    if (!r.at_end()) throw CheckpointError(K::Corrupt, "checkpoint: trailing bytes");

    const auto take = [&](const std::string& name, std::uint8_t kind) -> detail::Section& {
      auto it = sections.find(name);
      if (it == sections.end()) throw CheckpointError(K::Corrupt, "checkpoint: missing section '" + name + "'");
      if (it->second.kind != kind) throw CheckpointError(K::Corrupt, "checkpoint: wrong kind for '" + name + "'");
      return it->second;
    };

    Checkpoint ck;
    try {
      ck.config = parse_config_text(take("config", 1).text);
      ck.config.validate();
    } catch (const ValidationError& e) {
      throw CheckpointError(K::Corrupt, std::string("checkpoint: bad config echo: ") + e.what());
    }
    auto& st = ck.state;
    st = TrainerState::fresh(ck.config);
    try {
      st.rng.set_state(take("rng", 1).text);
    } catch (const std::exception&) {
      throw CheckpointError(K::Corrupt, "checkpoint: bad rng state");
    }
    const Mat& counters = take("counters", 0).matrix;
    const Mat& hist = take("history", 0).matrix;
    const Mat& hyper = take("adam.hyper", 0).matrix;
    if (counters.size() != 2 || hyper.size() != 4 || (hist.size() > 0 && hist.rows() != 5)) {
      throw CheckpointError(K::Corrupt, "checkpoint: bad bookkeeping section shape");
    }
    st.epochs_done = static_cast<int>(counters(0));
    st.adam.step = static_cast<std::uint64_t>(counters(1));
    st.adam.lr = hyper(0);
    st.adam.beta1 = hyper(1);
    st.adam.beta2 = hyper(2);
    st.adam.eps = hyper(3);
    for (Eigen::Index j = 0; j < hist.cols(); ++j) {
      st.history.push_back({static_cast<int>(hist(0, j)), hist(1, j), hist(2, j), hist(3, j), hist(4, j)});
    }
    const auto params = st.models.params();
    const auto restore = [&](const std::string& name, double* dst, Eigen::Index rows, Eigen::Index cols) {
      const Mat& m = take(name, 0).matrix;
      if (m.rows() != rows || m.cols() != cols) {
        throw CheckpointError(K::Corrupt, "checkpoint: section '" + name + "' has shape " +
                                              detail::shape_str(m.rows(), m.cols()) + ", expected " +
                                              detail::shape_str(rows, cols));
      }
      std::copy(m.data(), m.data() + m.size(), dst);
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      restore(p.name, p.data, p.rows, p.cols);
      restore("adam.m." + p.name, st.adam.m[i].data(), p.rows, p.cols);
      restore("adam.v." + p.name, st.adam.v[i].data(), p.rows, p.cols);
    }
    if (sections.size() != 5 + 3 * params.size()) {
      throw CheckpointError(K::Corrupt, "checkpoint: unexpected extra sections");
    }
    return ck;
  } catch (const TruncatedInput& e) {
    throw CheckpointError(K::Truncated, e.what());
  }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) { write_file(path, encode_checkpoint(ck)); }
inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace mavqa
