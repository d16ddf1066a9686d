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

/// Named views over parameter storage plus a fully connected layer with a
/// hand-written backward pass. Gradients are stored in objects of the same
/// type as the model, so `model.params()` and `grads.params()` line up
/// element for element.

#pragma once

#include "mavqa/core.hpp"

#include <span>
#include <string>
#include <vector>

namespace mavqa {

struct ParamView {
  std::string name;
  double* data;
  Eigen::Index rows;
  Eigen::Index cols;

  Eigen::Index size() const { return rows * cols; }
  std::span<double> span() const { return {data, static_cast<std::size_t>(size())}; }
  Eigen::Map<Mat> map() const { return Eigen::Map<Mat>(data, rows, cols); }
};

inline ParamView view(std::string name, Mat& m) { return {std::move(name), m.data(), m.rows(), m.cols()}; }
inline ParamView view(std::string name, Vec& v) { return {std::move(name), v.data(), v.size(), 1}; }

inline void zero_params(const std::vector<ParamView>& ps) {
  for (const auto& p : ps) p.map().setZero();
}

inline void require_same_layout(const std::vector<ParamView>& a, const std::vector<ParamView>& b) {
  if (a.size() != b.size()) throw DimensionError("parameter lists differ in length");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].rows != b[i].rows || a[i].cols != b[i].cols) {
      throw DimensionError("parameter layout mismatch at '" + a[i].name + "' (" +
                           detail::shape_str(a[i].rows, a[i].cols) + " vs '" + b[i].name + "' " +
                           detail::shape_str(b[i].rows, b[i].cols) + ")");
    }
  }
}

/// y = W x + b, applied column-wise to a batch.
struct Linear {
  Mat weight;  // out x in
  Vec bias;    // out

  Linear() = default;
  Linear(int in, int out) : weight(Mat::Zero(out, in)), bias(Vec::Zero(out)) {}

  /// Weights ~ N(0, 1/in), bias zero.
  static Linear init(int in, int out, Rng& rng) {
    Linear l(in, out);
    l.weight = rng.normal_mat(out, in) / std::sqrt(static_cast<double>(in));
    return l;
  }

  int in() const { return static_cast<int>(weight.cols()); }
  int out() const { return static_cast<int>(weight.rows()); }

  Mat forward(const Mat& x) const {
    Mat y = weight * x;
    y.colwise() += bias;
    return y;
  }

  /// Accumulates parameter gradients into `grad` and returns dL/dx.
  Mat backward(const Mat& x, const Mat& grad_y, Linear& grad) const {
    grad.weight.noalias() += grad_y * x.transpose();
    grad.bias += grad_y.rowwise().sum();
    return weight.transpose() * grad_y;
  }

  Linear zeros_like() const { return Linear(in(), out()); }

  void append_params(const std::string& prefix, std::vector<ParamView>& out) {
    out.push_back(view(prefix + ".weight", weight));
    out.push_back(view(prefix + ".bias", bias));
  }
};

/// d tanh(x)/dx expressed through y = tanh(x).
inline Mat tanh_grad(const Mat& y, const Mat& grad_y) {
  return grad_y.array() * (1.0 - y.array().square());
}

}  // namespace mavqa
