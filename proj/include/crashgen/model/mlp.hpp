// Copyright 2026 The crashgen Authors
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

#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crashgen/util/rng.hpp"

namespace crashgen::model
{

/// Fully connected network: tanh on hidden layers, identity on the output.
///
/// Parameters live in one flat vector. Layer l (fan-in p, fan-out m) occupies m*p
/// weights stored column-major followed by m biases.
class Mlp
{
public:
  struct Layer
  {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;
  };

  /// Per-sample activations kept from a forward pass; acts[0] is the input batch.
  struct Tape
  {
    std::vector<Eigen::MatrixXd> acts;
  };

  Mlp() = default;

  explicit Mlp(std::vector<std::size_t> widths) : widths_(std::move(widths))
  {
    if (widths_.size() < 2) {
      throw std::invalid_argument("Mlp needs at least an input and an output width");
    }
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      offsets_.push_back(off);
      off += widths_[l + 1] * widths_[l] + widths_[l + 1];
    }
    n_ = off;
  }

  std::size_t parameter_count() const { return n_; }
  std::size_t layer_count() const { return offsets_.size(); }
  std::size_t input_dim() const { return widths_.front(); }
  std::size_t output_dim() const { return widths_.back(); }
  const std::vector<std::size_t> & widths() const { return widths_; }

  std::size_t fan_in(std::size_t l) const { return widths_[l]; }
  std::size_t fan_out(std::size_t l) const { return widths_[l + 1]; }
  std::size_t weight_offset(std::size_t l) const { return offsets_[l]; }
  std::size_t bias_offset(std::size_t l) const { return offsets_[l] + fan_out(l) * fan_in(l); }

  Eigen::Map<const Eigen::MatrixXd> weight(const Eigen::VectorXd & theta, std::size_t l) const
  {
    return {theta.data() + weight_offset(l), static_cast<Eigen::Index>(fan_out(l)),
            static_cast<Eigen::Index>(fan_in(l))};
  }

  Eigen::Map<const Eigen::VectorXd> bias(const Eigen::VectorXd & theta, std::size_t l) const
  {
    return {theta.data() + bias_offset(l), static_cast<Eigen::Index>(fan_out(l))};
  }

  std::vector<Layer> unflatten(const Eigen::VectorXd & theta) const
  {
    check(theta);
    std::vector<Layer> layers;
    for (std::size_t l = 0; l < layer_count(); ++l) {
      layers.push_back({weight(theta, l), bias(theta, l)});
    }
    return layers;
  }

  Eigen::VectorXd flatten(const std::vector<Layer> & layers) const
  {
    if (layers.size() != layer_count()) {
      throw std::invalid_argument("flatten: wrong number of layers");
    }
    Eigen::VectorXd theta(static_cast<Eigen::Index>(n_));
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const auto & L = layers[l];
      if (static_cast<std::size_t>(L.weight.rows()) != fan_out(l) ||
          static_cast<std::size_t>(L.weight.cols()) != fan_in(l) ||
          static_cast<std::size_t>(L.bias.size()) != fan_out(l)) {
        throw std::invalid_argument("flatten: layer shape mismatch");
      }
      theta.segment(static_cast<Eigen::Index>(weight_offset(l)), L.weight.size()) = L.weight.reshaped();
      theta.segment(static_cast<Eigen::Index>(bias_offset(l)), L.bias.size()) = L.bias;
    }
    return theta;
  }

  /// Glorot-style normal initialisation, zero biases; the output layer is scaled by `out_gain`.
  Eigen::VectorXd initial_parameters(util::Rng & rng, double out_gain = 0.1) const
  {
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_));
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const double scale = std::sqrt(1.0 / static_cast<double>(fan_in(l))) * (l + 1 == layer_count() ? out_gain : 1.0);
      const auto w = util::gaussian_matrix(static_cast<Eigen::Index>(fan_out(l)), static_cast<Eigen::Index>(fan_in(l)), rng);
      theta.segment(static_cast<Eigen::Index>(weight_offset(l)), w.size()) = scale * w.reshaped();
    }
    return theta;
  }

  /// Forward pass over a batch (one sample per column).
  Eigen::MatrixXd forward(const Eigen::VectorXd & theta, const Eigen::MatrixXd & input, Tape * tape = nullptr) const
  {
    check(theta);
    if (static_cast<std::size_t>(input.rows()) != input_dim()) {
      throw std::invalid_argument("Mlp::forward: input has wrong dimension");
    }
    if (tape) {
      tape->acts.clear();
      tape->acts.push_back(input);
    }
    Eigen::MatrixXd a = input;
    for (std::size_t l = 0; l < layer_count(); ++l) {
      Eigen::MatrixXd z = weight(theta, l) * a;
      z.colwise() += bias(theta, l);
      if (l + 1 < layer_count()) {
        a = z.array().tanh().matrix();
        if (tape) {
          tape->acts.push_back(a);
        }
      } else {
        a = std::move(z);
      }
    }
    return a;
  }

  /// Gradient of sum_j <d_out[:, j], f(theta, x_j)> with respect to theta.
  Eigen::VectorXd backward(const Eigen::VectorXd & theta, const Tape & tape, const Eigen::MatrixXd & d_out) const
  {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_));
    Eigen::MatrixXd delta = d_out;
    for (std::size_t l = layer_count(); l-- > 0;) {
      const Eigen::MatrixXd & a_in = tape.acts[l];
      Eigen::Map<Eigen::MatrixXd>(grad.data() + weight_offset(l), static_cast<Eigen::Index>(fan_out(l)),
                                  static_cast<Eigen::Index>(fan_in(l))) = delta * a_in.transpose();
      grad.segment(static_cast<Eigen::Index>(bias_offset(l)), static_cast<Eigen::Index>(fan_out(l))) =
        delta.rowwise().sum();
      if (l > 0) {
        Eigen::MatrixXd back = weight(theta, l).transpose() * delta;
        delta = (back.array() * (1.0 - a_in.array().square())).matrix();
      }
    }
    return grad;
  }

private:
  void check(const Eigen::VectorXd & theta) const
  {
    if (static_cast<std::size_t>(theta.size()) != n_) {
      throw std::invalid_argument(
        "parameter vector has length " + std::to_string(theta.size()) + ", expected " + std::to_string(n_));
    }
  }

  std::vector<std::size_t> widths_;
  std::vector<std::size_t> offsets_;
  std::size_t n_ = 0;
};

}  // namespace crashgen::model
