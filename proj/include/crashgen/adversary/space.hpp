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

#include <Eigen/Dense>

#include "crashgen/lora/lora.hpp"
#include "crashgen/model/behavior_model.hpp"

namespace crashgen::adversary
{

// A parameter space the attack can move in: an origin (the trained point), a
// prediction and the pullback of a position-space cotangent into the space.

class FullSpace
{
public:
  FullSpace(const model::BehaviorModel & model, const Eigen::VectorXd & theta_star)
  : model_(&model), theta_star_(&theta_star)
  {
  }

  static constexpr const char * name() { return "full"; }
  Eigen::Index dim() const { return theta_star_->size(); }
  Eigen::VectorXd origin() const { return *theta_star_; }

  Trajectory predict(const Eigen::VectorXd & p, const Scenario & s, model::PredictionTape * tape = nullptr) const
  {
    return model::predict(*model_, p, s, tape);
  }

  Eigen::VectorXd pullback(
    const Eigen::VectorXd & p, const model::PredictionTape & tape, const Eigen::MatrixX2d & d_positions) const
  {
    return model::pullback(*model_, p, tape, d_positions);
  }

private:
  const model::BehaviorModel * model_;
  const Eigen::VectorXd * theta_star_;
};

class LoraSpace
{
public:
  explicit LoraSpace(const lora::LoraAdapter & adapter) : adapter_(&adapter) {}

  static constexpr const char * name() { return "lora"; }
  Eigen::Index dim() const { return adapter_->dim(); }
  Eigen::VectorXd origin() const { return Eigen::VectorXd::Zero(adapter_->dim()); }

  Trajectory predict(const Eigen::VectorXd & b, const Scenario & s, model::PredictionTape * tape = nullptr) const
  {
    return model::predict(adapter_->model(), adapter_->theta(b), s, tape);
  }

  Eigen::VectorXd pullback(
    const Eigen::VectorXd & b, const model::PredictionTape & tape, const Eigen::MatrixX2d & d_positions) const
  {
    return adapter_->grad_b(model::pullback(adapter_->model(), adapter_->theta(b), tape, d_positions));
  }

private:
  const lora::LoraAdapter * adapter_;
};

}  // namespace crashgen::adversary
