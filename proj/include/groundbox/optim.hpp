#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "groundbox/errors.hpp"
#include "groundbox/model.hpp"
#include "groundbox/tensor.hpp"

namespace groundbox {

/// SGD with Nesterov momentum in the lookahead-free form
///
///   v' = μ·v − lr·g
///   θ' = θ + μ·v' − lr·g
///
/// which tracks the classic "gradient at θ + μv" update with the stored
/// parameters sitting at the lookahead point.
class NesterovSgd {
 public:
  NesterovSgd(std::vector<NamedTensor> params, double lr, double momentum)
      : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    for (const auto& [_, t] : params_) velocity_.emplace_back(t.size(), 0.0);
  }

  /// Applies one update from the gradients currently stored on the
  /// parameters. Every parameter must have a gradient.
  void step() {
    for (const auto& [name, t] : params_) {
      if (!t.has_grad()) throw ContractError("sgd step: parameter " + name + " has no gradient");
    }
    for (std::size_t p = 0; p < params_.size(); ++p) {
      auto& tensor = params_[p].second;
      auto values = tensor.mutable_data();
      auto grad = tensor.grad();
      auto& v = velocity_[p];
      for (std::size_t i = 0; i < values.size(); ++i) {
        v[i] = momentum_ * v[i] - lr_ * grad[i];
        values[i] += momentum_ * v[i] - lr_ * grad[i];
      }
    }
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  const std::vector<std::vector<double>>& velocity() const { return velocity_; }
  std::vector<std::vector<double>>& velocity() { return velocity_; }
  const std::vector<NamedTensor>& params() const { return params_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
};

}  // namespace groundbox
