#pragma once

#include <map>
#include <string>
#include <vector>

#include "mrcn/tensor.hpp"

namespace mrcn {

// What a stored tensor is; decides initialization, decay and checkpointing.
enum class ParamRole {
  conv_weight,   // convolution / transposed-convolution kernels; weight-decayed
  bias,
  bn_scale,
  bn_shift,
  bn_running_mean,  // buffers: saved, never touched by the optimizer
  bn_running_var,
  variable,         // free tensor used by test graphs
};

inline bool is_learnable(ParamRole r) {
  return r != ParamRole::bn_running_mean && r != ParamRole::bn_running_var;
}

inline bool is_decayed(ParamRole r) { return r == ParamRole::conv_weight; }

template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> momentum;
  ParamRole role = ParamRole::variable;
  // Frozen parameters take part in forward passes but receive no updates.
  bool frozen = false;

  bool trainable() const { return !frozen && is_learnable(role); }
};

// Named tensors of a network. Recurrent instances share a parameter by
// declaring the same name; value, gradient and momentum always share dims.
template <typename T>
class ParamStore {
 public:
  // Registers `name`, or returns the existing entry if the dims agree.
  Param<T>& declare(const std::string& name, Dims dims, ParamRole role) {
    auto it = params_.find(name);
    if (it != params_.end()) {
      if (it->second.value.dims() != dims || it->second.role != role) {
        throw ShapeError("parameter '" + name + "' redeclared with dims " + dims.str() +
                         ", existing " + it->second.value.dims().str());
      }
      return it->second;
    }
    Param<T> p;
    const T init = role == ParamRole::bn_scale || role == ParamRole::bn_running_var ? T{1} : T{0};
    p.value = Tensor<T>(dims, init);
    p.grad = Tensor<T>(dims);
    p.momentum = Tensor<T>(dims);
    p.role = role;
    return params_.emplace(name, std::move(p)).first->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Param<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Param<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& [k, p] : params_) p.grad.fill(T{0});
  }

  // Number of learnable scalars (buffers excluded).
  std::size_t learnable_count() const {
    std::size_t total = 0;
    for (const auto& [k, p] : params_) {
      if (is_learnable(p.role)) total += p.value.size();
    }
    return total;
  }

 private:
  std::map<std::string, Param<T>> params_;
};

}  // namespace mrcn
