#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "costrgcn/autodiff.hpp"
#include "costrgcn/tensor.hpp"

namespace costrgcn {

// Weight matrices take L1/L2 regularization; biases, masks and norm
// parameters do not.
enum class ParamKind { kWeight, kBias, kMask, kNorm };

struct Parameter {
  std::string name;
  ParamKind kind = ParamKind::kWeight;
  Tensor value;
};

// Named parameter tensors in insertion order.
class ParamStore {
 public:
  void add(std::string name, ParamKind kind, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Parameter& param(std::size_t i) const { return params_[i]; }
  Parameter& param(std::size_t i) { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  const std::vector<Parameter>& all() const { return params_; }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Parameters placed on a tape, as grad-enabled leaves or constants.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ParamStore& store, bool trainable);
  // Uses existing tape values, one per store entry in store order.
  static BoundParams from_vars(const ParamStore& store, std::vector<Var> vars);

  const Var& operator()(const std::string& name) const;
  const std::vector<Var>& vars() const { return vars_; }
  const ParamStore& store() const { return *store_; }

 private:
  BoundParams() = default;

  const ParamStore* store_ = nullptr;
  std::vector<Var> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace costrgcn
