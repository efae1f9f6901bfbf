#include "costrgcn/params.hpp"

#include "costrgcn/errors.hpp"

namespace costrgcn {

void ParamStore::add(std::string name, ParamKind kind, Tensor value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), kind, std::move(value)});
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter '" + name + "'");
  return params_[it->second].value;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter '" + name + "'");
  return params_[it->second].value;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

BoundParams::BoundParams(Tape& tape, const ParamStore& store, bool trainable) : store_(&store) {
  vars_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store.param(i);
    index_.emplace(p.name, i);
    vars_.push_back(tape.leaf(p.value, trainable));
  }
}

BoundParams BoundParams::from_vars(const ParamStore& store, std::vector<Var> vars) {
  if (vars.size() != store.size()) throw ShapeError("one variable per parameter is required");
  BoundParams b;
  b.store_ = &store;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (vars[i].shape() != store.param(i).value.shape()) {
      throw ShapeError("parameter '" + store.param(i).name + "' bound to shape " +
                       shape_str(vars[i].shape()));
    }
    b.index_.emplace(store.param(i).name, i);
  }
  b.vars_ = std::move(vars);
  return b;
}

const Var& BoundParams::operator()(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter '" + name + "'");
  return vars_[it->second];
}

}  // namespace costrgcn
