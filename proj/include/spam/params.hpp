#pragma once

#include "spam/common.hpp"
#include "spam/diffmath.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace spam {

// Named trainable tensors in a stable insertion order. The order defines
// the checkpoint payload layout and the optimizer state alignment.
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Matrix> values;
  std::unordered_map<std::string, size_t> index;

  size_t add(const std::string& name, Matrix init) {
    if (index.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index[name] = names.size();
    names.push_back(name);
    values.push_back(std::move(init));
    return names.size() - 1;
  }

  bool has(const std::string& name) const { return index.count(name) != 0; }

  Matrix& at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError("unknown parameter: " + name);
    return values[it->second];
  }

  const Matrix& at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError("unknown parameter: " + name);
    return values[it->second];
  }

  size_t size() const { return names.size(); }
};

// One tape leaf per parameter, in store order. grad_check drives the same
// computation through externally supplied vars.
class TapeBinding {
 public:
  TapeBinding(diff::Tape& tape, const ParamStore& store) : store_(&store) {
    vars_.reserve(store.size());
    for (const Matrix& v : store.values) vars_.push_back(tape.leaf(v));
  }

  TapeBinding(const ParamStore& store, std::vector<diff::Var> vars)
      : store_(&store), vars_(std::move(vars)) {
    if (vars_.size() != store.size())
      throw DimensionError("tape binding size differs from parameter store");
  }

  diff::Var operator[](const std::string& name) const {
    auto it = store_->index.find(name);
    if (it == store_->index.end()) throw ConfigError("unknown parameter: " + name);
    return vars_[it->second];
  }

  const std::vector<diff::Var>& vars() const { return vars_; }

 private:
  const ParamStore* store_;
  std::vector<diff::Var> vars_;
};

}  // namespace spam
