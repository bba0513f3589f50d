#pragma once

#include <string>
#include <vector>

#include "ono/autodiff.hpp"
#include "ono/linalg.hpp"

namespace ono::nn {

enum class Mode { train, eval };

/// Flat registry of named parameters. Modules hold indices; the optimizer
/// and the checkpoint writer iterate the registry. `lr_scale` lets the
/// trainable eigenvalues move faster than the weights; `decay` excludes
/// raw_mu and layer-norm affine terms from weight decay.
class ParamSet {
public:
  struct Entry {
    std::string name;
    linalg::DenseMatrix value;
    bool decay = true;
    double lr_scale = 1.0;
  };

  int add(std::string name, linalg::DenseMatrix init, bool decay, double lr_scale = 1.0) {
    entries_.push_back({std::move(name), std::move(init), decay, lr_scale});
    return static_cast<int>(entries_.size()) - 1;
  }

  std::size_t size() const { return entries_.size(); }
  Entry& entry(int id) { return entries_[static_cast<std::size_t>(id)]; }
  const Entry& entry(int id) const { return entries_[static_cast<std::size_t>(id)]; }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  /// Materializes every parameter on a tape. with_grad=false mounts
  /// constants (eval / frozen forward).
  std::vector<ad::Tensor> bind(ad::Tape& tape, bool with_grad) const {
    std::vector<ad::Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_)
      out.push_back(with_grad ? tape.param(e.value) : tape.constant(e.value));
    return out;
  }

private:
  std::vector<Entry> entries_;
};

}  // namespace ono::nn
