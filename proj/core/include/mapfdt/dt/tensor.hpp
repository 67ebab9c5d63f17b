#pragma once

#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mapfdt::dt {

// Named learnable tensor with its gradient buffer. Flat row-major storage;
// shapes exist for checkpointing, shape checks, and gradcheck reports.
template <class T>
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> v;
  std::vector<T> g;

  Tensor() = default;
  Tensor(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
    v.assign(size(), T(0));
    g.assign(size(), T(0));
  }

  size_t size() const {
    size_t total = 1;
    for (int d : shape) total *= size_t(d);
    return total;
  }
  void zero_grad() { std::fill(g.begin(), g.end(), T(0)); }
};

template <class T>
struct ParamStore {
  std::vector<Tensor<T>> tensors;

  Tensor<T>& add(std::string name, std::vector<int> shape) {
    tensors.emplace_back(std::move(name), std::move(shape));
    return tensors.back();
  }
  Tensor<T>& at(const std::string& name) {
    for (auto& t : tensors)
      if (t.name == name) return t;
    throw std::out_of_range("no parameter tensor named " + name);
  }
  const Tensor<T>& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }
  void zero_grads() {
    for (auto& t : tensors) t.zero_grad();
  }
  int64_t param_count() const {
    int64_t total = 0;
    for (const auto& t : tensors) total += int64_t(t.size());
    return total;
  }
};

}  // namespace mapfdt::dt
