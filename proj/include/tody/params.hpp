#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tody/rng.hpp"
#include "tody/tensor.hpp"

namespace tody {

enum class Init { kFanIn, kZeros, kOnes };

// Ordered registry of named trainable tensors. Order is insertion order and
// fixes the layout of checkpoints and optimizer state.
template <typename T>
class ParamSet {
 public:
  // Fan-in init draws U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in = shape[0].
  Tensor<T> add(const std::string& name, Shape shape, Init init, Rng& rng);

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor<T>>>& entries() { return entries_; }
  Tensor<T> get(const std::string& name) const;
  std::int64_t num_values() const;

  void zero_grad();
  // Enables or disables gradients for every parameter whose name starts with `prefix`.
  void set_trainable(const std::string& prefix, bool on);

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

// y = x w + b over the last axis.
template <typename T>
struct Linear {
  Tensor<T> w;
  Tensor<T> b;

  static Linear make(ParamSet<T>& ps, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
                     bool bias = true);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

}  // namespace tody
