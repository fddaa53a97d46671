#include "tody/params.hpp"

#include <cmath>
#include <random>

#include "tody/errors.hpp"

namespace tody {

template <typename T>
Tensor<T> ParamSet<T>::add(const std::string& name, Shape shape, Init init, Rng& rng) {
  for (const auto& [n, t] : entries_) {
    if (n == name) throw ContractError("duplicate parameter name " + name);
  }
  Tensor<T> t = Tensor<T>::zeros(shape);
  auto v = t.mutable_data();
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(v.begin(), v.end(), T(1));
      break;
    case Init::kFanIn: {
      const double fan_in = shape.empty() || shape[0] == 0 ? 1.0 : static_cast<double>(shape[0]);
      const double bound = 1.0 / std::sqrt(fan_in);
      std::uniform_real_distribution<double> u(-bound, bound);
      for (T& x : v) x = static_cast<T>(u(rng));
      break;
    }
  }
  t.set_requires_grad(true);
  entries_.emplace_back(name, t);
  return t;
}

template <typename T>
Tensor<T> ParamSet<T>::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ContractError("unknown parameter " + name);
}

template <typename T>
std::int64_t ParamSet<T>::num_values() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

template <typename T>
void ParamSet<T>::set_trainable(const std::string& prefix, bool on) {
  for (auto& [name, t] : entries_) {
    if (name.rfind(prefix, 0) == 0) t.set_requires_grad(on);
  }
}

template <typename T>
Linear<T> Linear<T>::make(ParamSet<T>& ps, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
                          bool bias) {
  Linear l;
  l.w = ps.add(name + ".w", {in, out}, Init::kFanIn, rng);
  if (bias) l.b = ps.add(name + ".b", {out}, Init::kZeros, rng);
  return l;
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> y = ops::matmul(x, w);
  return b.defined() ? ops::add(y, b) : y;
}

template class ParamSet<float>;
template class ParamSet<double>;
template struct Linear<float>;
template struct Linear<double>;

}  // namespace tody
