#pragma once

#include <random>
#include <vector>

#include "tody/ctdg_store.hpp"
#include "tody/rng.hpp"
#include "tody/tensor.hpp"

namespace tody::testing {

// Random stream over n nodes, no self loops, distinct integer timestamps
// unless `ties` is set. `edge_dim` features uniform in [-1, 1].
inline EventGraph random_graph(Rng& rng, int n, int e, int edge_dim = 0, bool ties = false) {
  std::uniform_int_distribution<int> node(0, n - 1);
  std::uniform_int_distribution<int> tick(0, ties ? std::max(1, e / 4) : 1 << 30);
  std::uniform_real_distribution<float> feat(-1.0f, 1.0f);
  std::vector<Edge> es;
  std::vector<float> fs;
  for (int i = 0; i < e; ++i) {
    int u = node(rng), v = node(rng);
    if (u == v) v = (v + 1) % n;
    es.push_back({u, v, static_cast<double>(tick(rng)), 0, -1});
    for (int k = 0; k < edge_dim; ++k) fs.push_back(feat(rng));
  }
  return EventGraph(n, std::move(es), edge_dim, std::move(fs));
}

template <typename T>
Tensor<T> random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(static_cast<std::size_t>(shape_numel(s)));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>::from(std::move(s), std::move(v));
}

}  // namespace tody::testing
