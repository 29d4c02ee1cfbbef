#pragma once
#include <cmath>
#include <functional>
#include <vector>

#include "kflow/tensor.hpp"

namespace kflow::testing {

// central finite differences of a scalar function of the given leaves,
// evaluated entry by entry; the function must be deterministic
inline std::vector<std::vector<double>> numeric_gradients(
    const std::function<double()>& f, std::vector<Tensor>& leaves, double h = 1e-5) {
  std::vector<std::vector<double>> grads;
  for (auto& leaf : leaves) {
    auto& v = leaf.mutable_values();
    std::vector<double> g(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
      double keep = v[i];
      v[i] = keep + h;
      double fp = f();
      v[i] = keep - h;
      double fm = f();
      v[i] = keep;
      g[i] = (fp - fm) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

inline double rel_err(double a, double b) {
  double scale = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) / scale;
}

// max relative error between analytic and numeric gradients over all leaves
inline double max_grad_rel_err(const std::vector<Tensor>& leaves,
                               const std::vector<std::vector<double>>& numeric) {
  double worst = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto g = leaves[li].grad();
    for (size_t i = 0; i < g.size(); ++i) worst = std::max(worst, rel_err(g[i], numeric[li][i]));
  }
  return worst;
}

}  // namespace kflow::testing
