#pragma once

#include "simcor/tensor.hpp"

#include <functional>

// Central finite-difference oracle for reverse-mode gradients. `rebuild` must
// construct the scalar loss from the leaves' *current* data. Returns the
// worst relative error across every element of every leaf.
inline double max_grad_rel_error(std::vector<simcor::Tensor> leaves,
                                 const std::function<simcor::Tensor()>& rebuild,
                                 double eps = 1e-3) {
  using simcor::Tensor;
  for (auto& leaf : leaves) leaf.zero_grad();
  Tensor loss = rebuild();
  loss.backward();

  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) {
    analytic.push_back(leaf.grad().empty()
                           ? std::vector<double>(leaf.data().size(), 0.0)
                           : leaf.grad());
  }

  double worst = 0.0;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto& data = leaves[l].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      double keep = data[i];
      data[i] = keep + eps;
      double up = rebuild().item();
      data[i] = keep - eps;
      double down = rebuild().item();
      data[i] = keep;
      double fd = (up - down) / (2 * eps);
      double g = analytic[l][i];
      double denom = std::max({std::abs(fd), std::abs(g), 1e-6});
      worst = std::max(worst, std::abs(fd - g) / denom);
    }
  }
  return worst;
}

// Reduce a tensor-valued op to a scalar with fixed random weights so the
// whole Jacobian is exercised by one backward pass.
inline simcor::Tensor weighted_sum(const simcor::Tensor& t,
                                   const std::vector<double>& weights) {
  using simcor::Tensor;
  using simcor::TensorNode;
  double total = 0.0;
  for (std::size_t i = 0; i < t.data().size(); ++i)
    total += t.data()[i] * weights[i];
  auto w = std::make_shared<std::vector<double>>(weights);
  return Tensor::make_op(
      {1}, {total}, {t}, [w](TensorNode& self) {
        TensorNode& parent = *self.parents[0];
        if (!parent.requires_grad) return;
        auto& g = parent.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += self.grad[0] * (*w)[i];
      });
}
