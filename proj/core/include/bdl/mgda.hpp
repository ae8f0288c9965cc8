#pragma once

#include <span>
#include <vector>

#include "bdl/common.hpp"

namespace bdl {

// Convex coefficients over k tasks: alphas[i] >= 0, sum == 1.
struct SimplexWeights {
  std::vector<double> alphas;

  size_t size() const { return alphas.size(); }
  double operator[](size_t i) const { return alphas[i]; }
};

bool on_simplex(const SimplexWeights& w, double tol = 1e-9);

// Closed-form min-norm point on the segment between two gradients:
// returns (a, 1-a) minimizing ||a*g1 + (1-a)*g2||^2 over a in [0,1].
// Identical gradients tie-break to (0.5, 0.5).
SimplexWeights min_norm_pair(std::span<const double> g1, std::span<const double> g2);

// Frank-Wolfe iteration for the min-norm convex combination of k task
// gradients. Each step picks the vertex with the smallest inner product
// against the current combination and line-searches toward it with the
// two-point closed form. Works entirely on the k x k Gram matrix.
SimplexWeights frank_wolfe_min_norm(const std::vector<std::vector<double>>& grads,
                                    int max_iter = 250, double tol = 1e-6);

enum class NormalizeMode { kNone, kL2, kLossScale };

// Optional pre-scaling of task gradients before solving. kNone is the
// default everywhere; the solver itself never rescales.
void normalize_gradients(std::vector<std::vector<double>>& grads, NormalizeMode mode,
                         const std::vector<double>* losses = nullptr);

}  // namespace bdl
