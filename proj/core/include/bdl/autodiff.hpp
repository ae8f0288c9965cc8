#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "bdl/tensor.hpp"

namespace bdl {

// Result of one reverse pass: adjoints keyed by node. Nodes that did not
// participate (or were pruned because nothing below them needs gradients)
// report zeros.
class Adjoints {
 public:
  bool has(const Tensor& t) const { return grads_.count(t.node().get()) != 0; }
  Tensor get(const Tensor& t) const;

  std::unordered_map<const Node*, std::vector<double>> grads_;
};

struct BackwardOptions {
  // If set, the pass does not propagate through this node's inputs. Used
  // by the focus-map code, which only needs the adjoint at the feature tap.
  const Node* stop_below = nullptr;
};

// Reverse-mode pass from a scalar loss. Throws ContractViolation if the
// loss is not scalar, NumericError (naming the node) if a non-finite
// adjoint is produced.
Adjoints backward(const Tensor& loss, const BackwardOptions& opts = {});

// Gradients of `loss` with respect to `params`, aligned with `params`.
// Parameters that never entered the computation get zero gradients.
std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& params);

// Flattens per-parameter gradients into one vector, in parameter order.
std::vector<double> flatten_grads(const std::vector<Tensor>& grads);

// Central-difference check of the analytic gradient of `f` at `params`.
// Returns the max over all parameter entries of
//   |analytic - central| / max(|analytic|, |central|, 1e-12).
double finite_diff_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                         std::vector<Tensor> params, double eps);

}  // namespace bdl
