#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bdl/tensor.hpp"

namespace bdl {

// One recorded operation. Structure only: operation kind, operand wiring
// and shapes. No values, so the trace of a fixed program path is identical
// across batches.
struct TraceNode {
  uint64_t id = 0;
  Op op = Op::kLeaf;
  std::vector<uint64_t> operands;
  Shape shape;
};

// Recorded computational graph of one scalar loss evaluation.
struct GraphTrace {
  std::vector<TraceNode> nodes;  // topological order, operands first
  uint64_t root = 0;             // id of the scalar loss node
};

// Full DAG reachable from `loss`, in deterministic topological order.
// Throws ContractViolation if the tensor is untraced or not scalar.
GraphTrace trace_of(const Tensor& loss);

// Serializes the trace into a node-id-independent canonical form, one node
// per line: "<index> <kind> <operand-indices|-> <d0xd1x...>". Canonical
// indices are assigned by topological order with ties broken on
// (operation kind, operand indices, shape, structural hash), so any
// relabeling of the recorder's ids yields the same string.
std::string canonical_form(const GraphTrace& trace);

// Validates DAG order and single scalar root; throws ContractViolation.
void validate_trace(const GraphTrace& trace);

}  // namespace bdl
