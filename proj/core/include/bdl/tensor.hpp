#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bdl/common.hpp"

namespace bdl {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Traced operations. The set is fixed: it covers dense classifier forward
// passes, the loss criteria, and the mask/pattern arithmetic used by the
// trigger-search code, and nothing else.
enum class Op {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kMatmul,
  kConv2d,
  kMaxPool2,
  kGlobalAvgPool,
  kRelu,
  kTanh,
  kLogSoftmax,
  kGather,
  kSum,
  kSumAxis,
  kMean,
  kScale,
  kL1Norm,
  kReshape,
};

const char* op_name(Op op);

struct Node {
  uint64_t id = 0;
  Op op = Op::kLeaf;
  Shape shape;
  std::vector<std::shared_ptr<Node>> inputs;
  std::vector<double> value;
  bool requires_grad = false;

  // Per-op extras.
  double scalar = 0.0;            // kScale factor
  int64_t axis = -1;              // kSumAxis axis
  std::vector<int64_t> indices;   // kGather row indices / kMaxPool2 argmax
  std::vector<double> saved;      // kConv2d im2col buffer kept for backward

  int64_t numel() const { return shape_numel(shape); }
};

using NodePtr = std::shared_ptr<Node>;

// Value handle over one graph node. Copies are shallow; the underlying
// buffer is shared. Leaf tensors may be mutated in place (optimizer
// updates); everything else is immutable once created.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor leaf(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->op == Op::kLeaf; }

  std::span<const double> data() const { return node_->value; }
  // Leaf-only in-place access; used by optimizers and data loaders.
  std::span<double> mutable_data();

  double item() const;  // scalar tensors only
  double at(std::initializer_list<int64_t> idx) const;

  // New untraced leaf holding a copy of this tensor's values.
  Tensor detach(bool requires_grad = false) const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Traced elementwise/linear-algebra operations. Binary ops accept equal
// shapes, a one-element operand, or an operand whose shape is a suffix of
// the other's (row-vector bias, per-plane mask); the smaller operand is
// broadcast across the leading dimensions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
// Valid (no padding) stride-1 2-D convolution. x: (B,Cin,H,W),
// w: (Cout,Cin,KH,KW), optional bias: (Cout).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor());
Tensor maxpool2(const Tensor& x);          // 2x2 window, stride 2
Tensor global_avg_pool(const Tensor& x);   // (B,C,H,W) -> (B,C)
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor log_softmax(const Tensor& x);       // over the last dimension
Tensor gather(const Tensor& x, const std::vector<int64_t>& rows_index);  // (B,K) -> (B)
Tensor sum(const Tensor& x);
Tensor sum_axis(const Tensor& x, int64_t axis);
Tensor mean(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor l1_norm(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }

}  // namespace bdl
