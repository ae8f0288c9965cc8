#include "bdl/tensor.hpp"

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

namespace bdl {

namespace {

std::atomic<uint64_t> g_next_node_id{1};

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

// One cheap full pass: any NaN/Inf in the buffer makes the sum non-finite.
bool all_finite(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return std::isfinite(s);
}

void check_finite(const NodePtr& node) {
  if (!all_finite(node->value)) {
    throw NumericError(std::string("non-finite value produced by ") + op_name(node->op) +
                       " (node " + std::to_string(node->id) + ")");
  }
}

NodePtr make_node(Op op, Shape shape, std::vector<NodePtr> inputs) {
  auto node = std::make_shared<Node>();
  node->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
  node->op = op;
  node->shape = std::move(shape);
  node->inputs = std::move(inputs);
  for (const auto& in : node->inputs) {
    if (in && in->requires_grad) node->requires_grad = true;
  }
  return node;
}

Tensor finish(NodePtr node) {
  check_finite(node);
  return Tensor(std::move(node));
}

// True if `small` equals the trailing dimensions of `big`.
bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    require(d > 0, "shape dimensions must be positive");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  if (shape.empty()) return "1";
  std::ostringstream os;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  return os.str();
}

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kMatmul: return "matmul";
    case Op::kConv2d: return "conv2d";
    case Op::kMaxPool2: return "maxpool2";
    case Op::kGlobalAvgPool: return "gap";
    case Op::kRelu: return "relu";
    case Op::kTanh: return "tanh";
    case Op::kLogSoftmax: return "logsoftmax";
    case Op::kGather: return "gather";
    case Op::kSum: return "sum";
    case Op::kSumAxis: return "sumaxis";
    case Op::kMean: return "mean";
    case Op::kScale: return "scale";
    case Op::kL1Norm: return "l1norm";
    case Op::kReshape: return "reshape";
  }
  return "?";
}

Tensor Tensor::leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  require(shape_numel(shape) == static_cast<int64_t>(data.size()),
          "leaf: shape does not match data length");
  auto node = make_node(Op::kLeaf, std::move(shape), {});
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return finish(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)), 0.0);
  return leaf(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)), value);
  return leaf(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return leaf({1}, {value}, requires_grad);
}

std::span<double> Tensor::mutable_data() {
  require(is_leaf(), "in-place mutation is only allowed on leaf tensors");
  return node_->value;
}

double Tensor::item() const {
  require(numel() == 1, "item() requires a scalar tensor");
  return node_->value[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  const Shape& s = shape();
  require(idx.size() == s.size(), "at(): rank mismatch");
  int64_t flat = 0;
  size_t d = 0;
  for (int64_t i : idx) {
    require(i >= 0 && i < s[d], "at(): index out of range");
    flat = flat * s[d] + i;
    ++d;
  }
  return node_->value[static_cast<size_t>(flat)];
}

Tensor Tensor::detach(bool requires_grad) const {
  return Tensor::leaf(shape(), std::vector<double>(node_->value), requires_grad);
}

namespace {

enum class BinKind { kAdd, kSub, kMul };

Tensor binary_op(Op op, BinKind kind, const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool scalar_a = a.numel() == 1;
  const bool scalar_b = b.numel() == 1;
  Shape out_shape;
  if (sa == sb) {
    out_shape = sa;
  } else if (scalar_b || is_suffix(sb, sa)) {
    out_shape = sa;
  } else if (scalar_a || is_suffix(sa, sb)) {
    out_shape = sb;
  } else {
    throw ContractViolation(std::string(op_name(op)) + ": incompatible shapes " +
                            shape_str(sa) + " vs " + shape_str(sb));
  }
  auto node = make_node(op, out_shape, {a.node(), b.node()});
  const int64_t n = shape_numel(out_shape);
  node->value.resize(static_cast<size_t>(n));
  const auto& va = a.node()->value;
  const auto& vb = b.node()->value;
  const int64_t na = a.numel();
  const int64_t nb = b.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double x = va[static_cast<size_t>(na == 1 ? 0 : i % na)];
    const double y = vb[static_cast<size_t>(nb == 1 ? 0 : i % nb)];
    double r = 0.0;
    switch (kind) {
      case BinKind::kAdd: r = x + y; break;
      case BinKind::kSub: r = x - y; break;
      case BinKind::kMul: r = x * y; break;
    }
    node->value[static_cast<size_t>(i)] = r;
  }
  return finish(std::move(node));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(Op::kAdd, BinKind::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(Op::kSub, BinKind::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(Op::kMul, BinKind::kMul, a, b); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2, "matmul: operands must be rank 2");
  const int64_t m = a.shape()[0], k = a.shape()[1];
  const int64_t k2 = b.shape()[0], n = b.shape()[1];
  require(k == k2, "matmul: inner dimensions differ (" + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()) + ")");
  auto node = make_node(Op::kMatmul, {m, n}, {a.node(), b.node()});
  node->value.resize(static_cast<size_t>(m * n));
  MapCM ma(a.data().data(), m, k);
  MapCM mb(b.data().data(), k, n);
  MapM mc(node->value.data(), m, n);
  mc.noalias() = ma * mb;
  return finish(std::move(node));
}

namespace {

struct ConvDims {
  int64_t batch, cin, h, w, cout, kh, kw, oh, ow;
  int64_t patch() const { return cin * kh * kw; }
  int64_t opix() const { return oh * ow; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& w) {
  require(x.shape().size() == 4, "conv2d: input must be (B,Cin,H,W)");
  require(w.shape().size() == 4, "conv2d: weight must be (Cout,Cin,KH,KW)");
  ConvDims d{};
  d.batch = x.shape()[0];
  d.cin = x.shape()[1];
  d.h = x.shape()[2];
  d.w = x.shape()[3];
  d.cout = w.shape()[0];
  d.kh = w.shape()[2];
  d.kw = w.shape()[3];
  require(w.shape()[1] == d.cin, "conv2d: channel mismatch");
  require(d.kh <= d.h && d.kw <= d.w, "conv2d: kernel larger than input");
  d.oh = d.h - d.kh + 1;
  d.ow = d.w - d.kw + 1;
  return d;
}

void im2col_image(const double* img, const ConvDims& d, double* col) {
  // col is (patch, opix) row-major for a single image.
  for (int64_t c = 0; c < d.cin; ++c) {
    for (int64_t kh = 0; kh < d.kh; ++kh) {
      for (int64_t kw = 0; kw < d.kw; ++kw) {
        double* row = col + ((c * d.kh + kh) * d.kw + kw) * d.opix();
        for (int64_t oh = 0; oh < d.oh; ++oh) {
          const double* src = img + (c * d.h + oh + kh) * d.w + kw;
          std::memcpy(row + oh * d.ow, src, static_cast<size_t>(d.ow) * sizeof(double));
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const ConvDims d = conv_dims(x, w);
  std::vector<NodePtr> inputs{x.node(), w.node()};
  if (bias.defined()) {
    require(bias.shape() == Shape{d.cout}, "conv2d: bias must be (Cout)");
    inputs.push_back(bias.node());
  }
  auto node = make_node(Op::kConv2d, {d.batch, d.cout, d.oh, d.ow}, std::move(inputs));
  node->value.resize(static_cast<size_t>(d.batch * d.cout * d.opix()));
  node->saved.resize(static_cast<size_t>(d.batch * d.patch() * d.opix()));

  MapCM wm(w.data().data(), d.cout, d.patch());
  const double* xp = x.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t b = 0; b < d.batch; ++b) {
    double* col = node->saved.data() + b * d.patch() * d.opix();
    im2col_image(xp + b * d.cin * d.h * d.w, d, col);
    MapCM colm(col, d.patch(), d.opix());
    MapM outm(node->value.data() + b * d.cout * d.opix(), d.cout, d.opix());
    outm.noalias() = wm * colm;
    if (bias.defined()) {
      for (int64_t c = 0; c < d.cout; ++c) outm.row(c).array() += bias.data()[static_cast<size_t>(c)];
    }
  }
  return finish(std::move(node));
}

Tensor maxpool2(const Tensor& x) {
  require(x.shape().size() == 4, "maxpool2: input must be (B,C,H,W)");
  const int64_t b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  require(h % 2 == 0 && w % 2 == 0, "maxpool2: spatial dims must be even");
  const int64_t oh = h / 2, ow = w / 2;
  auto node = make_node(Op::kMaxPool2, {b, c, oh, ow}, {x.node()});
  node->value.resize(static_cast<size_t>(b * c * oh * ow));
  node->indices.resize(node->value.size());
  const double* xp = x.data().data();
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const double* plane = xp + bc * h * w;
    const int64_t base = bc * h * w;
    for (int64_t i = 0; i < oh; ++i) {
      for (int64_t j = 0; j < ow; ++j) {
        int64_t best = (2 * i) * w + 2 * j;
        double bv = plane[best];
        const int64_t cand[3] = {(2 * i) * w + 2 * j + 1, (2 * i + 1) * w + 2 * j,
                                 (2 * i + 1) * w + 2 * j + 1};
        for (int64_t k : cand) {
          if (plane[k] > bv) {
            bv = plane[k];
            best = k;
          }
        }
        const size_t out_idx = static_cast<size_t>(bc * oh * ow + i * ow + j);
        node->value[out_idx] = bv;
        node->indices[out_idx] = base + best;
      }
    }
  }
  return finish(std::move(node));
}

Tensor global_avg_pool(const Tensor& x) {
  require(x.shape().size() == 4, "global_avg_pool: input must be (B,C,H,W)");
  const int64_t b = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  auto node = make_node(Op::kGlobalAvgPool, {b, c}, {x.node()});
  node->value.resize(static_cast<size_t>(b * c));
  const double* xp = x.data().data();
  for (int64_t i = 0; i < b * c; ++i) {
    double s = 0.0;
    for (int64_t k = 0; k < hw; ++k) s += xp[i * hw + k];
    node->value[static_cast<size_t>(i)] = s / static_cast<double>(hw);
  }
  return finish(std::move(node));
}

Tensor relu(const Tensor& x) {
  auto node = make_node(Op::kRelu, x.shape(), {x.node()});
  node->value.resize(x.data().size());
  for (size_t i = 0; i < node->value.size(); ++i) node->value[i] = std::max(0.0, x.data()[i]);
  return finish(std::move(node));
}

Tensor tanh(const Tensor& x) {
  auto node = make_node(Op::kTanh, x.shape(), {x.node()});
  node->value.resize(x.data().size());
  for (size_t i = 0; i < node->value.size(); ++i) node->value[i] = std::tanh(x.data()[i]);
  return finish(std::move(node));
}

Tensor log_softmax(const Tensor& x) {
  require(!x.shape().empty(), "log_softmax: rank >= 1 required");
  const int64_t k = x.shape().back();
  const int64_t rows = x.numel() / k;
  auto node = make_node(Op::kLogSoftmax, x.shape(), {x.node()});
  node->value.resize(x.data().size());
  const double* xp = x.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = xp + r * k;
    double m = row[0];
    for (int64_t i = 1; i < k; ++i) m = std::max(m, row[i]);
    double z = 0.0;
    for (int64_t i = 0; i < k; ++i) z += std::exp(row[i] - m);
    const double lz = m + std::log(z);
    for (int64_t i = 0; i < k; ++i) node->value[static_cast<size_t>(r * k + i)] = row[i] - lz;
  }
  return finish(std::move(node));
}

Tensor gather(const Tensor& x, const std::vector<int64_t>& rows_index) {
  require(x.shape().size() == 2, "gather: input must be (B,K)");
  const int64_t b = x.shape()[0], k = x.shape()[1];
  require(static_cast<int64_t>(rows_index.size()) == b, "gather: one index per row required");
  auto node = make_node(Op::kGather, {b}, {x.node()});
  node->indices = rows_index;
  node->value.resize(static_cast<size_t>(b));
  for (int64_t r = 0; r < b; ++r) {
    const int64_t j = rows_index[static_cast<size_t>(r)];
    require(j >= 0 && j < k, "gather: index " + std::to_string(j) + " out of range [0," +
                                 std::to_string(k) + ") at row " + std::to_string(r));
    node->value[static_cast<size_t>(r)] = x.data()[static_cast<size_t>(r * k + j)];
  }
  return finish(std::move(node));
}

Tensor sum(const Tensor& x) {
  auto node = make_node(Op::kSum, {1}, {x.node()});
  double s = 0.0;
  for (double v : x.data()) s += v;
  node->value = {s};
  return finish(std::move(node));
}

Tensor sum_axis(const Tensor& x, int64_t axis) {
  const Shape& s = x.shape();
  require(axis >= 0 && axis < static_cast<int64_t>(s.size()), "sum_axis: axis out of range");
  Shape out;
  for (int64_t i = 0; i < static_cast<int64_t>(s.size()); ++i) {
    if (i != axis) out.push_back(s[static_cast<size_t>(i)]);
  }
  if (out.empty()) out = {1};
  auto node = make_node(Op::kSumAxis, out, {x.node()});
  node->axis = axis;
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (int64_t i = axis + 1; i < static_cast<int64_t>(s.size()); ++i) inner *= s[static_cast<size_t>(i)];
  const int64_t n_axis = s[static_cast<size_t>(axis)];
  node->value.assign(static_cast<size_t>(outer * inner), 0.0);
  const double* xp = x.data().data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t a = 0; a < n_axis; ++a) {
      const double* src = xp + (o * n_axis + a) * inner;
      double* dst = node->value.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return finish(std::move(node));
}

Tensor mean(const Tensor& x) {
  auto node = make_node(Op::kMean, {1}, {x.node()});
  double s = 0.0;
  for (double v : x.data()) s += v;
  node->value = {s / static_cast<double>(x.numel())};
  return finish(std::move(node));
}

Tensor scale(const Tensor& x, double factor) {
  auto node = make_node(Op::kScale, x.shape(), {x.node()});
  node->scalar = factor;
  node->value.resize(x.data().size());
  for (size_t i = 0; i < node->value.size(); ++i) node->value[i] = factor * x.data()[i];
  return finish(std::move(node));
}

Tensor l1_norm(const Tensor& x) {
  auto node = make_node(Op::kL1Norm, {1}, {x.node()});
  double s = 0.0;
  for (double v : x.data()) s += std::abs(v);
  node->value = {s};
  return finish(std::move(node));
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(shape_numel(shape) == x.numel(), "reshape: element count must be preserved");
  auto node = make_node(Op::kReshape, std::move(shape), {x.node()});
  node->value.assign(x.data().begin(), x.data().end());
  return finish(std::move(node));
}

}  // namespace bdl
