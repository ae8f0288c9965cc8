#include "bdl/autodiff.hpp"

#include <Eigen/Dense>
#ifdef _OPENMP
#include <omp.h>
#endif

#include <cmath>
#include <cstring>
#include <unordered_set>

namespace bdl {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

bool all_finite(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return std::isfinite(s);
}

// Post-order over the requires_grad subgraph: producers before consumers.
std::vector<const Node*> topo_order(const Node* root, const Node* stop_below) {
  std::vector<const Node*> order;
  std::unordered_set<const Node*> done;
  std::vector<std::pair<const Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (done.count(node)) {
      stack.pop_back();
      continue;
    }
    const bool descend = node != stop_below;
    bool pushed = false;
    while (descend && next < node->inputs.size()) {
      const Node* in = node->inputs[next].get();
      ++next;
      if (in && in->requires_grad && !done.count(in)) {
        stack.emplace_back(in, 0);
        pushed = true;
        break;
      }
    }
    if (!pushed && (!descend || next >= node->inputs.size())) {
      done.insert(node);
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

class BackwardPass {
 public:
  explicit BackwardPass(const BackwardOptions& opts) : opts_(opts) {}

  std::unordered_map<const Node*, std::vector<double>> run(const Node* root) {
    grads_[root] = {1.0};
    auto order = topo_order(root, opts_.stop_below);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const Node* node = *it;
      auto found = grads_.find(node);
      if (found == grads_.end()) continue;
      if (!all_finite(found->second)) {
        throw NumericError(std::string("non-finite gradient at ") + op_name(node->op) +
                           " (node " + std::to_string(node->id) + ")");
      }
      if (node != opts_.stop_below) dispatch(node, found->second);
    }
    return std::move(grads_);
  }

 private:
  std::vector<double>& buf(const Node* node) {
    auto [it, inserted] = grads_.try_emplace(node);
    if (inserted) it->second.assign(static_cast<size_t>(node->numel()), 0.0);
    return it->second;
  }

  bool wants(const Node* node) const { return node && node->requires_grad; }

  void dispatch(const Node* node, const std::vector<double>& g) {
    switch (node->op) {
      case Op::kLeaf:
        break;
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul:
        backward_binary(node, g);
        break;
      case Op::kMatmul:
        backward_matmul(node, g);
        break;
      case Op::kConv2d:
        backward_conv2d(node, g);
        break;
      case Op::kMaxPool2: {
        const Node* x = node->inputs[0].get();
        if (!wants(x)) break;
        auto& dx = buf(x);
        for (size_t i = 0; i < g.size(); ++i) dx[static_cast<size_t>(node->indices[i])] += g[i];
        break;
      }
      case Op::kGlobalAvgPool: {
        const Node* x = node->inputs[0].get();
        if (!wants(x)) break;
        auto& dx = buf(x);
        const int64_t hw = x->shape[2] * x->shape[3];
        const double inv = 1.0 / static_cast<double>(hw);
        for (size_t i = 0; i < g.size(); ++i) {
          double* dst = dx.data() + static_cast<int64_t>(i) * hw;
          const double gi = g[i] * inv;
          for (int64_t k = 0; k < hw; ++k) dst[k] += gi;
        }
        break;
      }
      case Op::kRelu: {
        const Node* x = node->inputs[0].get();
        if (!wants(x)) break;
        auto& dx = buf(x);
        for (size_t i = 0; i < g.size(); ++i) {
          if (node->value[i] > 0.0) dx[i] += g[i];
        }
        break;
      }
      case Op::kTanh: {
        const Node* x = node->inputs[0].get();
        if (!wants(x)) break;
        auto& dx = buf(x);
        for (size_t i = 0; i < g.size(); ++i) {
          const double t = node->value[i];
          dx[i] += g[i] * (1.0 - t * t);
        }
        break;
      }
      case Op::kLogSoftmax: {
        const Node* x = node->inputs[0].get();
        if (!wants(x)) break;
        auto& dx = buf(x);
        const int64_t k = node->shape.back();
        const int64_t rows = node->numel() / k;
        for (int64_t r = 0; r < rows; ++r) {
          double gsum = 0.0;
          for (int64_t i = 0; i < k; ++i) gsum += g[static_cast<size_t>(r * k + i)];
          for (int64_t i = 0; i < k; ++i) {
            const size_t idx = static_cast<size_t>(r * k + i);
            dx[idx] += g[idx] - std::exp(node->value[idx]) * gsum;
          }
        }
        break;
      }
      case Op::kGather: {
        const Node* x = node->inputs[0].get();
        if (!wants(x)) break;
        auto& dx = buf(x);
        const int64_t k = x->shape[1];
        for (size_t r = 0; r < g.size(); ++r) {
          dx[static_cast<size_t>(static_cast<int64_t>(r) * k + node->indices[r])] += g[r];
        }
        break;
      }
      case Op::kSum: {
        const Node* x = node->inputs[0].get();
        if (!wants(x)) break;
        auto& dx = buf(x);
        for (double& v : dx) v += g[0];
        break;
      }
      case Op::kSumAxis: {
        const Node* x = node->inputs[0].get();
        if (!wants(x)) break;
        auto& dx = buf(x);
        const Shape& s = x->shape;
        int64_t outer = 1, inner = 1;
        for (int64_t i = 0; i < node->axis; ++i) outer *= s[static_cast<size_t>(i)];
        for (size_t i = static_cast<size_t>(node->axis) + 1; i < s.size(); ++i) inner *= s[i];
        const int64_t n_axis = s[static_cast<size_t>(node->axis)];
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t a = 0; a < n_axis; ++a) {
            double* dst = dx.data() + (o * n_axis + a) * inner;
            const double* src = g.data() + o * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
          }
        }
        break;
      }
      case Op::kMean: {
        const Node* x = node->inputs[0].get();
        if (!wants(x)) break;
        auto& dx = buf(x);
        const double gi = g[0] / static_cast<double>(x->numel());
        for (double& v : dx) v += gi;
        break;
      }
      case Op::kScale: {
        const Node* x = node->inputs[0].get();
        if (!wants(x)) break;
        auto& dx = buf(x);
        for (size_t i = 0; i < g.size(); ++i) dx[i] += node->scalar * g[i];
        break;
      }
      case Op::kL1Norm: {
        const Node* x = node->inputs[0].get();
        if (!wants(x)) break;
        auto& dx = buf(x);
        for (size_t i = 0; i < dx.size(); ++i) {
          const double v = x->value[i];
          if (v > 0.0) dx[i] += g[0];
          else if (v < 0.0) dx[i] -= g[0];
        }
        break;
      }
      case Op::kReshape: {
        const Node* x = node->inputs[0].get();
        if (!wants(x)) break;
        auto& dx = buf(x);
        for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        break;
      }
    }
  }

  void backward_binary(const Node* node, const std::vector<double>& g) {
    const Node* a = node->inputs[0].get();
    const Node* b = node->inputs[1].get();
    const int64_t n = node->numel();
    const int64_t na = a->numel(), nb = b->numel();
    if (wants(a)) {
      auto& da = buf(a);
      for (int64_t i = 0; i < n; ++i) {
        const double gi = g[static_cast<size_t>(i)];
        double contrib = gi;
        if (node->op == Op::kMul) contrib = gi * b->value[static_cast<size_t>(nb == 1 ? 0 : i % nb)];
        da[static_cast<size_t>(na == 1 ? 0 : i % na)] += contrib;
      }
    }
    if (wants(b)) {
      auto& db = buf(b);
      for (int64_t i = 0; i < n; ++i) {
        const double gi = g[static_cast<size_t>(i)];
        double contrib = gi;
        if (node->op == Op::kMul) contrib = gi * a->value[static_cast<size_t>(na == 1 ? 0 : i % na)];
        if (node->op == Op::kSub) contrib = -gi;
        db[static_cast<size_t>(nb == 1 ? 0 : i % nb)] += contrib;
      }
    }
  }

  void backward_matmul(const Node* node, const std::vector<double>& g) {
    const Node* a = node->inputs[0].get();
    const Node* b = node->inputs[1].get();
    const int64_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    MapCM gm(g.data(), m, n);
    if (wants(a)) {
      MapCM bm(b->value.data(), k, n);
      MapM dam(buf(a).data(), m, k);
      dam.noalias() += gm * bm.transpose();
    }
    if (wants(b)) {
      MapCM am(a->value.data(), m, k);
      MapM dbm(buf(b).data(), k, n);
      dbm.noalias() += am.transpose() * gm;
    }
  }

  void backward_conv2d(const Node* node, const std::vector<double>& g) {
    const Node* x = node->inputs[0].get();
    const Node* w = node->inputs[1].get();
    const Node* bias = node->inputs.size() > 2 ? node->inputs[2].get() : nullptr;
    const int64_t batch = x->shape[0], cin = x->shape[1], h = x->shape[2], wd = x->shape[3];
    const int64_t cout = w->shape[0], kh = w->shape[2], kw = w->shape[3];
    const int64_t oh = node->shape[2], ow = node->shape[3];
    const int64_t patch = cin * kh * kw, opix = oh * ow;

    if (bias && wants(bias)) {
      auto& db = buf(bias);
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t c = 0; c < cout; ++c) {
          const double* src = g.data() + (b * cout + c) * opix;
          double s = 0.0;
          for (int64_t p = 0; p < opix; ++p) s += src[p];
          db[static_cast<size_t>(c)] += s;
        }
      }
    }

    if (wants(w)) {
      // Per-thread partial accumulators, reduced in fixed thread order so
      // the result does not depend on scheduling.
#ifdef _OPENMP
      const int nthreads = omp_get_max_threads();
#else
      const int nthreads = 1;
#endif
      std::vector<std::vector<double>> partial(
          static_cast<size_t>(nthreads),
          std::vector<double>(static_cast<size_t>(cout * patch), 0.0));
#pragma omp parallel for schedule(static)
      for (int64_t b = 0; b < batch; ++b) {
#ifdef _OPENMP
        const int tid = omp_get_thread_num();
#else
        const int tid = 0;
#endif
        MapCM gb(g.data() + b * cout * opix, cout, opix);
        MapCM colb(node->saved.data() + b * patch * opix, patch, opix);
        MapM dwb(partial[static_cast<size_t>(tid)].data(), cout, patch);
        dwb.noalias() += gb * colb.transpose();
      }
      auto& dw = buf(w);
      for (const auto& part : partial) {
        for (size_t i = 0; i < dw.size(); ++i) dw[i] += part[i];
      }
    }

    if (wants(x)) {
      auto& dx = buf(x);
      MapCM wm(w->value.data(), cout, patch);
#pragma omp parallel for schedule(static)
      for (int64_t b = 0; b < batch; ++b) {
        MatRM dcol(patch, opix);
        MapCM gb(g.data() + b * cout * opix, cout, opix);
        dcol.noalias() = wm.transpose() * gb;
        // col2im scatter-add
        double* dxb = dx.data() + b * cin * h * wd;
        for (int64_t c = 0; c < cin; ++c) {
          for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
              const double* row = dcol.data() + ((c * kh + ki) * kw + kj) * opix;
              for (int64_t oi = 0; oi < oh; ++oi) {
                double* dst = dxb + (c * h + oi + ki) * wd + kj;
                const double* src = row + oi * ow;
                for (int64_t oj = 0; oj < ow; ++oj) dst[oj] += src[oj];
              }
            }
          }
        }
      }
    }
  }

  BackwardOptions opts_;
  std::unordered_map<const Node*, std::vector<double>> grads_;
};

}  // namespace

Tensor Adjoints::get(const Tensor& t) const {
  auto it = grads_.find(t.node().get());
  if (it == grads_.end()) return Tensor::zeros(t.shape());
  return Tensor::leaf(t.shape(), it->second);
}

Adjoints backward(const Tensor& loss, const BackwardOptions& opts) {
  require(loss.defined() && loss.node() != nullptr, "backward: undefined loss tensor");
  require(loss.numel() == 1, "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  Adjoints result;
  if (!loss.node()->requires_grad) return result;  // nothing depends on parameters
  BackwardPass pass(opts);
  result.grads_ = pass.run(loss.node().get());
  return result;
}

std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& params) {
  Adjoints adj = backward(loss);
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(adj.get(p));
  return out;
}

std::vector<double> flatten_grads(const std::vector<Tensor>& grads) {
  size_t total = 0;
  for (const auto& g : grads) total += g.data().size();
  std::vector<double> flat;
  flat.reserve(total);
  for (const auto& g : grads) flat.insert(flat.end(), g.data().begin(), g.data().end());
  return flat;
}

double finite_diff_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                         std::vector<Tensor> params, double eps) {
  require(eps > 0.0, "finite_diff_check: eps must be positive");
  Tensor loss = f(params);
  require(loss.numel() == 1, "finite_diff_check: f must return a scalar");
  if (!std::isfinite(loss.item())) throw NumericError("finite_diff_check: non-finite f output");
  const std::vector<Tensor> analytic = grad(loss, params);

  double worst = 0.0;
  for (size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].mutable_data();
    for (size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + eps;
      const double fp = f(params).item();
      values[i] = orig - eps;
      const double fm = f(params).item();
      values[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NumericError("finite_diff_check: non-finite f output under perturbation");
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      const double exact = analytic[p].data()[i];
      const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-12});
      worst = std::max(worst, std::abs(exact - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace bdl
