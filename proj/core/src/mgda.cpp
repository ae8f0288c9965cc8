#include "bdl/mgda.hpp"

#include <cmath>
#include <string>

namespace bdl {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_finite(std::span<const double> g, size_t task) {
  double s = 0.0;
  for (double v : g) s += v;
  if (!std::isfinite(s)) {
    throw NumericError("mgda: non-finite gradient for task " + std::to_string(task));
  }
}

// Weight on `a` minimizing ||w*a + (1-w)*b||^2, from the three dot
// products aa = a.a, ab = a.b, bb = b.b.
double pair_weight(double aa, double ab, double bb) {
  const double denom = aa - 2.0 * ab + bb;  // ||a - b||^2
  if (denom <= 0.0) return 0.5;             // a == b: every weight is optimal
  const double w = (bb - ab) / denom;
  return std::min(1.0, std::max(0.0, w));
}

}  // namespace

bool on_simplex(const SimplexWeights& w, double tol) {
  double sum = 0.0;
  for (double a : w.alphas) {
    if (a < 0.0) return false;
    sum += a;
  }
  return std::abs(sum - 1.0) <= tol;
}

SimplexWeights min_norm_pair(std::span<const double> g1, std::span<const double> g2) {
  require(g1.size() == g2.size(), "min_norm_pair: gradient lengths differ");
  check_finite(g1, 0);
  check_finite(g2, 1);
  const double a = pair_weight(dot(g1, g1), dot(g1, g2), dot(g2, g2));
  return SimplexWeights{{a, 1.0 - a}};
}

SimplexWeights frank_wolfe_min_norm(const std::vector<std::vector<double>>& grads,
                                    int max_iter, double tol) {
  require(!grads.empty(), "frank_wolfe_min_norm: empty gradient set");
  require(max_iter >= 1, "frank_wolfe_min_norm: max_iter must be >= 1");
  const size_t k = grads.size();
  const size_t dim = grads[0].size();
  for (size_t i = 0; i < k; ++i) {
    require(grads[i].size() == dim, "frank_wolfe_min_norm: gradient lengths differ");
    check_finite(grads[i], i);
  }
  if (k == 1) return SimplexWeights{{1.0}};

  // Gram matrix; everything after this is O(k^2) per iteration.
  std::vector<double> gram(k * k);
  for (size_t i = 0; i < k; ++i) {
    for (size_t j = i; j < k; ++j) {
      gram[i * k + j] = gram[j * k + i] = dot(grads[i], grads[j]);
    }
  }

  std::vector<double> alpha(k, 1.0 / static_cast<double>(k));
  auto gram_alpha = [&](std::vector<double>& out) {
    for (size_t i = 0; i < k; ++i) {
      double s = 0.0;
      for (size_t j = 0; j < k; ++j) s += gram[i * k + j] * alpha[j];
      out[i] = s;
    }
  };

  std::vector<double> v(k);
  gram_alpha(v);
  double norm2 = dot(alpha, v);  // ||G alpha||^2

  for (int iter = 0; iter < max_iter; ++iter) {
    size_t best = 0;
    for (size_t i = 1; i < k; ++i) {
      if (v[i] < v[best]) best = i;
    }
    // Line search between the current combination and the chosen vertex.
    const double aa = norm2;
    const double ab = v[best];
    const double bb = gram[best * k + best];
    const double w = pair_weight(aa, ab, bb);

    for (size_t i = 0; i < k; ++i) alpha[i] *= w;
    alpha[best] += 1.0 - w;

    gram_alpha(v);
    const double new_norm2 = dot(alpha, v);
    const double improvement = norm2 - new_norm2;
    norm2 = new_norm2;
    if (improvement < tol) break;
  }

  // Guard against drift from repeated scaling.
  double sum = 0.0;
  for (double& a : alpha) {
    if (a < 0.0) a = 0.0;
    sum += a;
  }
  for (double& a : alpha) a /= sum;
  return SimplexWeights{std::move(alpha)};
}

void normalize_gradients(std::vector<std::vector<double>>& grads, NormalizeMode mode,
                         const std::vector<double>* losses) {
  switch (mode) {
    case NormalizeMode::kNone:
      return;
    case NormalizeMode::kL2:
      for (auto& g : grads) {
        const double norm = std::sqrt(dot(g, g));
        if (norm == 0.0) continue;  // zero gradient left untouched
        for (double& v : g) v /= norm;
      }
      return;
    case NormalizeMode::kLossScale: {
      require(losses != nullptr && losses->size() == grads.size(),
              "normalize_gradients: loss-scale mode needs one loss per gradient");
      for (size_t i = 0; i < grads.size(); ++i) {
        const double loss = (*losses)[i];
        require(loss > 0.0, "normalize_gradients: loss-scale requires positive losses");
        for (double& v : grads[i]) v /= loss;
      }
      return;
    }
  }
}

}  // namespace bdl
