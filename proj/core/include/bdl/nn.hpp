#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bdl/autodiff.hpp"
#include "bdl/tensor.hpp"

namespace bdl {

enum class LayerKind { kConv2d, kRelu, kMaxPool2, kFlatten, kLinear };

struct Layer {
  LayerKind kind;
  Tensor weight;  // conv: (Cout,Cin,K,K); linear: (In,Out)
  Tensor bias;    // conv: (Cout); linear: (Out)
};

struct ForwardResult {
  Tensor logits;
  Tensor feature_tap;  // undefined when the model has no tap
};

// Sequential feed-forward classifier. Parameters are leaf tensors owned by
// the model and updated in place by the optimizers; every forward pass
// records a fresh trace that reuses the parameter leaves.
class Model {
 public:
  // conv5x5x10 / relu / pool / conv5x5x20 / relu / pool / fc 320-50 / relu /
  // fc 50-100, for 1x28x28 inputs. The feature tap sits on the activation
  // after the last convolution.
  static Model reference_cnn(uint64_t init_seed);

  // flatten + single linear layer; init_scale 0 gives all-zero parameters.
  static Model linear_classifier(Shape input_shape, int64_t classes, uint64_t init_seed,
                                 double init_scale = 1.0);

  static Model from_descriptor(const std::string& descriptor, uint64_t init_seed = 0);

  Tensor forward(const Tensor& input) const;
  ForwardResult forward_with_tap(const Tensor& input) const;

  std::vector<Tensor> parameters();
  std::vector<Tensor> parameters() const;
  int64_t parameter_count() const;

  bool has_feature_tap() const { return tap_layer_ >= 0; }
  const Shape& input_shape() const { return input_shape_; }  // without batch dim
  int64_t num_classes() const { return classes_; }
  std::string descriptor() const;

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  std::vector<Layer> layers_;
  Shape input_shape_;
  int64_t classes_ = 0;
  int64_t tap_layer_ = -1;
};

enum class Reduction { kMean, kSum };

struct LossCriterion {
  enum class Kind { kCrossEntropy, kClassBalanced };
  Kind kind = Kind::kCrossEntropy;
  Reduction reduction = Reduction::kMean;
};

// Negative log-likelihood of the true labels under softmax(logits).
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels,
                     Reduction reduction = Reduction::kMean);

// Every example's loss term is divided by the number of occurrences of its
// label inside the batch, then the terms are summed.
Tensor class_balanced_cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels);

Tensor apply_criterion(const LossCriterion& criterion, const Tensor& logits,
                       const std::vector<int64_t>& labels);

class SgdOptimizer {
 public:
  explicit SgdOptimizer(double lr, double momentum = 0.0) : lr_(lr), momentum_(momentum) {}
  void step(std::vector<Tensor> params, const std::vector<Tensor>& grads);

 private:
  double lr_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::vector<Tensor> params, const std::vector<Tensor>& grads);
  int64_t steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Versioned binary checkpoint, magic "BLM1": architecture descriptor
// followed by the parameter tensors in declared order, 64-bit
// little-endian floats.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace bdl
