#include "bdl/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

namespace bdl {

namespace {

Tensor uniform_init(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (double& v : data) v = dist(rng);
  return Tensor::leaf(std::move(shape), std::move(data), /*requires_grad=*/true);
}

Layer make_conv(int64_t cin, int64_t cout, int64_t k, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
  Layer layer{LayerKind::kConv2d, uniform_init({cout, cin, k, k}, bound, rng),
              uniform_init({cout}, bound, rng)};
  return layer;
}

Layer make_linear(int64_t in, int64_t out, std::mt19937_64& rng, double scale = 1.0) {
  const double bound = scale / std::sqrt(static_cast<double>(in));
  Layer layer{LayerKind::kLinear, uniform_init({in, out}, bound, rng),
              uniform_init({out}, bound, rng)};
  return layer;
}

}  // namespace

Model Model::reference_cnn(uint64_t init_seed) {
  std::mt19937_64 rng(init_seed);
  Model m;
  m.input_shape_ = {1, 28, 28};
  m.classes_ = 100;
  m.layers_.push_back(make_conv(1, 10, 5, rng));
  m.layers_.push_back(Layer{LayerKind::kRelu, {}, {}});
  m.layers_.push_back(Layer{LayerKind::kMaxPool2, {}, {}});
  m.layers_.push_back(make_conv(10, 20, 5, rng));
  m.layers_.push_back(Layer{LayerKind::kRelu, {}, {}});
  m.layers_.push_back(Layer{LayerKind::kMaxPool2, {}, {}});
  m.layers_.push_back(Layer{LayerKind::kFlatten, {}, {}});
  m.layers_.push_back(make_linear(320, 50, rng));
  m.layers_.push_back(Layer{LayerKind::kRelu, {}, {}});
  m.layers_.push_back(make_linear(50, 100, rng));
  m.tap_layer_ = 4;  // activation after the last convolution
  return m;
}

Model Model::linear_classifier(Shape input_shape, int64_t classes, uint64_t init_seed,
                               double init_scale) {
  std::mt19937_64 rng(init_seed);
  Model m;
  m.input_shape_ = std::move(input_shape);
  m.classes_ = classes;
  const int64_t in = shape_numel(m.input_shape_);
  m.layers_.push_back(Layer{LayerKind::kFlatten, {}, {}});
  m.layers_.push_back(make_linear(in, classes, rng, init_scale));
  return m;
}

Tensor Model::forward(const Tensor& input) const { return forward_with_tap(input).logits; }

ForwardResult Model::forward_with_tap(const Tensor& input) const {
  require(input.shape().size() == input_shape_.size() + 1,
          "model_forward: expected batched input of shape Bx" + shape_str(input_shape_));
  for (size_t i = 0; i < input_shape_.size(); ++i) {
    require(input.shape()[i + 1] == input_shape_[i],
            "model_forward: input shape " + shape_str(input.shape()) + " does not match Bx" +
                shape_str(input_shape_));
  }
  const int64_t batch = input.shape()[0];
  ForwardResult result;
  Tensor x = input;
  for (size_t i = 0; i < layers_.size(); ++i) {
    const Layer& layer = layers_[i];
    switch (layer.kind) {
      case LayerKind::kConv2d:
        x = conv2d(x, layer.weight, layer.bias);
        break;
      case LayerKind::kRelu:
        x = relu(x);
        break;
      case LayerKind::kMaxPool2:
        x = maxpool2(x);
        break;
      case LayerKind::kFlatten:
        x = reshape(x, {batch, x.numel() / batch});
        break;
      case LayerKind::kLinear:
        x = add(matmul(x, layer.weight), layer.bias);
        break;
    }
    if (static_cast<int64_t>(i) == tap_layer_) result.feature_tap = x;
  }
  result.logits = x;
  return result;
}

std::vector<Tensor> Model::parameters() {
  std::vector<Tensor> params;
  for (auto& layer : layers_) {
    if (layer.weight.defined()) params.push_back(layer.weight);
    if (layer.bias.defined()) params.push_back(layer.bias);
  }
  return params;
}

std::vector<Tensor> Model::parameters() const {
  return const_cast<Model*>(this)->parameters();
}

int64_t Model::parameter_count() const {
  int64_t n = 0;
  for (const auto& layer : layers_) {
    if (layer.weight.defined()) n += layer.weight.numel();
    if (layer.bias.defined()) n += layer.bias.numel();
  }
  return n;
}

std::string Model::descriptor() const {
  std::ostringstream os;
  os << "v1;input=" << shape_str(input_shape_) << ";classes=" << classes_
     << ";tap=" << tap_layer_ << ";layers=";
  for (size_t i = 0; i < layers_.size(); ++i) {
    if (i) os << ',';
    const Layer& l = layers_[i];
    switch (l.kind) {
      case LayerKind::kConv2d:
        os << "conv(" << l.weight.shape()[1] << ':' << l.weight.shape()[0] << ':'
           << l.weight.shape()[2] << ')';
        break;
      case LayerKind::kRelu: os << "relu"; break;
      case LayerKind::kMaxPool2: os << "pool"; break;
      case LayerKind::kFlatten: os << "flatten"; break;
      case LayerKind::kLinear:
        os << "linear(" << l.weight.shape()[0] << ':' << l.weight.shape()[1] << ')';
        break;
    }
  }
  return os.str();
}

namespace {

Shape parse_shape(const std::string& text) {
  Shape shape;
  std::stringstream ss(text);
  std::string dim;
  while (std::getline(ss, dim, 'x')) shape.push_back(std::stoll(dim));
  return shape;
}

}  // namespace

Model Model::from_descriptor(const std::string& descriptor, uint64_t init_seed) {
  std::unordered_map<std::string, std::string> fields;
  std::stringstream ss(descriptor);
  std::string part;
  std::string version;
  while (std::getline(ss, part, ';')) {
    auto eq = part.find('=');
    if (eq == std::string::npos) {
      version = part;
    } else {
      fields[part.substr(0, eq)] = part.substr(eq + 1);
    }
  }
  if (version != "v1") throw FormatError("model descriptor: unsupported version '" + version + "'");
  std::mt19937_64 rng(init_seed);
  Model m;
  m.input_shape_ = parse_shape(fields.at("input"));
  m.classes_ = std::stoll(fields.at("classes"));
  m.tap_layer_ = std::stoll(fields.at("tap"));
  std::stringstream layers(fields.at("layers"));
  std::string spec;
  while (std::getline(layers, spec, ',')) {
    if (spec == "relu") {
      m.layers_.push_back(Layer{LayerKind::kRelu, {}, {}});
    } else if (spec == "pool") {
      m.layers_.push_back(Layer{LayerKind::kMaxPool2, {}, {}});
    } else if (spec == "flatten") {
      m.layers_.push_back(Layer{LayerKind::kFlatten, {}, {}});
    } else if (spec.rfind("conv(", 0) == 0) {
      int64_t cin, cout, k;
      if (std::sscanf(spec.c_str(), "conv(%ld:%ld:%ld)", &cin, &cout, &k) != 3) {
        throw FormatError("model descriptor: bad conv spec '" + spec + "'");
      }
      m.layers_.push_back(make_conv(cin, cout, k, rng));
    } else if (spec.rfind("linear(", 0) == 0) {
      int64_t in, out;
      if (std::sscanf(spec.c_str(), "linear(%ld:%ld)", &in, &out) != 2) {
        throw FormatError("model descriptor: bad linear spec '" + spec + "'");
      }
      m.layers_.push_back(make_linear(in, out, rng));
    } else {
      throw FormatError("model descriptor: unknown layer '" + spec + "'");
    }
  }
  return m;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels,
                     Reduction reduction) {
  require(logits.shape().size() == 2, "cross_entropy: logits must be (B,K)");
  const Tensor picked = gather(log_softmax(logits), labels);
  const Tensor reduced = reduction == Reduction::kMean ? mean(picked) : sum(picked);
  return scale(reduced, -1.0);
}

Tensor class_balanced_cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels) {
  require(logits.shape().size() == 2, "class_balanced_cross_entropy: logits must be (B,K)");
  require(!labels.empty(), "class_balanced_cross_entropy: empty batch");
  std::unordered_map<int64_t, double> counts;
  for (int64_t y : labels) counts[y] += 1.0;
  std::vector<double> weights(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) weights[i] = 1.0 / counts[labels[i]];
  const Tensor picked = gather(log_softmax(logits), labels);
  const Tensor weighted = mul(picked, Tensor::leaf({static_cast<int64_t>(labels.size())}, weights));
  return scale(sum(weighted), -1.0);
}

Tensor apply_criterion(const LossCriterion& criterion, const Tensor& logits,
                       const std::vector<int64_t>& labels) {
  if (criterion.kind == LossCriterion::Kind::kClassBalanced) {
    return class_balanced_cross_entropy(logits, labels);
  }
  return cross_entropy(logits, labels, criterion.reduction);
}

void SgdOptimizer::step(std::vector<Tensor> params, const std::vector<Tensor>& grads) {
  require(grads.size() == params.size(), "sgd_step: gradient missing for some parameter");
  if (velocity_.empty()) {
    for (const auto& p : params) velocity_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
  }
  require(velocity_.size() == params.size(), "sgd_step: parameter set changed mid-run");
  for (size_t i = 0; i < params.size(); ++i) {
    require(grads[i].shape() == params[i].shape(), "sgd_step: gradient shape mismatch");
    auto values = params[i].mutable_data();
    auto g = grads[i].data();
    auto& v = velocity_[i];
    for (size_t j = 0; j < values.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j];
      values[j] -= lr_ * v[j];
    }
  }
}

void AdamOptimizer::step(std::vector<Tensor> params, const std::vector<Tensor>& grads) {
  require(grads.size() == params.size(), "adam_step: gradient missing for some parameter");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
      v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    }
  }
  require(m_.size() == params.size(), "adam_step: parameter set changed mid-run");
  ++t_;
  const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    require(grads[i].shape() == params[i].shape(), "adam_step: gradient shape mismatch");
    auto values = params[i].mutable_data();
    auto g = grads[i].data();
    for (size_t j = 0; j < values.size(); ++j) {
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m_[i][j] / bias1;
      const double vhat = v_[i][j] / bias2;
      values[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

namespace {

constexpr char kCheckpointMagic[4] = {'B', 'L', 'M', '1'};
constexpr uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw FormatError("checkpoint: truncated header");
  return v;
}

uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  if (!is) throw FormatError("checkpoint: truncated header");
  return v;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
  os.write(kCheckpointMagic, 4);
  write_u32(os, kCheckpointVersion);
  const std::string desc = model.descriptor();
  write_u32(os, static_cast<uint32_t>(desc.size()));
  os.write(desc.data(), static_cast<std::streamsize>(desc.size()));
  const auto params = model.parameters();
  write_u32(os, static_cast<uint32_t>(params.size()));
  for (const auto& p : params) {
    write_u32(os, static_cast<uint32_t>(p.shape().size()));
    for (int64_t d : p.shape()) write_u64(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(p.data().data()),
             static_cast<std::streamsize>(p.data().size() * sizeof(double)));
  }
  if (!os) throw FormatError("checkpoint: write failed for '" + path + "'");
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic, expected BLM1, found '" +
                      std::string(magic, is ? 4 : 0) + "'");
  }
  const uint32_t version = read_u32(is);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const uint32_t desc_len = read_u32(is);
  std::string desc(desc_len, '\0');
  is.read(desc.data(), desc_len);
  if (!is) throw FormatError("checkpoint: truncated descriptor");
  Model model = Model::from_descriptor(desc);
  auto params = model.parameters();
  const uint32_t count = read_u32(is);
  if (count != params.size()) {
    throw FormatError("checkpoint: descriptor declares " + std::to_string(params.size()) +
                      " tensors, file carries " + std::to_string(count));
  }
  for (auto& p : params) {
    const uint32_t rank = read_u32(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int64_t>(read_u64(is));
    if (shape != p.shape()) {
      throw FormatError("checkpoint: tensor shape " + shape_str(shape) +
                        " does not match descriptor shape " + shape_str(p.shape()));
    }
    auto values = p.mutable_data();
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!is) throw FormatError("checkpoint: truncated tensor payload");
  }
  return model;
}

}  // namespace bdl
