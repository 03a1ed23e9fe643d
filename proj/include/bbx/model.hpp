#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bbx/rng.hpp"
#include "bbx/tensor.hpp"

namespace bbx {

struct InvalidClass : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Activation { Relu, Identity };

enum class LossKind { CrossEntropy, LogitMargin, TargetLogit };

struct Layer {
  // weight is [out x in] row-major.
  std::vector<double> weight;
  std::vector<double> bias;
  std::size_t in = 0, out = 0;
  Activation act = Activation::Identity;
};

// Records forward intermediates for exact reverse-mode gradients.
struct GradientTape {
  std::vector<std::vector<double>> pre_act;   // per layer, before activation
  std::vector<std::vector<double>> post_act;  // per layer, after activation
  std::vector<double> input;
};

struct ParamGrads {
  std::vector<std::vector<double>> weight;
  std::vector<std::vector<double>> bias;
};

inline std::vector<double> softmax(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double sum = 0;
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

inline std::size_t argmax(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;  // lowest index wins ties
  return best;
}

class MlpModel {
 public:
  MlpModel() = default;
  MlpModel(std::vector<std::size_t> input_shape, std::vector<Layer> layers)
      : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
    validate();
  }

  // Kaiming-uniform fan-in initialization; hidden layers are ReLU, the last
  // layer is identity and its width is the class count.
  static MlpModel random(std::vector<std::size_t> input_shape, std::vector<std::size_t> hidden,
                         std::size_t classes, Rng& rng) {
    std::vector<std::size_t> widths;
    widths.push_back(Tensor::count(input_shape));
    for (auto h : hidden) widths.push_back(h);
    widths.push_back(classes);
    std::vector<Layer> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      Layer layer;
      layer.in = widths[l];
      layer.out = widths[l + 1];
      layer.act = (l + 2 == widths.size()) ? Activation::Identity : Activation::Relu;
      double bound = std::sqrt(6.0 / static_cast<double>(layer.in));
      layer.weight.resize(layer.in * layer.out);
      layer.bias.assign(layer.out, 0.0);
      for (auto& w : layer.weight) w = rng.uniform(-bound, bound);
      layers.push_back(std::move(layer));
    }
    return MlpModel(std::move(input_shape), std::move(layers));
  }

  const std::vector<std::size_t>& input_shape() const { return input_shape_; }
  std::size_t input_dim() const { return Tensor::count(input_shape_); }
  std::size_t num_classes() const { return layers_.back().out; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  std::vector<double> forward_single(const std::vector<double>& x, GradientTape* tape = nullptr) const {
    if (x.size() != input_dim()) throw ShapeMismatch("input size does not match model");
    if (tape) {
      tape->input = x;
      tape->pre_act.clear();
      tape->post_act.clear();
    }
    std::vector<double> cur = x;
    for (const auto& layer : layers_) {
      std::vector<double> z(layer.out);
      for (std::size_t o = 0; o < layer.out; ++o) {
        double s = layer.bias[o];
        const double* w = layer.weight.data() + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) s += w[i] * cur[i];
        z[o] = s;
      }
      if (tape) tape->pre_act.push_back(z);
      if (layer.act == Activation::Relu)
        for (auto& v : z) v = std::max(v, 0.0);
      if (tape) tape->post_act.push_back(z);
      cur = std::move(z);
    }
    return cur;
  }

  // Logits of shape [B, K]. Accepts a single example or a batch whose
  // trailing dims match input_shape.
  Tensor forward(const Tensor& x) const {
    std::size_t d = input_dim();
    if (x.size() % d != 0) throw ShapeMismatch("batch size not divisible by input dim");
    std::size_t batch = x.size() / d;
    if (x.size() == d) batch = 1;
    std::vector<double> out(batch * num_classes());
    for (std::size_t b = 0; b < batch; ++b) {
      std::vector<double> xi(x.data() + b * d, x.data() + (b + 1) * d);
      auto z = forward_single(xi);
      std::copy(z.begin(), z.end(), out.begin() + b * num_classes());
    }
    return Tensor({batch, num_classes()}, std::move(out));
  }

  std::size_t predict(const Tensor& x) const {
    auto z = forward(x);
    std::vector<double> logits(z.data(), z.data() + num_classes());
    return argmax(logits);
  }

  // Backpropagates dL/dlogits through the tape. Fills input gradient and,
  // when param_grads is non-null, parameter gradients.
  std::vector<double> backward(const GradientTape& tape, std::vector<double> dlogits,
                               ParamGrads* param_grads = nullptr) const {
    if (param_grads) {
      param_grads->weight.resize(layers_.size());
      param_grads->bias.resize(layers_.size());
    }
    std::vector<double> grad = std::move(dlogits);
    for (std::size_t li = layers_.size(); li-- > 0;) {
      const auto& layer = layers_[li];
      if (layer.act == Activation::Relu)
        for (std::size_t o = 0; o < layer.out; ++o)
          if (tape.pre_act[li][o] <= 0) grad[o] = 0;
      const std::vector<double>& in = li == 0 ? tape.input : tape.post_act[li - 1];
      if (param_grads) {
        auto& gw = param_grads->weight[li];
        gw.resize(layer.in * layer.out);
        for (std::size_t o = 0; o < layer.out; ++o)
          for (std::size_t i = 0; i < layer.in; ++i) gw[o * layer.in + i] = grad[o] * in[i];
        param_grads->bias[li] = grad;
      }
      std::vector<double> gin(layer.in, 0.0);
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double* w = layer.weight.data() + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) gin[i] += grad[o] * w[i];
      }
      grad = std::move(gin);
    }
    return grad;
  }

 private:
  void validate() const {
    if (layers_.empty()) throw std::invalid_argument("model needs at least one layer");
    std::size_t prev = input_dim();
    for (const auto& l : layers_) {
      if (l.in != prev || l.weight.size() != l.in * l.out || l.bias.size() != l.out)
        throw ShapeMismatch("layer dimensions do not chain");
      prev = l.out;
    }
  }

  std::vector<std::size_t> input_shape_;
  std::vector<Layer> layers_;
};

// dL/dlogits for the supported losses. y_or_t is the true label for
// CrossEntropy / untargeted LogitMargin, the target class for TargetLogit
// and targeted margins.
inline std::vector<double> loss_grad_logits(const std::vector<double>& logits, LossKind loss,
                                            std::size_t cls, bool targeted = false) {
  std::size_t k = logits.size();
  if (cls >= k) throw InvalidClass("class index out of range");
  std::vector<double> g(k, 0.0);
  switch (loss) {
    case LossKind::CrossEntropy: {
      auto p = softmax(logits);
      for (std::size_t i = 0; i < k; ++i) g[i] = p[i];
      g[cls] -= 1.0;
      break;
    }
    case LossKind::LogitMargin: {
      // untargeted: d(z_y - max_{j!=y} z_j); targeted: d(max_{j!=t} z_j - z_t)
      std::size_t other = k;
      double best = -1e300;
      for (std::size_t i = 0; i < k; ++i)
        if (i != cls && logits[i] > best) {
          best = logits[i];
          other = i;
        }
      if (!targeted) {
        g[cls] = 1.0;
        g[other] = -1.0;
      } else {
        g[other] = 1.0;
        g[cls] = -1.0;
      }
      break;
    }
    case LossKind::TargetLogit:
      // loss = -z_t (minimizing drives z_t up)
      g[cls] = -1.0;
      break;
  }
  return g;
}

inline double loss_value(const std::vector<double>& logits, LossKind loss, std::size_t cls,
                         bool targeted = false) {
  if (cls >= logits.size()) throw InvalidClass("class index out of range");
  switch (loss) {
    case LossKind::CrossEntropy: {
      auto p = softmax(logits);
      return -std::log(std::max(p[cls], 1e-300));
    }
    case LossKind::LogitMargin: {
      double best = -1e300;
      for (std::size_t i = 0; i < logits.size(); ++i)
        if (i != cls) best = std::max(best, logits[i]);
      return targeted ? best - logits[cls] : logits[cls] - best;
    }
    case LossKind::TargetLogit:
      return -logits[cls];
  }
  return 0;
}

// Exact reverse-mode gradient of the loss w.r.t. a single input example.
inline Tensor grad_input(const MlpModel& model, const Tensor& x, LossKind loss, std::size_t cls,
                         bool targeted = false) {
  GradientTape tape;
  std::vector<double> xi(x.data(), x.data() + x.size());
  auto logits = model.forward_single(xi, &tape);
  auto g = model.backward(tape, loss_grad_logits(logits, loss, cls, targeted));
  return Tensor(x.shape(), std::move(g));
}

// ".bbw" weights file (JSON).
inline void save_bbw(const MlpModel& model, const std::string& path) {
  nlohmann::json j;
  j["input_shape"] = model.input_shape();
  j["classes"] = model.num_classes();
  j["layers"] = nlohmann::json::array();
  for (const auto& l : model.layers()) {
    nlohmann::json layer;
    auto rows = nlohmann::json::array();
    for (std::size_t o = 0; o < l.out; ++o) {
      auto row = nlohmann::json::array();
      for (std::size_t i = 0; i < l.in; ++i) row.push_back(l.weight[o * l.in + i]);
      rows.push_back(std::move(row));
    }
    layer["w"] = std::move(rows);
    layer["b"] = l.bias;
    layer["act"] = l.act == Activation::Relu ? "relu" : "identity";
    j["layers"].push_back(std::move(layer));
  }
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  f << j.dump(2) << "\n";
}

inline MlpModel load_bbw(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  nlohmann::json j;
  f >> j;
  std::vector<std::size_t> input_shape = j.at("input_shape").get<std::vector<std::size_t>>();
  std::vector<Layer> layers;
  for (const auto& jl : j.at("layers")) {
    Layer l;
    const auto& rows = jl.at("w");
    l.out = rows.size();
    l.in = rows.empty() ? 0 : rows[0].size();
    l.weight.reserve(l.in * l.out);
    for (const auto& row : rows)
      for (const auto& v : row) l.weight.push_back(v.get<double>());
    l.bias = jl.at("b").get<std::vector<double>>();
    std::string act = jl.at("act").get<std::string>();
    l.act = act == "relu" ? Activation::Relu : Activation::Identity;
    layers.push_back(std::move(l));
  }
  return MlpModel(std::move(input_shape), std::move(layers));
}

}  // namespace bbx
