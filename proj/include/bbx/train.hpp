#pragma once

#include <numeric>
#include <optional>
#include <vector>

#include "bbx/dataset.hpp"
#include "bbx/model.hpp"
#include "bbx/rng.hpp"

namespace bbx {

struct PgdAtConfig {
  double eps = 0.3;
  double step = 0.075;
  std::size_t steps = 10;
};

struct TrainConfig {
  std::vector<std::size_t> hidden = {16};
  std::size_t epochs = 50;
  double lr = 0.1;
  std::size_t batch = 16;
  std::optional<PgdAtConfig> adv;  // set for adversarial training
};

// White-box PGD in Linf, ascending the cross-entropy loss. Used both by the
// adversarial trainer and for robust-accuracy measurement.
inline Tensor pgd_perturb(const MlpModel& model, const Tensor& x, std::size_t y,
                          const PgdAtConfig& cfg, Rng& rng) {
  Tensor adv = x;
  for (std::size_t i = 0; i < adv.size(); ++i)
    adv[i] = std::clamp(adv[i] + rng.uniform(-cfg.eps, cfg.eps), 0.0, 1.0);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    Tensor g = grad_input(model, adv, LossKind::CrossEntropy, y);
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += cfg.step * (g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0));
    adv = clamp_box(project_ball(adv, x, cfg.eps, NormKind::Linf), 0.0, 1.0);
  }
  return adv;
}

inline double accuracy(const MlpModel& model, const Dataset& ds) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (model.predict(ds.example(i)) == ds.labels[i]) ++ok;
  return static_cast<double>(ok) / static_cast<double>(ds.size());
}

inline double robust_accuracy(const MlpModel& model, const Dataset& ds, const PgdAtConfig& cfg,
                              Rng& rng) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Tensor adv = pgd_perturb(model, ds.example(i), ds.labels[i], cfg, rng);
    if (model.predict(adv) == ds.labels[i]) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(ds.size());
}

// Minibatch SGD on cross-entropy. With cfg.adv set, each minibatch is
// replaced by its PGD-perturbed counterpart before the gradient step.
inline MlpModel train(const Dataset& ds, const TrainConfig& cfg, Rng& rng) {
  if (ds.size() == 0) throw EmptyDataset("train on empty dataset");
  std::size_t classes = 0;
  for (auto y : ds.labels) classes = std::max(classes, y + 1);
  classes = std::max<std::size_t>(classes, 2);
  MlpModel model = MlpModel::random(ds.example_shape(), cfg.hidden, classes, rng);

  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      std::size_t end = std::min(order.size(), start + cfg.batch);
      ParamGrads acc;
      bool first = true;
      for (std::size_t k = start; k < end; ++k) {
        Tensor x = ds.example(order[k]);
        std::size_t y = ds.labels[order[k]];
        if (cfg.adv) x = pgd_perturb(model, x, y, *cfg.adv, rng);
        GradientTape tape;
        std::vector<double> xi(x.data(), x.data() + x.size());
        auto logits = model.forward_single(xi, &tape);
        ParamGrads g;
        model.backward(tape, loss_grad_logits(logits, LossKind::CrossEntropy, y), &g);
        if (first) {
          acc = std::move(g);
          first = false;
        } else {
          for (std::size_t l = 0; l < acc.weight.size(); ++l) {
            for (std::size_t i = 0; i < acc.weight[l].size(); ++i) acc.weight[l][i] += g.weight[l][i];
            for (std::size_t i = 0; i < acc.bias[l].size(); ++i) acc.bias[l][i] += g.bias[l][i];
          }
        }
      }
      double scale = cfg.lr / static_cast<double>(end - start);
      auto& layers = model.layers();
      for (std::size_t l = 0; l < layers.size(); ++l) {
        for (std::size_t i = 0; i < layers[l].weight.size(); ++i)
          layers[l].weight[i] -= scale * acc.weight[l][i];
        for (std::size_t i = 0; i < layers[l].bias.size(); ++i)
          layers[l].bias[i] -= scale * acc.bias[l][i];
      }
    }
  }
  return model;
}

}  // namespace bbx
