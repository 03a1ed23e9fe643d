#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bbx/attack.hpp"
#include "bbx/dataset.hpp"
#include "bbx/model.hpp"

namespace bbx {

struct UnknownPreset : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyGallery : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TransformedCopy {
  Tensor x;
  double weight;
};

using TransformFn = std::function<std::vector<TransformedCopy>(const Tensor&, Rng&)>;
// Ascent gradient of the attack loss at a point (surrogate is baked in).
using GradFn = std::function<Tensor(const Tensor&, Rng&)>;
// Stateful update-direction block (momentum buffers live in the closure).
using DirectionFn = std::function<Tensor(const Tensor&)>;
// Offset added to the iterate before gradient evaluation (NI/PI lookahead).
using LookaheadFn = std::function<Tensor(const Tensor&, double)>;

inline TransformFn transform_identity() {
  return [](const Tensor& x, Rng&) { return std::vector<TransformedCopy>{{x, 1.0}}; };
}

// DI: with probability prob, nearest-neighbor resize to a random smaller
// spatial size, then zero-pad back at a random offset.
inline TransformFn transform_di(double prob = 0.5, double resize_low_frac = 0.8) {
  return [prob, resize_low_frac](const Tensor& x, Rng& rng) {
    if (x.rank() < 2) throw NotImageShaped("di transform needs an image-shaped input");
    if (rng.uniform() >= prob) return std::vector<TransformedCopy>{{x, 1.0}};
    auto& s = x.shape();
    std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
    std::size_t planes = x.size() / (h * w);
    auto lo_h = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(resize_low_frac * h)));
    auto lo_w = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(resize_low_frac * w)));
    std::size_t nh = lo_h + rng.below(h - lo_h + 1);
    std::size_t nw = lo_w + rng.below(w - lo_w + 1);
    std::size_t oh = rng.below(h - nh + 1), ow = rng.below(w - nw + 1);
    Tensor out(x.shape(), 0.0);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t r = 0; r < nh; ++r)
        for (std::size_t c = 0; c < nw; ++c)
          out[p * h * w + (oh + r) * w + (ow + c)] = x[p * h * w + (r * h / nh) * w + (c * w / nw)];
    return std::vector<TransformedCopy>{{std::move(out), 1.0}};
  };
}

// SI: scale-invariant copies x / factor^i, equal weights.
inline std::vector<TransformedCopy> transform_si(const Tensor& x, std::size_t m, double factor) {
  if (m < 1) throw ConfigInvalid("si needs m >= 1");
  std::vector<TransformedCopy> out;
  double scale = 1.0;
  for (std::size_t i = 0; i < m; ++i, scale /= factor)
    out.push_back({x * scale, 1.0 / static_cast<double>(m)});
  return out;
}

inline TransformFn transform_si_fn(std::size_t m = 5, double factor = 2.0) {
  return [m, factor](const Tensor& x, Rng&) { return transform_si(x, m, factor); };
}

// Admix: mix in sampled gallery images (master label stays x's), then SI-scale.
inline TransformFn transform_admix(std::vector<Tensor> gallery, double eta = 0.2,
                                   std::size_t num_mixed = 3, std::size_t si_copies = 1,
                                   double si_factor = 2.0) {
  if (gallery.empty()) throw EmptyGallery("admix needs a nonempty gallery");
  return [gallery = std::move(gallery), eta, num_mixed, si_copies, si_factor](const Tensor& x,
                                                                              Rng& rng) {
    std::vector<TransformedCopy> out;
    double wgt = 1.0 / static_cast<double>(num_mixed * si_copies);
    for (std::size_t k = 0; k < num_mixed; ++k) {
      const Tensor& xp = gallery[rng.below(gallery.size())];
      Tensor mixed = x + eta * xp;
      for (auto& copy : transform_si(mixed, si_copies, si_factor))
        out.push_back({std::move(copy.x), wgt});
    }
    return out;
  };
}

// TI: smooth the gradient with a normalized triangular kernel (same padding).
inline Tensor grad_ti(const Tensor& grad, std::size_t kernel_size) {
  if (kernel_size % 2 == 0 || kernel_size < 1) throw ConfigInvalid("ti kernel must be odd >= 1");
  if (kernel_size == 1) return grad;
  if (grad.rank() < 2) throw NotImageShaped("ti smoothing needs an image-shaped gradient");
  std::size_t k = kernel_size, c = k / 2;
  std::vector<double> kern1(k);
  double sum1 = 0;
  for (std::size_t i = 0; i < k; ++i) {
    kern1[i] = 1.0 - std::abs(static_cast<double>(i) - static_cast<double>(c)) /
                         (static_cast<double>(c) + 1.0);
    sum1 += kern1[i];
  }
  for (auto& v : kern1) v /= sum1;

  auto& s = grad.shape();
  std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  std::size_t planes = grad.size() / (h * w);
  Tensor out(grad.shape(), 0.0);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col) {
        double acc = 0;
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            long rr = static_cast<long>(r) + static_cast<long>(i) - static_cast<long>(c);
            long cc = static_cast<long>(col) + static_cast<long>(j) - static_cast<long>(c);
            if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w))
              continue;
            acc += kern1[i] * kern1[j] *
                   grad[p * h * w + static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc)];
          }
        out[p * h * w + r * w + col] = acc;
      }
  return out;
}

// MI accumulation: g_{t+1} = mu * g_t + grad / ||grad||_1. A zero gradient
// returns the momentum term alone.
inline DirectionFn direction_mi(double mu = 1.0) {
  auto state = std::make_shared<Tensor>();
  return [state, mu](const Tensor& grad) {
    double l1 = l1_norm(grad);
    Tensor term = l1 > 0 ? grad * (1.0 / l1) : Tensor(grad.shape(), 0.0);
    if (state->size() == 0)
      *state = term;
    else
      *state = mu * *state + term;
    return *state;
  };
}

inline DirectionFn direction_identity() {
  return [](const Tensor& grad) { return grad; };
}

// RD refiner: gaussian jitter of every weight and bias.
inline MlpModel refine_rd(const MlpModel& model, double sigma, Rng& rng) {
  if (sigma < 0) throw ConfigInvalid("rd sigma must be >= 0");
  MlpModel out = model;
  if (sigma == 0) return out;
  for (auto& layer : out.layers()) {
    for (auto& v : layer.weight) v += sigma * rng.gaussian();
    for (auto& v : layer.bias) v += sigma * rng.gaussian();
  }
  return out;
}

// Alg.-3 loop: transform -> gradient -> direction -> norm-specific ascent
// step, projected into the eps-ball and the box each iteration.
inline Tensor run_transfer_pipeline(const Tensor& x, const AttackConfig& cfg,
                                    const TransformFn& transform, const GradFn& gradfn,
                                    const DirectionFn& direction, Rng& rng,
                                    const LookaheadFn& lookahead = nullptr,
                                    bool random_start = false) {
  Tensor xt = x;
  if (random_start) {
    if (cfg.norm == NormKind::Linf) {
      for (std::size_t i = 0; i < xt.size(); ++i) xt[i] += rng.uniform(-cfg.eps, cfg.eps);
    } else {
      Tensor u = uniform_sphere(rng, x.shape());
      xt = xt + u * (cfg.eps * rng.uniform());
    }
    xt = clamp_box(project_ball(xt, x, cfg.eps, cfg.norm), 0.0, 1.0);
  }
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    Tensor eval_point = lookahead ? lookahead(xt, cfg.step) : xt;
    Tensor grad(x.shape(), 0.0);
    for (auto& copy : transform(eval_point, rng)) {
      Tensor g = gradfn(copy.x, rng);
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += copy.weight * g[i];
    }
    Tensor dir = direction(grad);
    Tensor step;
    if (cfg.norm == NormKind::Linf) {
      step = sign(dir) * cfg.step;
    } else {
      double n = norm(dir, NormKind::L2);
      step = n > 0 ? dir * (cfg.step / n) : Tensor(dir.shape(), 0.0);
    }
    xt = clamp_box(project_ball(xt + step, x, cfg.eps, cfg.norm), 0.0, 1.0);
  }
  return xt;
}

// A named preset is just a flag record; run_transfer_preset wires it up.
struct TransferPreset {
  std::string name;
  bool random_start = false;
  bool momentum = false;
  bool nesterov = false;   // lookahead along accumulated momentum
  bool pi = false;         // lookahead along the previous raw gradient
  bool variance = false;   // VT gradient tuning
  bool di = false;
  std::size_t ti_kernel = 1;
  std::size_t si_copies = 1;
  bool admix = false;
  double rd_sigma = 0;
  double mu = 1.0;
  std::size_t vt_samples = 5;
};

inline TransferPreset make_preset(const std::string& name) {
  TransferPreset p;
  p.name = name;
  if (name == "ifgsm") return p;
  if (name == "pgd") { p.random_start = true; return p; }
  if (name == "mi") { p.momentum = true; return p; }
  if (name == "ni") { p.momentum = true; p.nesterov = true; return p; }
  if (name == "pi") { p.momentum = true; p.pi = true; return p; }
  if (name == "vt") { p.momentum = true; p.variance = true; return p; }
  if (name == "di") { p.di = true; return p; }
  if (name == "ti") { p.ti_kernel = 5; return p; }
  if (name == "si") { p.si_copies = 5; return p; }
  if (name == "admix") { p.admix = true; p.si_copies = 1; return p; }
  if (name == "rd") { p.rd_sigma = 0.01; return p; }
  if (name == "mi-di") { p.momentum = true; p.di = true; return p; }
  if (name == "mi-di-ti") { p.momentum = true; p.di = true; p.ti_kernel = 5; return p; }
  if (name == "mi-di-ti-si") {
    p.momentum = true; p.di = true; p.ti_kernel = 5; p.si_copies = 5;
    return p;
  }
  if (name == "vmi") { p.momentum = true; p.variance = true; return p; }
  if (name == "vni") { p.momentum = true; p.nesterov = true; p.variance = true; return p; }
  throw UnknownPreset("unknown transfer preset: " + name);
}

inline const std::vector<std::string>& transfer_preset_names() {
  static const std::vector<std::string> names = {
      "ifgsm", "pgd", "mi", "ni", "pi", "vt", "di", "ti", "si", "admix",
      "rd", "mi-di", "mi-di-ti", "mi-di-ti-si", "vmi", "vni"};
  return names;
}

// Crafts x* on the surrogate. Untargeted runs ascend cross-entropy on the
// true label; targeted runs ascend the target logit.
inline Tensor run_transfer_preset(const MlpModel& surrogate, const Tensor& x,
                                  const Criterion& crit, const AttackConfig& cfg,
                                  const TransferPreset& preset, Rng rng,
                                  const std::vector<Tensor>& gallery = {}) {
  auto model = std::make_shared<MlpModel>(
      preset.rd_sigma > 0 ? refine_rd(surrogate, preset.rd_sigma, rng) : surrogate);

  LossKind loss = crit.targeted ? LossKind::TargetLogit : LossKind::CrossEntropy;
  std::size_t cls = crit.anchor_class();
  // Untargeted ascends CE on the true label, so the ascent gradient is the
  // loss gradient itself. Targeted raises z_t, i.e. descends -z_t, so the
  // ascent gradient is the negated TargetLogit gradient.
  bool negate = crit.targeted;
  auto raw_grad = [model, loss, cls, negate](const Tensor& p, Rng&) {
    Tensor g = grad_input(*model, p, loss, cls);
    return negate ? g * -1.0 : g;
  };

  GradFn gradfn;
  if (preset.variance) {
    auto vstate = std::make_shared<Tensor>(x.shape(), 0.0);
    double beta = 1.5 * cfg.eps;
    std::size_t q = preset.vt_samples;
    gradfn = [raw_grad, vstate, beta, q](const Tensor& p, Rng& rng2) {
      Tensor g = raw_grad(p, rng2);
      Tensor tuned = g + *vstate;
      Tensor acc(g.shape(), 0.0);
      for (std::size_t i = 0; i < q; ++i) {
        Tensor r = uniform_tensor(rng2, p.shape(), -beta, beta);
        Tensor gs = raw_grad(p + r, rng2);
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += gs[j];
      }
      for (std::size_t j = 0; j < acc.size(); ++j)
        (*vstate)[j] = acc[j] / static_cast<double>(q) - g[j];
      return tuned;
    };
  } else {
    gradfn = raw_grad;
  }
  if (preset.ti_kernel > 1) {
    GradFn inner = gradfn;
    std::size_t k = preset.ti_kernel;
    gradfn = [inner, k](const Tensor& p, Rng& rng2) { return grad_ti(inner(p, rng2), k); };
  }

  TransformFn transform;
  if (preset.admix) {
    if (gallery.empty()) throw EmptyGallery("admix preset needs a gallery");
    transform = transform_admix(gallery, 0.2, 3, preset.si_copies, 2.0);
  } else if (preset.si_copies > 1 && preset.di) {
    TransformFn di = transform_di();
    std::size_t m = preset.si_copies;
    transform = [di, m](const Tensor& p, Rng& rng2) {
      std::vector<TransformedCopy> out;
      for (auto& copy : transform_si(p, m, 2.0))
        for (auto& dicopy : di(copy.x, rng2)) out.push_back({std::move(dicopy.x), copy.weight});
      return out;
    };
  } else if (preset.si_copies > 1) {
    transform = transform_si_fn(preset.si_copies, 2.0);
  } else if (preset.di) {
    transform = transform_di();
  } else {
    transform = transform_identity();
  }

  DirectionFn direction = preset.momentum ? direction_mi(preset.mu) : direction_identity();

  LookaheadFn lookahead = nullptr;
  if (preset.nesterov || preset.pi) {
    auto buf = std::make_shared<Tensor>();  // momentum (NI) or prev grad (PI)
    bool use_pi = preset.pi;
    double mu = preset.mu;
    // wrap direction/gradfn to keep the lookahead buffer in sync
    if (use_pi) {
      GradFn inner = gradfn;
      gradfn = [inner, buf](const Tensor& p, Rng& rng2) {
        Tensor g = inner(p, rng2);
        *buf = g;
        return g;
      };
    } else {
      DirectionFn inner_dir = direction;
      direction = [inner_dir, buf](const Tensor& g) {
        Tensor d = inner_dir(g);
        *buf = d;
        return d;
      };
    }
    lookahead = [buf, mu, use_pi](const Tensor& xt, double alpha) {
      if (buf->size() == 0) return xt;
      if (!use_pi) return xt + alpha * mu * *buf;  // NI: momentum is pre-normalized
      double l1 = l1_norm(*buf);
      return l1 > 0 ? xt + (alpha * mu / l1) * *buf : xt;
    };
  }

  return run_transfer_pipeline(x, cfg, transform, gradfn, direction, rng, lookahead,
                               preset.random_start);
}

}  // namespace bbx
