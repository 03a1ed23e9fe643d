#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bbx/attack.hpp"
#include "bbx/model.hpp"
#include "bbx/oracle.hpp"
#include "bbx/spectral.hpp"

namespace bbx {

struct NotDifferentiable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegeneratePlane : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class SaliencyKind { FullGrad, InputGrad, FsmMagnitude };

struct SaliencyMap {
  Tensor values;
  SaliencyKind kind;
};

struct SurfaceGrid {
  std::vector<double> is, js;  // axis sample coordinates
  Tensor values;               // [grid_i, grid_j]
  Tensor alpha, beta;          // unit direction vectors
};

namespace detail {

// fftshift on the trailing two axes: low frequencies move to the center.
inline Tensor center_shift(const Tensor& x) {
  auto& s = x.shape();
  std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  std::size_t planes = x.size() / (h * w);
  Tensor out(x.shape(), 0.0);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c)
        out[p * h * w + ((r + h / 2) % h) * w + ((c + w / 2) % w)] = x[p * h * w + r * w + c];
  return out;
}

// psi post-processing: absolute value then min-max rescale to [0,1].
inline Tensor psi(const Tensor& x) {
  Tensor out(x.shape(), 0.0);
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::abs(x[i]);
    lo = std::min(lo, out[i]);
    hi = std::max(hi, out[i]);
  }
  if (hi > lo)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - lo) / (hi - lo);
  else
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.0;
  return out;
}

}  // namespace detail

// Frequency saliency map: channel-summed magnitude of the DFT of the loss
// gradient, center-shifted.
inline SaliencyMap fsm(const MlpModel& model, const Tensor& x, LossKind loss, std::size_t y) {
  if (x.rank() < 2) throw ShapeMismatch("fsm needs an image-shaped input");
  Tensor g = grad_input(model, x, loss, y);
  ComplexTensor spec = dft2(g);
  auto& s = x.shape();
  std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  std::size_t planes = x.size() / (h * w);
  Tensor mag({h, w}, 0.0);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < h * w; ++i) mag[i] += spec.magnitude(p * h * w + i);
  return {detail::center_shift(mag), SaliencyKind::FsmMagnitude};
}

// FullGrad decomposition of the predicted-class logit: psi(input-grad * x)
// plus per-unit bias attributions spread uniformly over the input map.
// raw_sum (when requested) is the un-psi'd completeness total:
// sum(grad*x) + sum(bias attributions) == f(x) for linear models.
inline SaliencyMap fullgrad(const MlpModel& model, const Tensor& x, double* raw_sum = nullptr) {
  GradientTape tape;
  std::vector<double> xi(x.data(), x.data() + x.size());
  auto logits = model.forward_single(xi, &tape);
  std::size_t top = argmax(logits);

  std::vector<double> dlogits(logits.size(), 0.0);
  dlogits[top] = 1.0;
  ParamGrads grads;
  auto gin = model.backward(tape, dlogits, &grads);

  Tensor grad_x(x.shape(), std::move(gin));
  Tensor input_term = hadamard(grad_x, x);

  double bias_total = 0;
  Tensor bias_map(x.shape(), 0.0);
  for (std::size_t l = 0; l < grads.bias.size(); ++l)
    for (std::size_t u = 0; u < grads.bias[l].size(); ++u) {
      double contrib = grads.bias[l][u] * model.layers()[l].bias[u];
      bias_total += contrib;
      // toy-model adaptation of the convolutional construction: each unit's
      // bias contribution attributed uniformly over input positions
      for (std::size_t i = 0; i < bias_map.size(); ++i)
        bias_map[i] += contrib / static_cast<double>(bias_map.size());
    }

  if (raw_sum) {
    double s = bias_total;
    for (std::size_t i = 0; i < input_term.size(); ++i) s += input_term[i];
    *raw_sum = s;
  }

  Tensor combined = detail::psi(input_term) + detail::psi(bias_map);
  return {detail::psi(combined), SaliencyKind::FullGrad};
}

// Decision-surface slice V(i,j) = S(x + i*alpha + j*beta) with
// S = z_y - max_{j!=y} z_j; beta is a random unit direction orthogonalized
// against alpha.
inline SurfaceGrid decision_surface(const MlpModel& model, const Tensor& x, std::size_t y,
                                    const Tensor& alpha_dir, Rng& rng, std::size_t grid,
                                    double extent) {
  if (grid < 2) throw ConfigInvalid("surface grid must be >= 2x2");
  double an = norm(alpha_dir, NormKind::L2);
  if (an == 0) throw std::invalid_argument("alpha direction must be nonzero");
  Tensor alpha = alpha_dir * (1.0 / an);

  Tensor beta = gaussian_tensor(rng, x.shape());
  beta = beta - dot(beta, alpha) * alpha;
  double bn = norm(beta, NormKind::L2);
  while (bn < 1e-9) {
    beta = gaussian_tensor(rng, x.shape());
    beta = beta - dot(beta, alpha) * alpha;
    bn = norm(beta, NormKind::L2);
  }
  beta = beta * (1.0 / bn);

  SurfaceGrid out;
  out.alpha = alpha;
  out.beta = beta;
  for (std::size_t k = 0; k < grid; ++k)
    out.is.push_back(-extent + 2.0 * extent * static_cast<double>(k) /
                                    static_cast<double>(grid - 1));
  out.js = out.is;
  out.values = Tensor({grid, grid}, 0.0);
  for (std::size_t i = 0; i < grid; ++i)
    for (std::size_t j = 0; j < grid; ++j) {
      Tensor p = x + out.is[i] * alpha + out.js[j] * beta;
      Tensor z = model.forward(p);
      std::vector<double> logits(z.data(), z.data() + z.size());
      double best_other = -1e300;
      for (std::size_t c = 0; c < logits.size(); ++c)
        if (c != y) best_other = std::max(best_other, logits[c]);
      out.values[i * grid + j] = logits[y] - best_other;
    }
  return out;
}

struct DbvizPlane {
  Tensor labels;  // [r, r] class indices as doubles
  // plane coordinates of the three anchors in the (beta, phi) system
  double a1_b = 0, a1_p = 0, a2_b = 1, a2_p = 0, a3_b = 0, a3_p = 1;
  Tensor e1, e2;  // plane basis (e1 = x2-x1, e2 = Gram-Schmidt residual)
};

// dbViz: label grid over the plane spanned by three anchor inputs,
// coordinates beta*v1 + phi*(v2 - proj_v1 v2) with beta, phi in [0,1].
inline DbvizPlane dbviz_plane(ModelOracle& oracle, const Tensor& x1, const Tensor& x2,
                              const Tensor& x3, std::size_t resolution) {
  if (!x1.same_shape(x2) || !x1.same_shape(x3)) throw ShapeMismatch("anchors differ in shape");
  if (resolution < 2) throw ConfigInvalid("resolution must be >= 2");
  Tensor v1 = x2 - x1;
  Tensor v2 = x3 - x1;
  double n1sq = dot(v1, v1);
  if (n1sq < 1e-18) throw DegeneratePlane("first two anchors coincide");
  double c = dot(v2, v1) / n1sq;
  Tensor e2 = v2 - c * v1;
  if (norm(e2, NormKind::L2) <= 1e-9) throw DegeneratePlane("anchors are collinear");

  DbvizPlane out;
  out.e1 = v1;
  out.e2 = e2;
  out.a3_b = c;
  out.labels = Tensor({resolution, resolution}, 0.0);
  for (std::size_t i = 0; i < resolution; ++i)
    for (std::size_t j = 0; j < resolution; ++j) {
      double b = static_cast<double>(i) / static_cast<double>(resolution - 1);
      double p = static_cast<double>(j) / static_cast<double>(resolution - 1);
      Tensor pt = x1 + b * v1 + p * e2;
      out.labels[i * resolution + j] = static_cast<double>(oracle.query_label(pt)[0]);
    }
  return out;
}

// ---------- exports ----------

inline void export_grid_csv(const Tensor& grid, const std::string& path) {
  if (grid.rank() != 2) throw ShapeMismatch("csv export needs a 2-D grid");
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  f << "i,j,value\n";
  std::size_t h = grid.shape()[0], w = grid.shape()[1];
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) f << i << "," << j << "," << grid[i * w + j] << "\n";
}

inline void export_with_sidecar(const Tensor& values, const nlohmann::json& sidecar,
                                const std::string& base_path) {
  save_bbt(values, base_path + ".bbt");
  std::ofstream f(base_path + ".json");
  if (!f) throw IoError("cannot open for write: " + base_path + ".json");
  f << sidecar.dump(2) << "\n";
}

}  // namespace bbx
