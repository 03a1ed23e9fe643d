#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "bbx/tensor.hpp"

namespace bbx {

inline constexpr double kPi = 3.14159265358979323846;

// Complex-valued tensor stored as separate real/imaginary parts.
struct ComplexTensor {
  Tensor re;
  Tensor im;

  double magnitude(std::size_t i) const { return std::hypot(re[i], im[i]); }
};

namespace detail {

inline void require_plane(const Tensor& x) {
  if (x.rank() < 2) throw ShapeMismatch("2-D transform needs rank >= 2");
}

struct PlaneDims {
  std::size_t planes, h, w;
};

inline PlaneDims plane_dims(const Tensor& x) {
  require_plane(x);
  auto& s = x.shape();
  std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  return {x.size() / (h * w), h, w};
}

// Direct-summation 1-D DFT along contiguous rows of length n, stride 1,
// applied to `count` rows. sign = -1 forward, +1 inverse (unscaled).
inline void dft_axis(std::vector<double>& re, std::vector<double>& im, std::size_t h,
                     std::size_t w, bool along_rows, int sgn) {
  std::size_t n = along_rows ? w : h;
  std::vector<double> tr(n), ti(n);
  std::size_t outer = along_rows ? h : w;
  for (std::size_t o = 0; o < outer; ++o) {
    auto idx = [&](std::size_t k) { return along_rows ? o * w + k : k * w + o; };
    for (std::size_t f = 0; f < n; ++f) {
      double sr = 0, si = 0;
      for (std::size_t k = 0; k < n; ++k) {
        double ang = sgn * 2.0 * kPi * static_cast<double>(f * k % n) / static_cast<double>(n);
        double c = std::cos(ang), s = std::sin(ang);
        sr += re[idx(k)] * c - im[idx(k)] * s;
        si += re[idx(k)] * s + im[idx(k)] * c;
      }
      tr[f] = sr;
      ti[f] = si;
    }
    for (std::size_t f = 0; f < n; ++f) {
      re[idx(f)] = tr[f];
      im[idx(f)] = ti[f];
    }
  }
}

}  // namespace detail

// Unnormalized forward 2-D DFT over the trailing two axes of each channel.
inline ComplexTensor dft2(const Tensor& x) {
  auto d = detail::plane_dims(x);
  Tensor re = x;
  Tensor im(x.shape(), 0.0);
  for (std::size_t p = 0; p < d.planes; ++p) {
    std::vector<double> pr(re.data() + p * d.h * d.w, re.data() + (p + 1) * d.h * d.w);
    std::vector<double> pi(im.data() + p * d.h * d.w, im.data() + (p + 1) * d.h * d.w);
    detail::dft_axis(pr, pi, d.h, d.w, true, -1);
    detail::dft_axis(pr, pi, d.h, d.w, false, -1);
    std::copy(pr.begin(), pr.end(), re.data() + p * d.h * d.w);
    std::copy(pi.begin(), pi.end(), im.data() + p * d.h * d.w);
  }
  return {std::move(re), std::move(im)};
}

inline ComplexTensor idft2(const ComplexTensor& x) {
  auto d = detail::plane_dims(x.re);
  Tensor re = x.re;
  Tensor im = x.im;
  double scale = 1.0 / static_cast<double>(d.h * d.w);
  for (std::size_t p = 0; p < d.planes; ++p) {
    std::vector<double> pr(re.data() + p * d.h * d.w, re.data() + (p + 1) * d.h * d.w);
    std::vector<double> pi(im.data() + p * d.h * d.w, im.data() + (p + 1) * d.h * d.w);
    detail::dft_axis(pr, pi, d.h, d.w, true, +1);
    detail::dft_axis(pr, pi, d.h, d.w, false, +1);
    for (std::size_t i = 0; i < pr.size(); ++i) {
      re[p * d.h * d.w + i] = pr[i] * scale;
      im[p * d.h * d.w + i] = pi[i] * scale;
    }
  }
  return {std::move(re), std::move(im)};
}

namespace detail {

// Orthonormal DCT-II (dir > 0) / DCT-III inverse (dir < 0) along one axis.
inline void dct_axis(std::vector<double>& v, std::size_t h, std::size_t w, bool along_rows,
                     int dir) {
  std::size_t n = along_rows ? w : h;
  std::vector<double> tmp(n);
  std::size_t outer = along_rows ? h : w;
  double s0 = std::sqrt(1.0 / static_cast<double>(n));
  double sk = std::sqrt(2.0 / static_cast<double>(n));
  for (std::size_t o = 0; o < outer; ++o) {
    auto idx = [&](std::size_t k) { return along_rows ? o * w + k : k * w + o; };
    for (std::size_t f = 0; f < n; ++f) {
      double sum = 0;
      if (dir > 0) {
        for (std::size_t k = 0; k < n; ++k)
          sum += v[idx(k)] * std::cos(kPi * (static_cast<double>(k) + 0.5) *
                                      static_cast<double>(f) / static_cast<double>(n));
        sum *= (f == 0 ? s0 : sk);
      } else {
        for (std::size_t k = 0; k < n; ++k)
          sum += (k == 0 ? s0 : sk) * v[idx(k)] *
                 std::cos(kPi * (static_cast<double>(f) + 0.5) * static_cast<double>(k) /
                          static_cast<double>(n));
      }
      tmp[f] = sum;
    }
    for (std::size_t f = 0; f < n; ++f) v[idx(f)] = tmp[f];
  }
}

inline Tensor dct2_impl(const Tensor& x, int dir) {
  auto d = plane_dims(x);
  Tensor out = x;
  for (std::size_t p = 0; p < d.planes; ++p) {
    std::vector<double> pv(out.data() + p * d.h * d.w, out.data() + (p + 1) * d.h * d.w);
    dct_axis(pv, d.h, d.w, true, dir);
    dct_axis(pv, d.h, d.w, false, dir);
    std::copy(pv.begin(), pv.end(), out.data() + p * d.h * d.w);
  }
  return out;
}

}  // namespace detail

// Orthonormal type-II DCT over the trailing two axes per channel.
inline Tensor dct2(const Tensor& x) { return detail::dct2_impl(x, +1); }
inline Tensor idct2(const Tensor& x) { return detail::dct2_impl(x, -1); }

}  // namespace bbx
