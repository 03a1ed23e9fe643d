#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace bbx {

struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class NormKind { Linf, L2 };

inline std::string to_string(NormKind n) { return n == NormKind::Linf ? "linf" : "l2"; }

inline NormKind norm_from_string(const std::string& s) {
  if (s == "linf" || s == "Linf" || s == "inf") return NormKind::Linf;
  if (s == "l2" || s == "L2") return NormKind::L2;
  throw std::invalid_argument("unknown norm: " + s);
}

// Dense row-major tensor of 64-bit reals. All elements must be finite.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_invariants();
  }

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(count(shape_), fill) {
    check_invariants();
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  double at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<std::size_t> new_shape) const {
    if (count(new_shape) != size()) throw ShapeMismatch("reshape changes element count");
    return Tensor(std::move(new_shape), data_);
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return shape.empty() ? 0 : n;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    std::size_t off = 0, d = 0;
    for (auto i : idx) off = off * shape_[d++] + i;
    return off;
  }

  void check_invariants() const {
    for (auto e : shape_)
      if (e == 0) throw std::invalid_argument("zero extent in tensor shape");
    if (count(shape_) != data_.size()) throw ShapeMismatch("shape/data length mismatch");
    for (double v : data_)
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite tensor element");
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

namespace detail {
inline void require_same_shape(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("tensor shapes differ");
}
}  // namespace detail

inline Tensor operator+(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return Tensor(a.shape(), std::move(out));
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return Tensor(a.shape(), std::move(out));
}

inline Tensor operator*(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return Tensor(a.shape(), std::move(out));
}

inline Tensor operator*(double s, const Tensor& a) { return a * s; }

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return Tensor(a.shape(), std::move(out));
}

inline double dot(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b);
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Tensor clamp_box(const Tensor& x, double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("clamp_box requires lo < hi");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i], lo, hi);
  return Tensor(x.shape(), std::move(out));
}

inline double norm(const Tensor& x, NormKind kind) {
  if (kind == NormKind::Linf) {
    double m = 0;
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i]));
    return m;
  }
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * x[i];
  return std::sqrt(s);
}

inline double l1_norm(const Tensor& x) {
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i]);
  return s;
}

inline Tensor sign(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0);
  return Tensor(x.shape(), std::move(out));
}

// Projects x_adv onto the closed eps-ball around x. A point exactly at the
// budget is returned unchanged.
inline Tensor project_ball(const Tensor& x_adv, const Tensor& x, double eps, NormKind kind) {
  detail::require_same_shape(x_adv, x);
  if (eps < 0) throw std::invalid_argument("eps must be >= 0");
  Tensor delta = x_adv - x;
  if (kind == NormKind::Linf) {
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = std::clamp(delta[i], -eps, eps);
  } else {
    double n = norm(delta, NormKind::L2);
    if (n > eps) {
      double scale = eps / n;
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= scale;
    }
  }
  return x + delta;
}

// ".bbt" tensor file: magic "BBT1", u8 rank, u32le extents, f32le payload.
inline void save_bbt(const Tensor& t, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  f.write("BBT1", 4);
  auto rank = static_cast<std::uint8_t>(t.rank());
  f.write(reinterpret_cast<const char*>(&rank), 1);
  for (auto e : t.shape()) {
    auto e32 = static_cast<std::uint32_t>(e);
    std::uint8_t b[4] = {static_cast<std::uint8_t>(e32), static_cast<std::uint8_t>(e32 >> 8),
                         static_cast<std::uint8_t>(e32 >> 16), static_cast<std::uint8_t>(e32 >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    float v = static_cast<float>(t[i]);
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    std::uint8_t b[4] = {static_cast<std::uint8_t>(u), static_cast<std::uint8_t>(u >> 8),
                         static_cast<std::uint8_t>(u >> 16), static_cast<std::uint8_t>(u >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!f) throw IoError("write failed: " + path);
}

inline Tensor load_bbt(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != "BBT1") throw IoError("bad magic in " + path);
  std::uint8_t rank = 0;
  f.read(reinterpret_cast<char*>(&rank), 1);
  std::vector<std::size_t> shape(rank);
  for (auto& e : shape) {
    std::uint8_t b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    e = static_cast<std::size_t>(b[0]) | (static_cast<std::size_t>(b[1]) << 8) |
        (static_cast<std::size_t>(b[2]) << 16) | (static_cast<std::size_t>(b[3]) << 24);
  }
  std::size_t n = Tensor::count(shape);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint8_t b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw IoError("truncated payload in " + path);
    std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    float v;
    std::memcpy(&v, &u, 4);
    data[i] = static_cast<double>(v);
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace bbx
