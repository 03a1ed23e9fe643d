#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bbx/rng.hpp"
#include "bbx/tensor.hpp"

namespace bbx {

struct EmptyDataset : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Tensor inputs;  // [N, d...]
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }

  std::vector<std::size_t> example_shape() const {
    return std::vector<std::size_t>(inputs.shape().begin() + 1, inputs.shape().end());
  }

  std::size_t example_dim() const { return Tensor::count(example_shape()); }

  Tensor example(std::size_t i) const {
    std::size_t d = example_dim();
    return Tensor(example_shape(),
                  std::vector<double>(inputs.data() + i * d, inputs.data() + (i + 1) * d));
  }
};

// Two gaussian blobs in [0,1]^2 around (0.3,0.3) and (0.7,0.7), clamped to
// the box. Separation is 4 sigma along each axis at the default sigma=0.1.
// example_shape [1,2] keeps inputs image-shaped so every attack applies.
inline Dataset make_blobs(std::size_t n, Rng& rng, double sigma = 0.1) {
  if (n == 0) throw EmptyDataset("blob dataset needs n > 0");
  std::vector<double> data;
  data.reserve(n * 2);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t cls = i % 2;
    double cx = cls == 0 ? 0.3 : 0.7;
    for (int k = 0; k < 2; ++k)
      data.push_back(std::clamp(cx + sigma * rng.gaussian(), 0.0, 1.0));
    labels[i] = cls;
  }
  return {Tensor({n, 1, 2}, std::move(data)), std::move(labels)};
}

// Dataset directory: inputs.bbt [N, d...] and labels.bbt [N].
inline void save_dataset(const Dataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_bbt(ds.inputs, dir + "/inputs.bbt");
  std::vector<double> lab(ds.labels.begin(), ds.labels.end());
  save_bbt(Tensor({ds.labels.size()}, std::move(lab)), dir + "/labels.bbt");
}

inline Dataset load_dataset(const std::string& dir) {
  Tensor inputs = load_bbt(dir + "/inputs.bbt");
  Tensor lab = load_bbt(dir + "/labels.bbt");
  if (inputs.shape().empty() || inputs.shape()[0] != lab.size())
    throw IoError("inputs/labels count mismatch in " + dir);
  std::vector<std::size_t> labels(lab.size());
  for (std::size_t i = 0; i < lab.size(); ++i) labels[i] = static_cast<std::size_t>(lab[i]);
  return {std::move(inputs), std::move(labels)};
}

}  // namespace bbx
