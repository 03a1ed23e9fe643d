#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <vector>

#include "bbx/model.hpp"
#include "bbx/tensor.hpp"

namespace bbx {

struct OracleMeta {
  std::size_t classes = 0;
  std::vector<std::size_t> input_shape;
};

// Queryable classifier. Every query_* call counts one query per example in
// the batch; peek_* calls answer without counting and exist for success
// re-checks and tests.
class ModelOracle {
 public:
  virtual ~ModelOracle() = default;

  virtual OracleMeta meta() const = 0;

  // [B, K] logits.
  virtual Tensor query_logits(const Tensor& batch) = 0;
  virtual std::vector<std::size_t> query_label(const Tensor& batch) = 0;

  virtual Tensor peek_logits(const Tensor& batch) = 0;
  virtual std::vector<std::size_t> peek_label(const Tensor& batch) = 0;

  virtual std::uint64_t queries_used() const = 0;
};

class LocalOracle : public ModelOracle {
 public:
  explicit LocalOracle(MlpModel model) : model_(std::move(model)) {}

  const MlpModel& model() const { return model_; }

  OracleMeta meta() const override { return {model_.num_classes(), model_.input_shape()}; }

  Tensor query_logits(const Tensor& batch) override {
    count(batch);
    return model_.forward(batch);
  }

  std::vector<std::size_t> query_label(const Tensor& batch) override {
    count(batch);
    return peek_label(batch);
  }

  Tensor peek_logits(const Tensor& batch) override { return model_.forward(batch); }

  std::vector<std::size_t> peek_label(const Tensor& batch) override {
    Tensor z = model_.forward(batch);
    std::size_t k = model_.num_classes();
    std::size_t b = z.size() / k;
    std::vector<std::size_t> labels(b);
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<double> logits(z.data() + i * k, z.data() + (i + 1) * k);
      labels[i] = argmax(logits);
    }
    return labels;
  }

  std::uint64_t queries_used() const override { return queries_.load(); }

 private:
  void count(const Tensor& batch) {
    std::size_t d = Tensor::count(model_.input_shape());
    queries_ += batch.size() / d;
  }

  MlpModel model_;
  std::atomic<std::uint64_t> queries_{0};
};

}  // namespace bbx
