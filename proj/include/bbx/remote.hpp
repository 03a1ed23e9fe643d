#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "bbx/oracle.hpp"

namespace bbx {

struct Unreachable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MetaMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// HTTP client for the wire protocol. Counts one query per example on the
// client side regardless of transport batching; transient failures are
// retried up to `retries` times.
class RemoteOracle : public ModelOracle {
 public:
  explicit RemoteOracle(std::string host, int port, int retries = 3,
                        std::optional<OracleMeta> expected = std::nullopt)
      : host_(std::move(host)), port_(port), retries_(retries) {
    auto j = request_json("GET", "/v1/meta", {});
    meta_.classes = j.at("classes").get<std::size_t>();
    meta_.input_shape = j.at("input_shape").get<std::vector<std::size_t>>();
    if (expected &&
        (expected->classes != meta_.classes || expected->input_shape != meta_.input_shape))
      throw MetaMismatch("remote model shape/classes disagree with configuration");
  }

  OracleMeta meta() const override { return meta_; }

  Tensor query_logits(const Tensor& batch) override {
    queries_ += batch_size(batch);
    return fetch_logits(batch);
  }

  std::vector<std::size_t> query_label(const Tensor& batch) override {
    queries_ += batch_size(batch);
    return fetch_labels(batch);
  }

  Tensor peek_logits(const Tensor& batch) override { return fetch_logits(batch); }

  std::vector<std::size_t> peek_label(const Tensor& batch) override { return fetch_labels(batch); }

  std::uint64_t queries_used() const override { return queries_.load(); }

 private:
  std::size_t batch_size(const Tensor& batch) const {
    return batch.size() / Tensor::count(meta_.input_shape);
  }

  nlohmann::json inputs_body(const Tensor& batch) const {
    std::size_t d = Tensor::count(meta_.input_shape);
    std::size_t b = batch.size() / d;
    if (batch.size() % d != 0) throw ShapeMismatch("batch size not divisible by input dim");
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < b; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t j = 0; j < d; ++j) row.push_back(batch[i * d + j]);
      rows.push_back(std::move(row));
    }
    return nlohmann::json{{"inputs", std::move(rows)}};
  }

  Tensor fetch_logits(const Tensor& batch) {
    auto j = request_json("POST", "/v1/logits", inputs_body(batch));
    const auto& rows = j.at("logits");
    if (!rows.is_array() || rows.empty()) throw ProtocolError("malformed logits response");
    std::size_t b = rows.size();
    std::size_t k = rows[0].size();
    if (k != meta_.classes) throw ProtocolError("logit width disagrees with meta");
    std::vector<double> data;
    data.reserve(b * k);
    for (const auto& row : rows) {
      if (row.size() != k) throw ProtocolError("ragged logits response");
      for (const auto& v : row) data.push_back(v.get<double>());
    }
    return Tensor({b, k}, std::move(data));
  }

  std::vector<std::size_t> fetch_labels(const Tensor& batch) {
    auto j = request_json("POST", "/v1/label", inputs_body(batch));
    if (!j.contains("labels") || !j["labels"].is_array())
      throw ProtocolError("malformed label response");
    return j["labels"].get<std::vector<std::size_t>>();
  }

  nlohmann::json request_json(const std::string& method, const std::string& path,
                              const nlohmann::json& body) {
    std::string last_error = "no attempts made";
    for (int attempt = 0; attempt <= retries_; ++attempt) {
      httplib::Client cli(host_, port_);
      cli.set_read_timeout(10, 0);
      httplib::Result res = method == "GET"
                                ? cli.Get(path)
                                : cli.Post(path, body.dump(), "application/json");
      if (!res) {
        last_error = "transport failure: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {  // transient server error: retry
        last_error = "server error " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200)
        throw ProtocolError("http status " + std::to_string(res->status) + ": " + res->body);
      try {
        return nlohmann::json::parse(res->body);
      } catch (const std::exception& e) {
        throw ProtocolError(std::string("malformed response body: ") + e.what());
      }
    }
    throw Unreachable("remote oracle unreachable after retries: " + last_error);
  }

  std::string host_;
  int port_;
  int retries_;
  OracleMeta meta_;
  std::atomic<std::uint64_t> queries_{0};
};

}  // namespace bbx
