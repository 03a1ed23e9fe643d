#pragma once

#include <memory>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "bbx/oracle.hpp"

namespace bbx {

struct BindFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// Parses {"inputs": [[...],...]} into a batch tensor of shape [B, d...].
inline Tensor parse_inputs(const nlohmann::json& body, const OracleMeta& meta) {
  if (!body.contains("inputs") || !body["inputs"].is_array() || body["inputs"].empty())
    throw std::invalid_argument("body must contain a nonempty \"inputs\" array");
  std::size_t d = Tensor::count(meta.input_shape);
  std::vector<double> data;
  std::size_t batch = body["inputs"].size();
  data.reserve(batch * d);
  for (const auto& row : body["inputs"]) {
    if (!row.is_array() || row.size() != d) throw ShapeMismatch("input row has wrong length");
    for (const auto& v : row) {
      if (!v.is_number()) throw std::invalid_argument("non-numeric input element");
      data.push_back(v.get<double>());
    }
  }
  std::vector<std::size_t> shape{batch};
  shape.insert(shape.end(), meta.input_shape.begin(), meta.input_shape.end());
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace detail

// HTTP/1.1 JSON inference service over any oracle:
//   GET  /v1/meta   -> {"classes": K, "input_shape": [...]}
//   POST /v1/logits -> {"logits": [[...],...]}
//   POST /v1/label  -> {"labels": [...]}
// 400 malformed body, 422 shape mismatch, 500 internal error.
class OracleServer {
 public:
  explicit OracleServer(std::shared_ptr<ModelOracle> oracle) : oracle_(std::move(oracle)) {
    svr_.Get("/v1/meta", [this](const httplib::Request&, httplib::Response& res) {
      auto meta = oracle_->meta();
      nlohmann::json j{{"classes", meta.classes}, {"input_shape", meta.input_shape}};
      res.set_content(j.dump(), "application/json");
    });
    svr_.Post("/v1/logits", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const Tensor& batch) {
        Tensor z = oracle_->query_logits(batch);
        std::size_t k = oracle_->meta().classes;
        std::size_t b = z.size() / k;
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t i = 0; i < b; ++i) {
          nlohmann::json row = nlohmann::json::array();
          for (std::size_t j = 0; j < k; ++j) row.push_back(z[i * k + j]);
          rows.push_back(std::move(row));
        }
        return nlohmann::json{{"logits", std::move(rows)}};
      });
    });
    svr_.Post("/v1/label", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const Tensor& batch) {
        return nlohmann::json{{"labels", oracle_->query_label(batch)}};
      });
    });
  }

  // Blocks until stop() is called.
  void listen(const std::string& host, int port) {
    if (!svr_.listen(host, port)) throw BindFailure("cannot bind " + host + ":" + std::to_string(port));
  }

  // Binds to an OS-assigned port and returns it; serving continues on the
  // caller-managed thread via wait_until_ready/listen_after_bind.
  int bind_any(const std::string& host) {
    int port = svr_.bind_to_any_port(host);
    if (port <= 0) throw BindFailure("cannot bind " + host);
    return port;
  }

  void listen_after_bind() { svr_.listen_after_bind(); }
  void wait_until_ready() { svr_.wait_until_ready(); }
  void stop() { svr_.stop(); }

 private:
  template <typename Fn>
  void handle(const httplib::Request& req, httplib::Response& res, Fn&& fn) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
      return;
    }
    try {
      Tensor batch = detail::parse_inputs(body, oracle_->meta());
      res.set_content(fn(batch).dump(), "application/json");
    } catch (const ShapeMismatch& e) {
      res.status = 422;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    } catch (const std::invalid_argument& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  }

  std::shared_ptr<ModelOracle> oracle_;
  httplib::Server svr_;
};

}  // namespace bbx
