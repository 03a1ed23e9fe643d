#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "bbx/dataset.hpp"
#include "bbx/model.hpp"
#include "bbx/oracle.hpp"
#include "bbx/train.hpp"

using namespace bbx;

namespace {

// Central finite-difference gradient of the loss w.r.t. the input.
Tensor fd_grad(const MlpModel& model, const Tensor& x, LossKind loss, std::size_t cls,
               bool targeted, double h) {
  Tensor g(x.shape(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    auto fp = model.forward(xp);
    auto fm = model.forward(xm);
    std::vector<double> zp(fp.data(), fp.data() + model.num_classes());
    std::vector<double> zm(fm.data(), fm.data() + model.num_classes());
    g[i] = (loss_value(zp, loss, cls, targeted) - loss_value(zm, loss, cls, targeted)) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("softmax and argmax basics") {
  auto p = softmax({0.0, 0.0, 0.0});
  for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0));
  auto q = softmax({1000.0, 0.0});  // must not overflow
  CHECK(q[0] == doctest::Approx(1.0));
  CHECK(argmax({1.0, 3.0, 3.0, 2.0}) == 1);  // lowest index wins ties
}

TEST_CASE("linear softmax model has the closed-form CE gradient") {
  // Single identity layer: logits = Wx + b, so dCE/dx = W^T (p - onehot(y)).
  Rng rng(21);
  Layer l;
  l.in = 3;
  l.out = 4;
  l.act = Activation::Identity;
  l.weight.resize(12);
  l.bias.resize(4);
  for (auto& w : l.weight) w = rng.uniform(-1.0, 1.0);
  for (auto& b : l.bias) b = rng.uniform(-0.5, 0.5);
  MlpModel model({3}, {l});

  Tensor x({3}, {0.2, -0.4, 0.9});
  std::size_t y = 2;
  Tensor g = grad_input(model, x, LossKind::CrossEntropy, y);

  std::vector<double> xi(x.data(), x.data() + 3);
  auto z = model.forward_single(xi);
  auto p = softmax(z);
  p[y] -= 1.0;
  for (std::size_t i = 0; i < 3; ++i) {
    double expect = 0;
    for (std::size_t o = 0; o < 4; ++o) expect += l.weight[o * 3 + i] * p[o];
    CHECK(g[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("autodiff matches central finite differences on random MLPs") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    MlpModel model = MlpModel::random({5}, {8, 6}, 3, rng);
    Tensor x = uniform_tensor(rng, {5}, 0.05, 0.95);
    for (LossKind loss : {LossKind::CrossEntropy, LossKind::LogitMargin, LossKind::TargetLogit}) {
      for (bool targeted : {false, true}) {
        if (loss == LossKind::TargetLogit && !targeted) continue;
        std::size_t cls = rng.below(3);
        Tensor g = grad_input(model, x, loss, cls, targeted);
        Tensor fd = fd_grad(model, x, loss, cls, targeted, 1e-5);
        double gn = norm(fd, NormKind::L2);
        for (std::size_t i = 0; i < g.size(); ++i)
          CHECK(std::abs(g[i] - fd[i]) <= 1e-5 * std::max(1.0, gn));
      }
    }
  }
}

TEST_CASE("parameter gradients match finite differences") {
  Rng rng(41);
  MlpModel model = MlpModel::random({4}, {6}, 3, rng);
  Tensor x = uniform_tensor(rng, {4}, 0.0, 1.0);
  std::size_t y = 1;

  GradientTape tape;
  std::vector<double> xi(x.data(), x.data() + x.size());
  auto logits = model.forward_single(xi, &tape);
  ParamGrads pg;
  model.backward(tape, loss_grad_logits(logits, LossKind::CrossEntropy, y), &pg);

  const double h = 1e-6;
  for (std::size_t li = 0; li < model.layers().size(); ++li) {
    auto& layer = model.layers()[li];
    for (std::size_t wi = 0; wi < layer.weight.size(); wi += 3) {
      double orig = layer.weight[wi];
      layer.weight[wi] = orig + h;
      auto zp = model.forward_single(xi);
      layer.weight[wi] = orig - h;
      auto zm = model.forward_single(xi);
      layer.weight[wi] = orig;
      double fd = (loss_value(zp, LossKind::CrossEntropy, y) -
                   loss_value(zm, LossKind::CrossEntropy, y)) /
                  (2 * h);
      CHECK(pg.weight[li][wi] == doctest::Approx(fd).epsilon(1e-4));
    }
    for (std::size_t bi = 0; bi < layer.bias.size(); ++bi) {
      double orig = layer.bias[bi];
      layer.bias[bi] = orig + h;
      auto zp = model.forward_single(xi);
      layer.bias[bi] = orig - h;
      auto zm = model.forward_single(xi);
      layer.bias[bi] = orig;
      double fd = (loss_value(zp, LossKind::CrossEntropy, y) -
                   loss_value(zm, LossKind::CrossEntropy, y)) /
                  (2 * h);
      CHECK(pg.bias[li][bi] == doctest::Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("loss values and gradients reject bad class indices") {
  CHECK_THROWS_AS(loss_value({1.0, 2.0}, LossKind::CrossEntropy, 5), InvalidClass);
  CHECK_THROWS_AS(loss_grad_logits({1.0, 2.0}, LossKind::TargetLogit, 2), InvalidClass);
}

TEST_CASE("forward shapes and errors") {
  Rng rng(51);
  MlpModel model = MlpModel::random({1, 2}, {4}, 2, rng);
  Tensor batch = uniform_tensor(rng, {5, 1, 2}, 0.0, 1.0);
  Tensor z = model.forward(batch);
  REQUIRE(z.shape() == std::vector<std::size_t>({5, 2}));
  // batch rows agree with per-example forward
  for (std::size_t b = 0; b < 5; ++b) {
    std::vector<double> xi(batch.data() + b * 2, batch.data() + (b + 1) * 2);
    auto zi = model.forward_single(xi);
    CHECK(z[b * 2] == zi[0]);
    CHECK(z[b * 2 + 1] == zi[1]);
  }
  CHECK_THROWS_AS(model.forward(Tensor({3}, {0.0, 0.0, 0.0})), ShapeMismatch);
}

TEST_CASE("bbw round trip preserves behavior exactly") {
  Rng rng(61);
  MlpModel model = MlpModel::random({1, 2}, {7, 5}, 3, rng);
  auto path = (std::filesystem::temp_directory_path() / "m.bbw").string();
  save_bbw(model, path);
  MlpModel back = load_bbw(path);
  CHECK(back.input_shape() == model.input_shape());
  CHECK(back.num_classes() == model.num_classes());
  for (int t = 0; t < 20; ++t) {
    Tensor x = uniform_tensor(rng, {1, 2}, 0.0, 1.0);
    Tensor z1 = model.forward(x), z2 = back.forward(x);
    for (std::size_t i = 0; i < z1.size(); ++i) CHECK(z1[i] == z2[i]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("training reaches high accuracy on blobs") {
  Rng drng(7);
  Dataset ds = make_blobs(200, drng);
  Rng trng(8);
  TrainConfig cfg;
  cfg.epochs = 40;
  MlpModel model = train(ds, cfg, trng);
  CHECK(accuracy(model, ds) >= 0.99);
}

TEST_CASE("adversarial training closes the robust-accuracy gap") {
  Rng drng(9);
  Dataset ds = make_blobs(160, drng);
  PgdAtConfig atk;  // eps 0.3, step 0.075, 10 steps

  Rng t1(10);
  TrainConfig plain;
  plain.epochs = 40;
  MlpModel std_model = train(ds, plain, t1);

  Rng t2(10);
  TrainConfig adv = plain;
  adv.adv = atk;
  MlpModel at_model = train(ds, adv, t2);

  Rng e1(11), e2(11);
  double std_rob = robust_accuracy(std_model, ds, atk, e1);
  double at_rob = robust_accuracy(at_model, ds, atk, e2);
  // at eps=0.3 the perturbed classes overlap, so clean accuracy degrades;
  // the contract is only that AT buys a large robust-accuracy gap
  CHECK(at_rob >= std_rob + 0.2);
}

TEST_CASE("pgd_perturb stays inside ball and box") {
  Rng rng(12);
  MlpModel model = MlpModel::random({1, 2}, {8}, 2, rng);
  PgdAtConfig cfg;
  for (int t = 0; t < 20; ++t) {
    Tensor x = uniform_tensor(rng, {1, 2}, 0.0, 1.0);
    Tensor adv = pgd_perturb(model, x, t % 2, cfg, rng);
    CHECK(norm(adv - x, NormKind::Linf) <= cfg.eps + 1e-12);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      CHECK(adv[i] >= 0.0);
      CHECK(adv[i] <= 1.0);
    }
  }
}

TEST_CASE("local oracle counts per-example queries and peeks are free") {
  Rng rng(13);
  MlpModel model = MlpModel::random({1, 2}, {4}, 2, rng);
  LocalOracle oracle(std::move(model));
  Tensor one = uniform_tensor(rng, {1, 2}, 0.0, 1.0);
  Tensor batch = uniform_tensor(rng, {7, 1, 2}, 0.0, 1.0);

  CHECK(oracle.queries_used() == 0);
  oracle.query_logits(one);
  CHECK(oracle.queries_used() == 1);
  oracle.query_label(batch);
  CHECK(oracle.queries_used() == 8);
  oracle.peek_logits(batch);
  oracle.peek_label(one);
  CHECK(oracle.queries_used() == 8);

  auto meta = oracle.meta();
  CHECK(meta.classes == 2);
  CHECK(meta.input_shape == std::vector<std::size_t>({1, 2}));

  // labels agree with logits argmax
  auto labels = oracle.peek_label(batch);
  Tensor z = oracle.peek_logits(batch);
  for (std::size_t b = 0; b < 7; ++b) {
    std::vector<double> zi(z.data() + b * 2, z.data() + (b + 1) * 2);
    CHECK(labels[b] == argmax(zi));
  }
}

TEST_CASE("dataset save/load round trip") {
  Rng rng(14);
  Dataset ds = make_blobs(20, rng);
  auto dir = (std::filesystem::temp_directory_path() / "bbx_ds").string();
  save_dataset(ds, dir);
  Dataset back = load_dataset(dir);
  REQUIRE(back.size() == ds.size());
  CHECK(back.labels == ds.labels);
  for (std::size_t i = 0; i < ds.inputs.size(); ++i)
    CHECK(back.inputs[i] == doctest::Approx(ds.inputs[i]).epsilon(1e-6));
  std::filesystem::remove_all(dir);
}

TEST_CASE("blobs live in the box with alternating labels") {
  Rng rng(15);
  Dataset ds = make_blobs(50, rng, 0.1);
  CHECK(ds.example_shape() == std::vector<std::size_t>({1, 2}));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(ds.labels[i] == i % 2);
    Tensor x = ds.example(i);
    for (std::size_t k = 0; k < x.size(); ++k) {
      CHECK(x[k] >= 0.0);
      CHECK(x[k] <= 1.0);
    }
  }
  CHECK_THROWS_AS(make_blobs(0, rng), EmptyDataset);
}
