#include <doctest.h>

#include <cmath>

#include "bbx/dataset.hpp"
#include "bbx/model.hpp"
#include "bbx/train.hpp"
#include "bbx/transfer.hpp"

using namespace bbx;

namespace {

MlpModel linear_model() {
  Layer l;
  l.in = 2;
  l.out = 2;
  l.act = Activation::Identity;
  l.weight = {1.0, -0.5, -1.0, 0.5};
  l.bias = {0.1, -0.1};
  return MlpModel({1, 2}, {l});
}

MlpModel trained_blob_model(unsigned seed = 8) {
  Rng drng(7);
  Dataset ds = make_blobs(200, drng);
  Rng trng(seed);
  TrainConfig cfg;
  cfg.epochs = 40;
  return train(ds, cfg, trng);
}

// Blobs contracted toward 0.5. At scale 0.25 the class margin sits inside an
// eps=0.1 Linf ball, so a correct white-box attack must flip every eligible
// example; on full-scale blobs the boundary is simply out of reach at that
// budget and flip rates say nothing about attack correctness.
Dataset scaled_blobs(std::size_t n, Rng& rng, double scale) {
  Dataset ds = make_blobs(n, rng);
  for (std::size_t i = 0; i < ds.inputs.size(); ++i)
    ds.inputs[i] = 0.5 + scale * (ds.inputs[i] - 0.5);
  return ds;
}

}  // namespace

TEST_CASE("preset catalogue") {
  CHECK(transfer_preset_names().size() == 16);
  for (const auto& name : transfer_preset_names()) {
    TransferPreset p = make_preset(name);
    CHECK(p.name == name);
  }
  CHECK_THROWS_AS(make_preset("cw"), UnknownPreset);
  CHECK(make_preset("pgd").random_start);
  CHECK(make_preset("mi").momentum);
  CHECK(make_preset("ni").nesterov);
  CHECK(make_preset("pi").pi);
  CHECK(make_preset("vt").variance);
  CHECK(make_preset("ti").ti_kernel == 5);
  CHECK(make_preset("si").si_copies == 5);
  CHECK(make_preset("admix").admix);
  CHECK(make_preset("rd").rd_sigma == doctest::Approx(0.01));
  CHECK(make_preset("mi-di-ti-si").si_copies == 5);
}

TEST_CASE("si copies scale geometrically with equal weights") {
  Tensor x({1, 2}, {0.8, 0.4});
  auto copies = transform_si(x, 5, 2.0);
  REQUIRE(copies.size() == 5);
  double scale = 1.0;
  for (auto& c : copies) {
    CHECK(c.weight == doctest::Approx(0.2));
    CHECK(c.x[0] == doctest::Approx(0.8 * scale));
    CHECK(c.x[1] == doctest::Approx(0.4 * scale));
    scale /= 2.0;
  }
  CHECK_THROWS_AS(transform_si(x, 0, 2.0), ConfigInvalid);
}

TEST_CASE("admix with eta 0 reduces to SI copies of x") {
  Tensor x({1, 2}, {0.6, 0.2});
  std::vector<Tensor> gallery = {Tensor({1, 2}, {0.1, 0.9})};
  Rng rng(1);
  auto tf = transform_admix(gallery, 0.0, 3, 1, 2.0);
  auto copies = tf(x, rng);
  REQUIRE(copies.size() == 3);
  for (auto& c : copies) {
    CHECK(c.weight == doctest::Approx(1.0 / 3.0));
    CHECK(c.x[0] == doctest::Approx(0.6));
    CHECK(c.x[1] == doctest::Approx(0.2));
  }
  CHECK_THROWS_AS(transform_admix({}, 0.2, 3, 1, 2.0), EmptyGallery);
}

TEST_CASE("admix mixes in gallery mass") {
  Tensor x({1, 2}, {0.5, 0.5});
  std::vector<Tensor> gallery = {Tensor({1, 2}, {1.0, 0.0})};
  Rng rng(2);
  auto copies = transform_admix(gallery, 0.2, 2, 1, 2.0)(x, rng);
  REQUIRE(copies.size() == 2);
  for (auto& c : copies) {
    CHECK(c.x[0] == doctest::Approx(0.5 + 0.2 * 1.0));
    CHECK(c.x[1] == doctest::Approx(0.5));
  }
}

TEST_CASE("di transform identity branch and geometry") {
  Tensor x({4, 4}, 0.0);
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i) / 16.0;
  Rng rng(3);

  auto never = transform_di(0.0);
  auto id = never(x, rng);
  REQUIRE(id.size() == 1);
  for (std::size_t i = 0; i < 16; ++i) CHECK(id[0].x[i] == x[i]);

  auto always = transform_di(1.0, 0.5);
  bool changed = false;
  for (int t = 0; t < 50; ++t) {
    auto out = always(x, rng);
    REQUIRE(out.size() == 1);
    CHECK(out[0].x.shape() == x.shape());
    for (std::size_t i = 0; i < 16; ++i)
      if (out[0].x[i] != x[i]) changed = true;
  }
  CHECK(changed);

  CHECK_THROWS_AS(transform_di(1.0)(Tensor({4}, 0.0), rng), NotImageShaped);
}

TEST_CASE("ti kernel: identity at k=1, mass-preserving in the interior, even k rejected") {
  Tensor g({5, 5}, 0.0);
  g[2 * 5 + 2] = 1.0;  // centered impulse
  Tensor same = grad_ti(g, 1);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(same[i] == g[i]);

  Tensor sm = grad_ti(g, 3);
  // kernel is separable and normalized: total mass of an interior impulse is 1
  double total = 0;
  for (std::size_t i = 0; i < sm.size(); ++i) total += sm[i];
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  // center keeps the largest share
  CHECK(sm[2 * 5 + 2] > sm[2 * 5 + 1]);
  CHECK(sm[2 * 5 + 1] == doctest::Approx(sm[2 * 5 + 3]));  // symmetry

  // constant field is preserved away from the border
  Tensor c({9, 9}, 1.0);
  Tensor cc = grad_ti(c, 3);
  CHECK(cc[4 * 9 + 4] == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(grad_ti(g, 4), ConfigInvalid);
  CHECK_THROWS_AS(grad_ti(Tensor({4}, 0.0), 3), NotImageShaped);
}

TEST_CASE("mi direction accumulates a geometric series") {
  auto dir = direction_mi(0.5);
  Tensor g({2}, {3.0, 1.0});  // l1 norm 4 -> normalized (0.75, 0.25)
  Tensor d1 = dir(g);
  CHECK(d1[0] == doctest::Approx(0.75));
  CHECK(d1[1] == doctest::Approx(0.25));
  Tensor d2 = dir(g);
  CHECK(d2[0] == doctest::Approx(0.5 * 0.75 + 0.75));
  Tensor d3 = dir(g);
  CHECK(d3[0] == doctest::Approx(0.75 * (1 + 0.5 + 0.25)));

  // zero gradient: momentum alone
  Tensor z({2}, 0.0);
  Tensor d4 = dir(z);
  CHECK(d4[0] == doctest::Approx(0.5 * d3[0]));
}

TEST_CASE("rd refinement: sigma 0 is bitwise identity, sigma > 0 jitters") {
  MlpModel m = linear_model();
  Rng rng(4);
  MlpModel same = refine_rd(m, 0.0, rng);
  for (std::size_t li = 0; li < m.layers().size(); ++li) {
    CHECK(same.layers()[li].weight == m.layers()[li].weight);
    CHECK(same.layers()[li].bias == m.layers()[li].bias);
  }
  MlpModel jit = refine_rd(m, 0.01, rng);
  bool moved = false;
  for (std::size_t i = 0; i < m.layers()[0].weight.size(); ++i)
    if (jit.layers()[0].weight[i] != m.layers()[0].weight[i]) moved = true;
  CHECK(moved);
  CHECK_THROWS_AS(refine_rd(m, -0.1, rng), ConfigInvalid);
}

TEST_CASE("zero iterations returns x unchanged") {
  MlpModel m = linear_model();
  Tensor x({1, 2}, {0.3, 0.7});
  AttackConfig cfg;
  cfg.eps = 0.1;
  cfg.step = 0.02;
  cfg.iterations = 0;
  Tensor out = run_transfer_preset(m, x, Criterion{false, 0, 0}, cfg, make_preset("ifgsm"), Rng(5));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(out[i] == x[i]);
}

TEST_CASE("one-step FGSM on a linear-softmax surrogate matches the closed form") {
  MlpModel m = linear_model();
  Tensor x({1, 2}, {0.4, 0.6});
  std::size_t y = 0;
  AttackConfig cfg;
  cfg.eps = 0.1;
  cfg.step = 0.1;
  cfg.iterations = 1;
  Tensor out = run_transfer_preset(m, x, Criterion{false, y, 0}, cfg, make_preset("ifgsm"), Rng(6));
  Tensor g = grad_input(m, x, LossKind::CrossEntropy, y);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double expect = std::clamp(x[i] + cfg.eps * (g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0)), 0.0, 1.0);
    CHECK(out[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("ni matches a hand-rolled nesterov recursion") {
  MlpModel m = trained_blob_model();
  Rng drng(7);
  Dataset ds = make_blobs(200, drng);
  Tensor x = ds.example(0);
  std::size_t y = ds.labels[0];
  AttackConfig cfg;
  cfg.eps = 0.1;
  cfg.step = 0.02;
  cfg.iterations = 10;

  Tensor got = run_transfer_preset(m, x, Criterion{false, y, 0}, cfg, make_preset("ni"), Rng(8));

  // independent recursion: g_t = mu g_{t-1} + grad(x_t + a mu g_{t-1}) / l1
  double mu = 1.0;
  Tensor mom(x.shape(), 0.0);
  Tensor xt = x;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    Tensor eval = xt + cfg.step * mu * mom;
    Tensor grad = grad_input(m, eval, LossKind::CrossEntropy, y);  // ascent on CE
    double l1 = l1_norm(grad);
    Tensor term = l1 > 0 ? grad * (1.0 / l1) : Tensor(grad.shape(), 0.0);
    mom = mu * mom + term;
    xt = clamp_box(project_ball(xt + cfg.step * sign(mom), x, cfg.eps, NormKind::Linf), 0.0, 1.0);
  }
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(got[i] == doctest::Approx(xt[i]).epsilon(1e-9));
}

TEST_CASE("vt on a linear surrogate equals plain mi: constant gradient kills the variance term") {
  MlpModel m = linear_model();
  Tensor x({1, 2}, {0.45, 0.55});
  AttackConfig cfg;
  cfg.eps = 0.08;
  cfg.step = 0.01;
  cfg.iterations = 12;
  Criterion crit{false, 0, 0};
  Tensor vt_out = run_transfer_preset(m, x, crit, cfg, make_preset("vt"), Rng(9));
  Tensor mi_out = run_transfer_preset(m, x, crit, cfg, make_preset("mi"), Rng(9));
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(vt_out[i] == doctest::Approx(mi_out[i]).epsilon(1e-12));
}

TEST_CASE("every preset stays inside ball and box and flips the surrogate") {
  Rng drng(7);
  Dataset ds = scaled_blobs(200, drng, 0.25);
  Rng trng(8);
  TrainConfig tc;
  tc.epochs = 40;
  MlpModel m = train(ds, tc, trng);
  std::vector<Tensor> gallery;
  for (std::size_t i = 0; i < 8; ++i) gallery.push_back(ds.example(i));

  // a correctly-classified example
  std::size_t idx = 0;
  while (m.predict(ds.example(idx)) != ds.labels[idx]) ++idx;
  Tensor x = ds.example(idx);
  std::size_t y = ds.labels[idx];

  AttackConfig cfg;
  cfg.eps = 0.1;
  cfg.step = 0.1 / 20;
  cfg.iterations = 50;
  for (const auto& name : transfer_preset_names()) {
    CAPTURE(name);
    Tensor out = run_transfer_preset(m, x, Criterion{false, y, 0}, cfg, make_preset(name),
                                     Rng(10), gallery);
    CHECK(norm(out - x, NormKind::Linf) <= cfg.eps + 1e-9);
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(out[i] >= 0.0);
      CHECK(out[i] <= 1.0);
    }
    CHECK(m.predict(out) != y);
  }
}

TEST_CASE("L2 presets respect the L2 ball") {
  MlpModel m = trained_blob_model();
  Rng drng(7);
  Dataset ds = make_blobs(200, drng);
  Tensor x = ds.example(0);
  AttackConfig cfg;
  cfg.norm = NormKind::L2;
  cfg.eps = 0.12;
  cfg.step = 0.03;
  cfg.iterations = 30;
  for (const char* name : {"ifgsm", "pgd", "mi"}) {
    Tensor out = run_transfer_preset(m, x, Criterion{false, ds.labels[0], 0}, cfg,
                                     make_preset(name), Rng(11));
    CHECK(norm(out - x, NormKind::L2) <= cfg.eps + 1e-9);
  }
}

TEST_CASE("admix preset without a gallery throws") {
  MlpModel m = linear_model();
  Tensor x({1, 2}, {0.5, 0.5});
  AttackConfig cfg;
  cfg.eps = 0.1;
  cfg.step = 0.02;
  cfg.iterations = 5;
  CHECK_THROWS_AS(
      run_transfer_preset(m, x, Criterion{false, 0, 0}, cfg, make_preset("admix"), Rng(12)),
      EmptyGallery);
}

TEST_CASE("targeted transfer reaches the target class") {
  Rng drng(7);
  Dataset ds = scaled_blobs(200, drng, 0.25);
  Rng trng(8);
  TrainConfig tc;
  tc.epochs = 40;
  MlpModel m = train(ds, tc, trng);
  std::size_t idx = 0;
  while (m.predict(ds.example(idx)) != ds.labels[idx]) ++idx;
  Tensor x = ds.example(idx);
  std::size_t y = ds.labels[idx];
  std::size_t t = 1 - y;
  AttackConfig cfg;
  cfg.eps = 0.15;
  cfg.step = 0.15 / 20;
  cfg.iterations = 50;
  cfg.targeted = true;
  Tensor out =
      run_transfer_preset(m, x, Criterion{true, y, t}, cfg, make_preset("mi"), Rng(13));
  CHECK(m.predict(out) == t);
}
