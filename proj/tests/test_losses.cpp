#include "doctest.h"

#include "varcaps/capsule.hpp"
#include "varcaps/grad_check.hpp"
#include "varcaps/losses.hpp"
#include "varcaps/ops.hpp"
#include "varcaps/rng.hpp"
#include "varcaps/variational.hpp"

#include <cmath>

using namespace varcaps;

TEST_SUITE_BEGIN("losses");

TEST_CASE("margin loss point values at the default constants") {
  MarginLossConfig cfg;  // m+=0.9, m-=0.1, lambda=0.5

  CHECK(capsule_margin_loss(Tensor({1}, std::vector<double>{0.95}),
                            Tensor({1}, std::vector<double>{1}), cfg)
            .value() == 0.0);
  CHECK(capsule_margin_loss(Tensor({1}, std::vector<double>{0.4}),
                            Tensor({1}, std::vector<double>{1}), cfg)
            .value() == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(capsule_margin_loss(Tensor({1}, std::vector<double>{0.6}),
                            Tensor({1}, std::vector<double>{0}), cfg)
            .value() == doctest::Approx(0.125).epsilon(1e-12));

  // both terms together
  CHECK(capsule_margin_loss(Tensor({2}, std::vector<double>{0.4, 0.6}),
                            Tensor({2}, std::vector<double>{1, 0}), cfg)
            .value() == doctest::Approx(0.375).epsilon(1e-12));
}

TEST_CASE("margin loss validates its inputs") {
  MarginLossConfig cfg;
  CHECK_THROWS_AS(capsule_margin_loss(Tensor({1}, std::vector<double>{1.0}),
                                      Tensor({1}, std::vector<double>{1}), cfg),
                  std::domain_error);
  CHECK_THROWS_AS(capsule_margin_loss(Tensor({1}, std::vector<double>{-0.1}),
                                      Tensor({1}, std::vector<double>{1}), cfg),
                  std::domain_error);
  CHECK_THROWS_AS(capsule_margin_loss(Tensor({1}, std::vector<double>{0.5}),
                                      Tensor({1}, std::vector<double>{0.3}), cfg),
                  std::invalid_argument);
  MarginLossConfig bad;
  bad.m_minus = 0.95;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("margin loss is zero exactly when margins are satisfied") {
  Rng rng(51);
  MarginLossConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = rng.uniform_int(2, 5);
    const int truth = rng.uniform_int(0, k - 1);
    std::vector<double> norms(static_cast<std::size_t>(k)), labels(norms.size(), 0.0);
    labels[static_cast<std::size_t>(truth)] = 1.0;
    const bool satisfied = rng.bernoulli(0.5);
    for (int c = 0; c < k; ++c)
      norms[static_cast<std::size_t>(c)] =
          c == truth ? (satisfied ? rng.uniform(0.9, 0.99) : rng.uniform(0.0, 0.89))
                     : (satisfied ? rng.uniform(0.0, 0.1) : rng.uniform(0.2, 0.8));
    const double loss =
        capsule_margin_loss(Tensor({k}, norms), Tensor({k}, labels), cfg).value();
    CHECK(loss >= 0.0);
    if (satisfied)
      CHECK(loss == 0.0);
    else
      CHECK(loss > 0.0);
  }
}

TEST_CASE("hinge loss point values") {
  CHECK(hinge_loss(Tensor({1}, std::vector<double>{1}),
                   Tensor({1}, std::vector<double>{1})).value() == 0.0);
  CHECK(hinge_loss(Tensor({1}, std::vector<double>{1}),
                   Tensor({1}, std::vector<double>{0.3})).value() ==
        doctest::Approx(0.7).epsilon(1e-12));
  CHECK(hinge_loss(Tensor({1}, std::vector<double>{-1}),
                   Tensor({1}, std::vector<double>{0.5})).value() ==
        doctest::Approx(1.5).epsilon(1e-12));
  // mean over classes
  CHECK(hinge_loss(Tensor({2}, std::vector<double>{1, -1}),
                   Tensor({2}, std::vector<double>{0.3, 0.5})).value() ==
        doctest::Approx(1.1).epsilon(1e-12));
  CHECK_THROWS_AS(hinge_loss(Tensor({1}, std::vector<double>{0.5}),
                             Tensor({1}, std::vector<double>{0.5})),
                  std::invalid_argument);
}

TEST_CASE("norm-to-score mapping lands in [-1, 1)") {
  Tensor norms({3}, std::vector<double>{0.0, 0.65, 0.999});
  Tensor y = norms_to_scores(norms);
  CHECK(y.at({0}) == -1.0);
  CHECK(y.at({1}) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(y.at({2}) < 1.0);
  Tensor t = labels_to_targets(Tensor({2}, std::vector<double>{1, 0}));
  CHECK(t.at({0}) == 1.0);
  CHECK(t.at({1}) == -1.0);
}

TEST_CASE("reconstruction loss") {
  Tensor img = Tensor::full({2, 5}, 1.0);
  CHECK(reconstruction_loss(img, img).value() == 0.0);
  CHECK(reconstruction_loss(Tensor::zeros({2, 5}), img).value() ==
        doctest::Approx(1.0).epsilon(1e-12));

  std::vector<double> r(10, 0.5);
  for (int i = 0; i < 5; ++i) r[static_cast<std::size_t>(i)] = 0.7;
  CHECK(reconstruction_loss(Tensor({2, 5}, r), Tensor::full({2, 5}, 0.5)).value() ==
        doctest::Approx(0.02).epsilon(1e-12));

  CHECK_THROWS_AS(reconstruction_loss(Tensor::zeros({3}), Tensor::zeros({4})),
                  std::invalid_argument);
}

TEST_CASE("total loss combination") {
  TotalLossConfig off{0.0, 0.0, 0.0};
  CHECK(total_loss(Tensor::scalar(0.7), Tensor::scalar(9.0), Tensor::scalar(9.0),
                   Tensor::scalar(9.0), off).value() == 0.7);

  TotalLossConfig unit{1.0, 1.0, 0.0};
  CHECK(total_loss(Tensor::scalar(0.2), Tensor::scalar(0.3), Tensor::scalar(0.1),
                   Tensor::scalar(0.0), unit).value() ==
        doctest::Approx(0.6).epsilon(1e-12));

  // doubling beta doubles the KL contribution exactly
  TotalLossConfig b1{0.0, 0.5, 0.0}, b2{0.0, 1.0, 0.0};
  const double kl = 0.25;
  const double t1 = total_loss(Tensor::scalar(0.0), Tensor::scalar(0.0),
                               Tensor::scalar(kl), Tensor::scalar(0.0), b1).value();
  const double t2 = total_loss(Tensor::scalar(0.0), Tensor::scalar(0.0),
                               Tensor::scalar(kl), Tensor::scalar(0.0), b2).value();
  CHECK(t2 == 2.0 * t1);
  CHECK(t1 == 0.125);

  TotalLossConfig bad{-1.0, 0.0, 0.0};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(61);
  MarginLossConfig mcfg;

  std::vector<double> nv(4);
  for (double& x : nv) x = rng.uniform(0.15, 0.85);
  Tensor norms({4}, nv);
  Tensor labels({4}, std::vector<double>{0, 1, 0, 0});

  auto f_margin = [&](Tape&, const Tensor& p) {
    return capsule_margin_loss(p, labels, mcfg);
  };
  CHECK(grad_check(f_margin, norms).max_rel_error < 1e-4);

  std::vector<double> yv(4);
  for (double& x : yv) x = rng.uniform(-0.8, 0.8);
  Tensor scores({4}, yv);
  Tensor targets({4}, std::vector<double>{1, -1, 1, -1});
  auto f_hinge = [&](Tape&, const Tensor& p) { return hinge_loss(targets, p); };
  CHECK(grad_check(f_hinge, scores).max_rel_error < 1e-4);

  std::vector<double> iv(6);
  for (double& x : iv) x = rng.uniform(0.0, 1.0);
  Tensor image({2, 3}, iv);
  auto f_recon = [&](Tape&, const Tensor& p) {
    return reconstruction_loss(p, image);
  };
  std::vector<double> rv(6);
  for (double& x : rv) x = rng.uniform(0.0, 1.0);
  CHECK(grad_check(f_recon, Tensor({2, 3}, rv)).max_rel_error < 1e-4);

  // full total-loss composite from raw pre-squash vectors
  TotalLossConfig tcfg{0.5, 0.25, 0.0};
  Tensor one_hot({3}, std::vector<double>{0, 0, 1});
  auto f_total = [&](Tape&, const Tensor& s) {
    Tensor top = squash(s);                          // [6, 2] doubled bank
    GaussianCapsule g = split_mean_logvar(top);
    Tensor vnorms = l2_norm(g.mu, 1);
    Tensor margin = capsule_margin_loss(vnorms, one_hot, mcfg);
    Tensor hinge = hinge_loss(labels_to_targets(one_hot), norms_to_scores(vnorms));
    Tensor kl = kl_divergence(g);
    return total_loss(hinge, margin, kl, Tensor::scalar(0.0), tcfg);
  };
  std::vector<double> sv(12);
  for (double& x : sv) x = rng.uniform(-1.5, 1.5);
  GradCheckResult r = grad_check(f_total, Tensor({6, 2}, sv));
  CHECK(r.max_rel_error < 1e-4);
}

TEST_SUITE_END();
