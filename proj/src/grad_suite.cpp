#include "varcaps/grad_suite.hpp"

#include "varcaps/capsule.hpp"
#include "varcaps/decoder.hpp"
#include "varcaps/grad_check.hpp"
#include "varcaps/losses.hpp"
#include "varcaps/ops.hpp"
#include "varcaps/rng.hpp"
#include "varcaps/variational.hpp"

#include <functional>

namespace varcaps {

namespace {

Tensor rand_t(Rng& rng, Shape shape, double lo = -1.5, double hi = 1.5) {
  std::vector<double> vals(static_cast<std::size_t>(shape_numel(shape)));
  for (double& v : vals) v = rng.uniform(lo, hi);
  return Tensor(std::move(shape), vals);
}

// Values bounded away from zero, for ops with a kink there.
Tensor rand_offzero(Rng& rng, Shape shape) {
  std::vector<double> vals(static_cast<std::size_t>(shape_numel(shape)));
  for (double& v : vals) {
    v = rng.uniform(0.05, 1.5);
    if (rng.bernoulli(0.5)) v = -v;
  }
  return Tensor(std::move(shape), vals);
}

Tensor weigh(const Tensor& out, const Tensor& w) { return sum(mul(out, w)); }

// One named case: draws an instance and returns the grad_check result.
struct Case {
  const char* name;
  std::function<GradCheckResult(Rng&)> run;
};

}  // namespace

std::vector<OpGradReport> run_gradient_suite(int instances, unsigned seed) {
  std::vector<Case> cases;

  cases.push_back({"add", [](Rng& rng) {
    Tensor b = rand_t(rng, {3, 2}), w = rand_t(rng, {3, 2});
    return grad_check([&](Tape&, const Tensor& x) { return weigh(add(x, b), w); },
                      rand_t(rng, {3, 2}));
  }});
  cases.push_back({"sub", [](Rng& rng) {
    Tensor b = rand_t(rng, {3, 2}), w = rand_t(rng, {3, 2});
    return grad_check([&](Tape&, const Tensor& x) { return weigh(sub(b, x), w); },
                      rand_t(rng, {3, 2}));
  }});
  cases.push_back({"mul", [](Rng& rng) {
    Tensor b = rand_t(rng, {3, 2}), w = rand_t(rng, {3, 2});
    return grad_check([&](Tape&, const Tensor& x) { return weigh(mul(x, b), w); },
                      rand_t(rng, {3, 2}));
  }});
  cases.push_back({"scale_and_shift", [](Rng& rng) {
    Tensor w = rand_t(rng, {4});
    const double c = rng.uniform(-2.0, 2.0);
    return grad_check(
        [&](Tape&, const Tensor& x) { return weigh(add(scale(x, c), 0.7), w); },
        rand_t(rng, {4}));
  }});
  cases.push_back({"exp", [](Rng& rng) {
    Tensor w = rand_t(rng, {4});
    return grad_check([&](Tape&, const Tensor& x) { return weigh(exp(x), w); },
                      rand_t(rng, {4}));
  }});
  cases.push_back({"log", [](Rng& rng) {
    Tensor w = rand_t(rng, {4});
    return grad_check([&](Tape&, const Tensor& x) { return weigh(log(x), w); },
                      rand_t(rng, {4}, 0.1, 2.0));
  }});
  cases.push_back({"sigmoid", [](Rng& rng) {
    Tensor w = rand_t(rng, {4});
    return grad_check([&](Tape&, const Tensor& x) { return weigh(sigmoid(x), w); },
                      rand_t(rng, {4}, -4.0, 4.0));
  }});
  cases.push_back({"relu", [](Rng& rng) {
    Tensor w = rand_t(rng, {6});
    return grad_check([&](Tape&, const Tensor& x) { return weigh(relu(x), w); },
                      rand_offzero(rng, {6}));
  }});
  cases.push_back({"abs", [](Rng& rng) {
    Tensor w = rand_t(rng, {6});
    return grad_check([&](Tape&, const Tensor& x) { return weigh(abs(x), w); },
                      rand_offzero(rng, {6}));
  }});
  cases.push_back({"reshape_narrow_concat", [](Rng& rng) {
    Tensor w = rand_t(rng, {4, 2});
    return grad_check(
        [&](Tape&, const Tensor& x) {
          Tensor m = reshape(x, {4, 2});
          return weigh(concat0(narrow(m, 0, 2), narrow(m, 2, 2)), w);
        },
        rand_t(rng, {8}));
  }});
  cases.push_back({"matmul", [](Rng& rng) {
    Tensor b = rand_t(rng, {3, 2}), w = rand_t(rng, {2, 2});
    return grad_check(
        [&](Tape&, const Tensor& x) { return weigh(matmul(x, b), w); },
        rand_t(rng, {2, 3}));
  }});
  cases.push_back({"softmax", [](Rng& rng) {
    Tensor w = rand_t(rng, {3, 4});
    return grad_check(
        [&](Tape&, const Tensor& x) { return weigh(softmax(x, 1), w); },
        rand_t(rng, {3, 4}, -3.0, 3.0));
  }});
  cases.push_back({"l2_norm", [](Rng& rng) {
    Tensor w = rand_t(rng, {3});
    return grad_check(
        [&](Tape&, const Tensor& x) { return weigh(l2_norm(x, 1), w); },
        rand_offzero(rng, {3, 4}));
  }});
  cases.push_back({"sum_mean_dot", [](Rng& rng) {
    Tensor b = rand_t(rng, {5});
    return grad_check(
        [&](Tape&, const Tensor& x) {
          return add(add(sum(x), mean(x)), dot(x, b));
        },
        rand_t(rng, {5}));
  }});
  cases.push_back({"conv2d", [](Rng& rng) {
    Tensor k = rand_t(rng, {3, 3, 1, 2}), b = rand_t(rng, {2});
    Tensor w = rand_t(rng, {2, 2, 2});
    return grad_check(
        [&](Tape&, const Tensor& x) { return weigh(conv2d(x, k, b, 2), w); },
        rand_t(rng, {5, 5, 1}));
  }});
  cases.push_back({"conv2d_kernel", [](Rng& rng) {
    Tensor img = rand_t(rng, {5, 5, 2}), b = rand_t(rng, {1});
    Tensor w = rand_t(rng, {3, 3, 1});
    return grad_check(
        [&](Tape&, const Tensor& x) { return weigh(conv2d(img, x, b, 1), w); },
        rand_t(rng, {3, 3, 2, 1}));
  }});
  cases.push_back({"squash", [](Rng& rng) {
    Tensor w = rand_t(rng, {3, 4});
    return grad_check([&](Tape&, const Tensor& x) { return weigh(squash(x), w); },
                      rand_t(rng, {3, 4}));
  }});
  cases.push_back({"predict", [](Rng& rng) {
    Tensor u = rand_t(rng, {3, 2});
    Tensor w = rand_t(rng, {3, 2, 2});
    return grad_check(
        [&](Tape&, const Tensor& x) {
          return weigh(predict(u, TransformWeights{x}), w);
        },
        rand_t(rng, {3, 2, 2, 2}));
  }});
  cases.push_back({"coupling_sum", [](Rng& rng) {
    Tensor u_hat = rand_t(rng, {3, 2, 2});
    Tensor w = rand_t(rng, {2, 2});
    return grad_check(
        [&](Tape&, const Tensor& x) {
          return weigh(coupling_sum(softmax(x, 1), u_hat), w);
        },
        rand_t(rng, {3, 2}));
  }});
  cases.push_back({"pairwise_agreement", [](Rng& rng) {
    Tensor v = rand_t(rng, {2, 3});
    Tensor w = rand_t(rng, {4, 2});
    return grad_check(
        [&](Tape&, const Tensor& x) {
          return weigh(pairwise_agreement(x, v), w);
        },
        rand_t(rng, {4, 2, 3}));
  }});
  cases.push_back({"dynamic_routing", [](Rng& rng) {
    CapsuleLayerSpec spec{3, 2, 2, 2, 3};
    Tensor u = rand_t(rng, {3, 2});
    Tensor w = rand_t(rng, {2, 2});
    return grad_check(
        [&](Tape&, const Tensor& x) {
          auto [v, c] = dynamic_routing(predict(u, TransformWeights{x}), spec);
          return weigh(v, w);
        },
        rand_t(rng, {3, 2, 2, 2}));
  }});
  cases.push_back({"tree_affine", [](Rng& rng) {
    HierarchyTopology topo = build_topology(4, 6, {5});
    Tensor w1 = rand_t(rng, {5}), b1 = rand_t(rng, {5});
    Tensor w2 = rand_t(rng, {6}), b2 = rand_t(rng, {6});
    Tensor w = rand_t(rng, {6});
    return grad_check(
        [&](Tape&, const Tensor& x) {
          Tensor h = sigmoid(tree_affine(x, w1, b1, topo.parent_of[0]));
          return weigh(tree_affine(h, w2, b2, topo.parent_of[1]), w);
        },
        rand_t(rng, {4}));
  }});
  cases.push_back({"reparameterize", [](Rng& rng) {
    Tensor lv = rand_t(rng, {2, 3}, -1.0, 1.0);
    Tensor noise = rand_t(rng, {2, 3});
    Tensor w = rand_t(rng, {2, 3});
    return grad_check(
        [&](Tape&, const Tensor& x) {
          return weigh(reparameterize({x, lv}, noise), w);
        },
        rand_t(rng, {2, 3}));
  }});
  cases.push_back({"kl_divergence", [](Rng& rng) {
    Tensor mu = rand_t(rng, {2, 3});
    return grad_check(
        [&](Tape&, const Tensor& x) { return kl_divergence({mu, x}); },
        rand_t(rng, {2, 3}, -2.0, 1.5));
  }});
  cases.push_back({"capsule_margin_loss", [](Rng& rng) {
    MarginLossConfig cfg;
    Tensor labels({4}, std::vector<double>{0, 1, 0, 0});
    return grad_check(
        [&](Tape&, const Tensor& x) {
          return capsule_margin_loss(x, labels, cfg);
        },
        rand_t(rng, {4}, 0.13, 0.87));
  }});
  cases.push_back({"hinge_loss", [](Rng& rng) {
    Tensor t({4}, std::vector<double>{1, -1, -1, 1});
    return grad_check([&](Tape&, const Tensor& x) { return hinge_loss(t, x); },
                      rand_t(rng, {4}, -0.8, 0.8));
  }});
  cases.push_back({"reconstruction_loss", [](Rng& rng) {
    Tensor img = rand_t(rng, {3, 3}, 0.0, 1.0);
    return grad_check(
        [&](Tape&, const Tensor& x) { return reconstruction_loss(x, img); },
        rand_t(rng, {3, 3}, 0.0, 1.0));
  }});
  cases.push_back({"total_loss_composite", [](Rng& rng) {
    // Eq. 7 assembled from raw pre-squash capsules through every loss term.
    MarginLossConfig mcfg;
    TotalLossConfig tcfg{0.5, 0.1, 0.0};
    Tensor labels({2}, std::vector<double>{1, 0});
    return grad_check(
        [&](Tape&, const Tensor& x) {
          GaussianCapsule g = split_mean_logvar(squash(x));
          Tensor norms = l2_norm(g.mu, 1);
          Tensor margin = capsule_margin_loss(norms, labels, mcfg);
          Tensor hinge =
              hinge_loss(labels_to_targets(labels), norms_to_scores(norms));
          return total_loss(hinge, margin, kl_divergence(g),
                            Tensor::scalar(0.0), tcfg);
        },
        rand_t(rng, {4, 3}));
  }});

  std::vector<OpGradReport> reports;
  Rng rng(seed);
  for (const Case& c : cases) {
    OpGradReport rep;
    rep.op = c.name;
    rep.instances = instances;
    for (int i = 0; i < instances; ++i) {
      GradCheckResult r = c.run(rng);
      rep.max_rel_error = std::max(rep.max_rel_error, r.max_rel_error);
      rep.skipped += static_cast<int>(r.skipped.size());
    }
    reports.push_back(std::move(rep));
  }
  return reports;
}

bool gradient_suite_passed(const std::vector<OpGradReport>& reports,
                           double tolerance) {
  for (const OpGradReport& r : reports)
    if (!(r.max_rel_error <= tolerance)) return false;
  return !reports.empty();
}

}  // namespace varcaps
