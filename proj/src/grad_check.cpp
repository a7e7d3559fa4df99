#include "varcaps/grad_check.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace varcaps {

namespace {

double eval_scalar(const ScalarFn& f, const Tensor& x, int coord) {
  double v;
  try {
    Tape tape;
    v = f(tape, tape.leaf(x)).value();
  } catch (const std::exception& e) {
    throw std::domain_error("grad_check: probe at coordinate " +
                            std::to_string(coord) + " failed: " + e.what());
  }
  if (!std::isfinite(v))
    throw std::domain_error("grad_check: non-finite value at coordinate " +
                            std::to_string(coord));
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  Tape tape;
  Tensor xx = tape.leaf(x);
  Tensor loss = f(tape, xx);
  const double f0 = loss.value();
  if (!std::isfinite(f0))
    throw std::domain_error("grad_check: non-finite value at base point");
  tape.backward(loss);
  const Array analytic = xx.grad();

  GradCheckResult res;
  for (int i = 0; i < x.numel(); ++i) {
    Array vp = x.array();
    vp[i] += eps;
    Array vm = x.array();
    vm[i] -= eps;
    const double fp = eval_scalar(f, Tensor(x.shape(), std::move(vp)), i);
    const double fm = eval_scalar(f, Tensor(x.shape(), std::move(vm)), i);

    // One-sided estimates disagreeing flags a kink between the probes; the
    // central difference is meaningless there.
    const double fwd = (fp - f0) / eps;
    const double bwd = (f0 - fm) / eps;
    if (std::fabs(fwd - bwd) >
        0.1 * std::max({1.0, std::fabs(fwd), std::fabs(bwd)})) {
      res.skipped.push_back(i);
      continue;
    }

    const double numeric = (fp - fm) / (2.0 * eps);
    const double rel = std::fabs(numeric - analytic[i]) /
                       std::max({std::fabs(numeric), std::fabs(analytic[i]),
                                 1e-8});
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_coord = i;
    }
  }
  return res;
}

}  // namespace varcaps
