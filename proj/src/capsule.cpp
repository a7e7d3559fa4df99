#include "varcaps/capsule.hpp"

#include <cmath>
#include <stdexcept>

namespace varcaps {

namespace {
using Node = std::shared_ptr<detail::TensorNode>;
}

void CapsuleLayerSpec::validate() const {
  if (num_lower < 1 || num_higher < 1 || dim_lower < 1 || dim_higher < 1)
    throw std::invalid_argument("capsule layer: counts and widths must be >= 1");
  if (routing_iterations < 1)
    throw std::invalid_argument("capsule layer: routing_iterations must be >= 1");
}

void PrimaryStemSpec::validate() const {
  if (input_height < kernel || input_width < kernel)
    throw std::invalid_argument("stem: input smaller than kernel");
  if (channels < 1 || conv1_maps < 1 || feature_maps < 1 || capsule_dim < 1 ||
      num_primary < 1 || conv1_stride < 1 || conv2_stride < 1)
    throw std::invalid_argument("stem: all counts and strides must be >= 1");
  if (conv1_out_h() < kernel || conv1_out_w() < kernel)
    throw std::invalid_argument("stem: first convolution output smaller than kernel");
  const int cells = conv2_out_h() * conv2_out_w() * feature_maps;
  if (cells != num_primary * capsule_dim)
    throw std::invalid_argument(
        "stem: " + std::to_string(feature_maps) + " feature maps of " +
        std::to_string(conv2_out_h()) + "x" + std::to_string(conv2_out_w()) +
        " do not reshape into " + std::to_string(num_primary) +
        " capsules of dim " + std::to_string(capsule_dim));
}

Tensor squash(const Tensor& s) {
  if (s.rank() < 1)
    throw std::invalid_argument("squash: expected at least rank 1, got scalar");
  const int dim = s.shape().back();
  const Eigen::Index slices = s.numel() / dim;

  const Array& x = s.array();
  Array out(s.numel());
  for (Eigen::Index sl = 0; sl < slices; ++sl) {
    const Eigen::Index base = sl * dim;
    double ss = 0.0;
    for (int k = 0; k < dim; ++k) ss += x[base + k] * x[base + k];
    // v = s * |s| / (1 + |s|^2); exactly zero at s = 0.
    const double norm = std::sqrt(ss);
    const double f = norm / (1.0 + ss);
    for (int k = 0; k < dim; ++k) out[base + k] = x[base + k] * f;
  }

  Tape* tape = recording_tape({&s});
  Tensor r = make_result("squash", s.shape(), std::move(out), tape);
  if (tape) {
    Node sn = s.node(), rn = r.node();
    tape->record({s}, r, [sn, rn, dim, slices] {
      if (!sn->requires_grad) return;
      const Array& x = sn->values;
      const Array& dv = rn->grad;
      for (Eigen::Index sl = 0; sl < slices; ++sl) {
        const Eigen::Index base = sl * dim;
        double ss = 0.0, gdot = 0.0;
        for (int k = 0; k < dim; ++k) {
          ss += x[base + k] * x[base + k];
          gdot += dv[base + k] * x[base + k];
        }
        if (ss == 0.0) continue;  // subgradient 0 at the zero vector
        const double norm = std::sqrt(ss);
        const double f = norm / (1.0 + ss);
        // d v_a / d s_b = f * delta_ab + (f'(|s|)/|s|) s_a s_b with
        // f'(n) = (1 - n^2) / (1 + n^2)^2.
        const double fp = (1.0 - ss) / ((1.0 + ss) * (1.0 + ss));
        const double coef = fp / norm * gdot;
        for (int k = 0; k < dim; ++k)
          sn->grad[base + k] += f * dv[base + k] + coef * x[base + k];
      }
    });
  }
  return r;
}

Tensor predict(const Tensor& u, const TransformWeights& weights) {
  const Tensor& w = weights.w;
  if (w.rank() != 4 || u.rank() != 2)
    throw std::invalid_argument(
        "predict: expected W [lower,higher,dim_h,dim_l] and u [lower,dim_l], "
        "got " + shape_str(w.shape()) + " and " + shape_str(u.shape()));
  const int nl = w.shape()[0], nh = w.shape()[1];
  const int dh = w.shape()[2], dl = w.shape()[3];
  if (u.shape()[0] != nl || u.shape()[1] != dl)
    throw std::invalid_argument("predict: u " + shape_str(u.shape()) +
                                " does not match W " + shape_str(w.shape()));

  const double* wp = w.array().data();
  const double* up = u.array().data();
  Array out(static_cast<Eigen::Index>(nl) * nh * dh);
  for (int i = 0; i < nl; ++i)
    for (int j = 0; j < nh; ++j)
      for (int a = 0; a < dh; ++a) {
        const double* wrow = wp + ((static_cast<long>(i) * nh + j) * dh + a) * dl;
        const double* urow = up + static_cast<long>(i) * dl;
        double acc = 0.0;
        for (int b = 0; b < dl; ++b) acc += wrow[b] * urow[b];
        out[(static_cast<Eigen::Index>(i) * nh + j) * dh + a] = acc;
      }

  Tape* tape = recording_tape({&u, &w});
  Tensor r = make_result("predict", {nl, nh, dh}, std::move(out), tape);
  if (tape) {
    Node un = u.node(), wn = w.node(), rn = r.node();
    tape->record({u, w}, r, [un, wn, rn, nl, nh, dh, dl] {
      const double* wp = wn->values.data();
      const double* up = un->values.data();
      const double* g = rn->grad.data();
      for (int i = 0; i < nl; ++i)
        for (int j = 0; j < nh; ++j)
          for (int a = 0; a < dh; ++a) {
            const double ga = g[(static_cast<long>(i) * nh + j) * dh + a];
            const long woff = ((static_cast<long>(i) * nh + j) * dh + a) * dl;
            for (int b = 0; b < dl; ++b) {
              if (wn->requires_grad)
                wn->grad[woff + b] += ga * up[static_cast<long>(i) * dl + b];
              if (un->requires_grad)
                un->grad[static_cast<long>(i) * dl + b] += ga * wp[woff + b];
            }
          }
    });
  }
  return r;
}

Tensor agreement(const Tensor& u_hat_ij, const Tensor& v_j) {
  require_same_shape("agreement", u_hat_ij, v_j);
  return dot(u_hat_ij, v_j);
}

Tensor coupling_sum(const Tensor& c, const Tensor& u_hat) {
  if (c.rank() != 2 || u_hat.rank() != 3 || c.shape()[0] != u_hat.shape()[0] ||
      c.shape()[1] != u_hat.shape()[1])
    throw std::invalid_argument("coupling_sum: c " + shape_str(c.shape()) +
                                " does not match u_hat " +
                                shape_str(u_hat.shape()));
  const int nl = c.shape()[0], nh = c.shape()[1], dh = u_hat.shape()[2];

  const double* cp = c.array().data();
  const double* up = u_hat.array().data();
  Array out = Array::Zero(static_cast<Eigen::Index>(nh) * dh);
  for (int i = 0; i < nl; ++i)
    for (int j = 0; j < nh; ++j) {
      const double cij = cp[static_cast<long>(i) * nh + j];
      const double* urow = up + (static_cast<long>(i) * nh + j) * dh;
      for (int a = 0; a < dh; ++a) out[static_cast<Eigen::Index>(j) * dh + a] += cij * urow[a];
    }

  Tape* tape = recording_tape({&c, &u_hat});
  Tensor r = make_result("coupling_sum", {nh, dh}, std::move(out), tape);
  if (tape) {
    Node cn = c.node(), un = u_hat.node(), rn = r.node();
    tape->record({c, u_hat}, r, [cn, un, rn, nl, nh, dh] {
      const double* cp = cn->values.data();
      const double* up = un->values.data();
      const double* g = rn->grad.data();
      for (int i = 0; i < nl; ++i)
        for (int j = 0; j < nh; ++j) {
          const long uoff = (static_cast<long>(i) * nh + j) * dh;
          const long soff = static_cast<long>(j) * dh;
          if (cn->requires_grad) {
            double acc = 0.0;
            for (int a = 0; a < dh; ++a) acc += g[soff + a] * up[uoff + a];
            cn->grad[static_cast<long>(i) * nh + j] += acc;
          }
          if (un->requires_grad) {
            const double cij = cp[static_cast<long>(i) * nh + j];
            for (int a = 0; a < dh; ++a) un->grad[uoff + a] += cij * g[soff + a];
          }
        }
    });
  }
  return r;
}

Tensor pairwise_agreement(const Tensor& u_hat, const Tensor& v) {
  if (u_hat.rank() != 3 || v.rank() != 2 || u_hat.shape()[1] != v.shape()[0] ||
      u_hat.shape()[2] != v.shape()[1])
    throw std::invalid_argument("pairwise_agreement: u_hat " +
                                shape_str(u_hat.shape()) + " does not match v " +
                                shape_str(v.shape()));
  const int nl = u_hat.shape()[0], nh = u_hat.shape()[1], dh = u_hat.shape()[2];

  const double* up = u_hat.array().data();
  const double* vp = v.array().data();
  Array out(static_cast<Eigen::Index>(nl) * nh);
  for (int i = 0; i < nl; ++i)
    for (int j = 0; j < nh; ++j) {
      const double* urow = up + (static_cast<long>(i) * nh + j) * dh;
      const double* vrow = vp + static_cast<long>(j) * dh;
      double acc = 0.0;
      for (int a = 0; a < dh; ++a) acc += urow[a] * vrow[a];
      out[static_cast<Eigen::Index>(i) * nh + j] = acc;
    }

  Tape* tape = recording_tape({&u_hat, &v});
  Tensor r = make_result("pairwise_agreement", {nl, nh}, std::move(out), tape);
  if (tape) {
    Node un = u_hat.node(), vn = v.node(), rn = r.node();
    tape->record({u_hat, v}, r, [un, vn, rn, nl, nh, dh] {
      const double* up = un->values.data();
      const double* vp = vn->values.data();
      const double* g = rn->grad.data();
      for (int i = 0; i < nl; ++i)
        for (int j = 0; j < nh; ++j) {
          const double gij = g[static_cast<long>(i) * nh + j];
          const long uoff = (static_cast<long>(i) * nh + j) * dh;
          const long voff = static_cast<long>(j) * dh;
          for (int a = 0; a < dh; ++a) {
            if (un->requires_grad) un->grad[uoff + a] += gij * vp[voff + a];
            if (vn->requires_grad) vn->grad[voff + a] += gij * up[uoff + a];
          }
        }
    });
  }
  return r;
}

RoutingState routing_iteration(const RoutingState& state) {
  RoutingState next;
  next.u_hat = state.u_hat;
  next.c = softmax(state.b, 1);
  next.s = coupling_sum(next.c, state.u_hat);
  next.v = squash(next.s);
  next.b = add(state.b, pairwise_agreement(state.u_hat, next.v));
  return next;
}

std::pair<Tensor, Tensor> dynamic_routing(const Tensor& u_hat,
                                          const CapsuleLayerSpec& spec) {
  spec.validate();
  if (u_hat.rank() != 3 || u_hat.shape()[0] != spec.num_lower ||
      u_hat.shape()[1] != spec.num_higher || u_hat.shape()[2] != spec.dim_higher)
    throw std::invalid_argument("dynamic_routing: u_hat " +
                                shape_str(u_hat.shape()) +
                                " does not match the layer spec");
  RoutingState state;
  state.u_hat = u_hat;
  state.b = Tensor::zeros({spec.num_lower, spec.num_higher});
  for (int it = 0; it < spec.routing_iterations; ++it)
    state = routing_iteration(state);
  return {state.v, state.c};
}

Tensor primary_capsules(const Tensor& image, const PrimaryStemSpec& stem,
                        const StemParams& params) {
  stem.validate();
  if (image.rank() != 3 || image.shape()[0] != stem.input_height ||
      image.shape()[1] != stem.input_width || image.shape()[2] != stem.channels)
    throw std::invalid_argument("primary_capsules: image " +
                                shape_str(image.shape()) +
                                " does not match the stem spec");
  Tensor h1 = relu(conv2d(image, params.conv1_w, params.conv1_b, stem.conv1_stride));
  Tensor h2 = conv2d(h1, params.conv2_w, params.conv2_b, stem.conv2_stride);
  Tensor u = reshape(h2, {stem.num_primary, stem.capsule_dim});
  return squash(u);
}

}  // namespace varcaps
