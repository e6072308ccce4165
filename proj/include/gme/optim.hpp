#pragma once

#include <cmath>
#include <functional>
#include <utility>

#include "gme/tensor.hpp"

namespace gme {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  Tensor m;
  Tensor v;
  long step = 0;

  AdamState() = default;
  AdamState(const Shape& shape, AdamConfig c) : cfg(c), m(shape), v(shape) {}
};

/// One bias-corrected Adam step, applied in place.
inline void adam_step(Tensor& param, const Tensor& grad, AdamState& st) {
  require_same_shape(param, grad, "adam_update");
  if (st.m.size() == 0) st = AdamState(param.shape(), st.cfg);
  require_same_shape(param, st.m, "adam_update state");
  ++st.step;
  const auto& c = st.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    st.m[i] = c.beta1 * st.m[i] + (1.0 - c.beta1) * g;
    st.v[i] = c.beta2 * st.v[i] + (1.0 - c.beta2) * g * g;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    param[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

/// Functional form: returns the updated parameter and state.
inline std::pair<Tensor, AdamState> adam_update(Tensor param, const Tensor& grad, AdamState state) {
  adam_step(param, grad, state);
  return {std::move(param), std::move(state)};
}

using ScalarFn = std::function<double(const Tensor&)>;
using GradFn = std::function<Tensor(const Tensor&)>;

/// Central-difference gradient, one coordinate at a time.
inline Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h = 1e-5) {
  if (!(h > 0.0)) throw contract_violation("finite_diff_grad: step must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) throw numeric_overflow("finite_diff_grad: non-finite value");
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double default_hvp_eps(const Tensor& point) { return 1e-4 * (1.0 + point.max_abs()); }

/// Hessian-vector product by central differences of the gradient along `v`.
inline Tensor hvp_fd(const GradFn& grad, const Tensor& point, const Tensor& v, double eps) {
  require_same_shape(point, v, "hvp_fd");
  if (!(eps > 0.0)) throw contract_violation("hvp_fd: eps must be positive");
  Tensor plus = point, minus = point;
  axpy(eps, v, plus);
  axpy(-eps, v, minus);
  const Tensor gp = grad(plus);
  const Tensor gm = grad(minus);
  Tensor out = gp - gm;
  for (auto& x : out.storage()) x /= 2.0 * eps;
  if (!out.all_finite()) throw numeric_overflow("hvp_fd: non-finite result");
  return out;
}

inline Tensor hvp_fd(const GradFn& grad, const Tensor& point, const Tensor& v) {
  return hvp_fd(grad, point, v, default_hvp_eps(point));
}

}  // namespace gme
