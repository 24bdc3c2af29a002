#pragma once

#include <cmath>
#include <span>

#include "unimc/numerics/parameter.hpp"

namespace unimc::numerics {

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update followed by zeroing the gradients. If any
/// gradient is non-finite nothing is updated and NumericError is thrown.
template <class T>
void adam_step(std::span<Parameter<T>* const> params, const AdamConfig& cfg) {
  for (const Parameter<T>* p : params) {
    if (!p->grad.all_finite()) {
      throw NumericError("adam: non-finite gradient in parameter " + p->name + ", step aborted");
    }
  }
  for (Parameter<T>* p : params) {
    ++p->step_count;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(p->step_count));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(p->step_count));
    const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const T g = p->grad[i];
      T& m = p->adam_m[i];
      T& v = p->adam_v[i];
      m = b1 * m + (T(1) - b1) * g;
      v = b2 * v + (T(1) - b2) * g * g;
      const double mhat = double(m) / bc1;
      const double vhat = double(v) / bc2;
      p->value[i] -= T(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
    p->zero_grad();
  }
}

template <class T>
void adam_step(ParameterStore<T>& store, const AdamConfig& cfg) {
  auto all = store.all();
  adam_step<T>(std::span<Parameter<T>* const>(all), cfg);
}

}  // namespace unimc::numerics
