#include "popavg/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace popavg {

double lr_at(const ScheduleSpec& s, int64_t step) {
  if (step < 0 || (s.total_steps > 0 && step > s.total_steps))
    throw std::runtime_error("lr_at: step out of range");
  switch (s.kind) {
    case ScheduleSpec::Kind::constant:
      return s.gamma0;
    case ScheduleSpec::Kind::cosine: {
      double frac = s.total_steps > 0 ? static_cast<double>(step) / s.total_steps : 0.0;
      return s.gamma_min + 0.5 * (s.gamma0 - s.gamma_min) * (1.0 + std::cos(M_PI * frac));
    }
    case ScheduleSpec::Kind::cosine_restarts: {
      if (s.period <= 0) throw std::runtime_error("cosine_restarts needs a period");
      double frac = static_cast<double>(step % s.period) / s.period;
      return s.gamma_min + 0.5 * (s.gamma0 - s.gamma_min) * (1.0 + std::cos(M_PI * frac));
    }
    case ScheduleSpec::Kind::multistep: {
      double g = s.gamma0;
      for (int64_t m : s.milestones)
        if (step >= m) g *= s.factor;
      return g;
    }
    case ScheduleSpec::Kind::linear: {
      double frac = s.total_steps > 0 ? static_cast<double>(step) / s.total_steps : 0.0;
      return s.gamma0 + frac * (s.gamma_min - s.gamma0);
    }
  }
  throw std::runtime_error("lr_at: unknown schedule kind");
}

OptimState OptimState::sgd(int64_t n, double momentum, double weight_decay) {
  OptimState st;
  st.kind = Kind::sgd;
  st.momentum = momentum;
  st.weight_decay = weight_decay;
  st.buf1 = VecXf::Zero(n);
  return st;
}

OptimState OptimState::adamw(int64_t n, double weight_decay, double beta1, double beta2,
                             double eps) {
  OptimState st;
  st.kind = Kind::adamw;
  st.weight_decay = weight_decay;
  st.beta1 = beta1;
  st.beta2 = beta2;
  st.eps = eps;
  st.buf1 = VecXf::Zero(n);
  st.buf2 = VecXf::Zero(n);
  return st;
}

void optim_step(VecXf& params, const VecXf& grads, OptimState& state, double gamma,
                const std::vector<uint8_t>& trainable) {
  if (params.size() != grads.size() || params.size() != state.buf1.size() ||
      static_cast<size_t>(params.size()) != trainable.size())
    throw std::runtime_error("optim_step: size mismatch");
  for (int64_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i])) throw std::runtime_error("optim_step: non-finite gradient");

  state.t += 1;
  if (state.kind == OptimState::Kind::sgd) {
    for (int64_t i = 0; i < params.size(); ++i) {
      if (!trainable[static_cast<size_t>(i)]) continue;
      double th = params[i];
      th -= gamma * state.weight_decay * th;
      double v = state.momentum * state.buf1[i] + grads[i];
      state.buf1[i] = static_cast<float>(v);
      params[i] = static_cast<float>(th - gamma * v);
    }
  } else {
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (int64_t i = 0; i < params.size(); ++i) {
      if (!trainable[static_cast<size_t>(i)]) continue;
      double th = params[i];
      th -= gamma * state.weight_decay * th;
      double m = state.beta1 * state.buf1[i] + (1.0 - state.beta1) * grads[i];
      double v = state.beta2 * state.buf2[i] +
                 (1.0 - state.beta2) * static_cast<double>(grads[i]) * grads[i];
      state.buf1[i] = static_cast<float>(m);
      state.buf2[i] = static_cast<float>(v);
      double mhat = m / bc1;
      double vhat = v / bc2;
      params[i] = static_cast<float>(th - gamma * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

void swa_accumulate(SwaState& swa, const VecXf& params) {
  if (swa.count == 0) {
    swa.mean = params.cast<double>();
    swa.count = 1;
    return;
  }
  if (swa.mean.size() != params.size())
    throw std::runtime_error("swa_accumulate: length mismatch");
  double n = static_cast<double>(swa.count);
  swa.mean = (n * swa.mean + params.cast<double>()) / (n + 1.0);
  swa.count += 1;
}

}  // namespace popavg
