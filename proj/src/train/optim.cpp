#include "scpr/train/optim.hpp"

#include <cmath>

namespace scpr {

void AdamWConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("train.lr must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw ConfigError("AdamW betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("train.eps must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be non-negative");
}

template <typename T>
AdamW<T>::AdamW(ParameterSet<T>& params, const AdamWConfig& cfg) : params_(&params), cfg_(cfg) {
  cfg_.validate();
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params[i].value.shape());
    v_.emplace_back(params[i].value.shape());
  }
}

template <typename T>
double AdamW<T>::lr_at(std::size_t step) const noexcept {
  if (cfg_.warmup_steps == 0 || step >= cfg_.warmup_steps) return cfg_.lr;
  return cfg_.lr * static_cast<double>(step) / static_cast<double>(cfg_.warmup_steps);
}

template <typename T>
double AdamW<T>::step() {
  ParameterSet<T>& ps = *params_;
  if (ps.size() != m_.size()) throw ConsistencyError("parameter set changed after optimizer creation");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& g = ps[i].grad;
    if (!ps[i].trainable || g.empty()) continue;
    for (T x : g.values())
      if (!std::isfinite(static_cast<double>(x)))
        throw NumericError("non-finite gradient in parameter '" + ps[i].name + "'");
  }
  ++step_;
  const double lr = lr_at(step_);
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double decay = 1.0 - lr * cfg_.weight_decay;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Parameter<T>& p = ps[i];
    if (!p.trainable) continue;
    const bool has_grad = !p.grad.empty();
    T* w = p.value.data();
    T* m = m_[i].data();
    T* v = v_[i].data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = has_grad ? static_cast<double>(p.grad[j]) : 0.0;
      const double mj = b1 * m[j] + (1 - b1) * g;
      const double vj = b2 * v[j] + (1 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double upd = (mj / c1) / (std::sqrt(vj / c2) + cfg_.eps);
      w[j] = static_cast<T>(static_cast<double>(w[j]) * decay - lr * upd);
    }
  }
  return lr;
}

template <typename T>
double grad_norm(const ParameterSet<T>& params) {
  double s = 0;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (T g : params[i].grad.values()) s += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(s);
}

template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0 && norm > max_norm && std::isfinite(norm)) {
    const T scale = static_cast<T>(max_norm / norm);
    for (std::size_t i = 0; i < params.size(); ++i)
      for (T& g : params[i].grad.values()) g *= scale;
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;
template double grad_norm<float>(const ParameterSet<float>&);
template double grad_norm<double>(const ParameterSet<double>&);
template double clip_grad_norm<float>(ParameterSet<float>&, double);
template double clip_grad_norm<double>(ParameterSet<double>&, double);

}  // namespace scpr
