#pragma once

#include <cstddef>
#include <vector>

#include "scpr/core/graph.hpp"

namespace scpr {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 1.2e-6;
  /// Linear warmup from 0 over this many steps, constant afterwards.
  std::size_t warmup_steps = 1000;

  void validate() const;
};

/// AdamW with bias-corrected moments and decoupled weight decay.
template <typename T>
class AdamW {
 public:
  AdamW(ParameterSet<T>& params, const AdamWConfig& cfg);

  const AdamWConfig& config() const noexcept { return cfg_; }
  /// Learning rate used by step number `step` (1-based).
  double lr_at(std::size_t step) const noexcept;
  /// Steps taken so far.
  std::size_t step_count() const noexcept { return step_; }
  void set_step_count(std::size_t step) noexcept { step_ = step; }

  /// Applies one update from the current gradients and returns the learning
  /// rate used. Parameters without a gradient buffer count as zero gradient.
  /// Throws NumericError naming the first parameter with a non-finite
  /// gradient; nothing is modified in that case.
  double step();

  /// Moment buffers, one per parameter in ParameterSet order.
  std::vector<Tensor<T>>& first_moments() noexcept { return m_; }
  std::vector<Tensor<T>>& second_moments() noexcept { return v_; }
  const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }

 private:
  ParameterSet<T>* params_;
  AdamWConfig cfg_;
  std::size_t step_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

/// Global L2 norm of all gradients, before clipping.
template <typename T>
double grad_norm(const ParameterSet<T>& params);

/// Rescales gradients so their global norm is at most max_norm (0 disables).
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm);

}  // namespace scpr
