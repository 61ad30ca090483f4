#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "scpr/model/language_model.hpp"
#include "scpr/train/batching.hpp"
#include "scpr/train/optim.hpp"

namespace scpr {

struct TrainConfig {
  AdamWConfig optim;
  std::size_t batch_size = 8;
  std::size_t steps = 1000;
  /// Longest token chunk taken from a corpus document.
  std::size_t seq_len = 64;
  std::uint64_t seed = 1;
  /// 0 writes a checkpoint only at the end.
  std::size_t checkpoint_every = 0;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;

  void validate() const;
  /// Continued-pretraining values: lr 1e-5, batch 4, sequence length 200.
  static TrainConfig paper_lm();
};

struct StepStats {
  std::size_t step = 0;
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;
};

/// Mean soft cross-entropy between each record's target and the model's
/// distribution at its answer row.
template <typename T>
Var<T> record_loss(Graph<T>& g, const LanguageModel<T>& lm, const RecordBatch& rb);

template <typename T>
class Trainer {
 public:
  /// Builds the loss of the batch for a 1-based step number.
  using BatchLoss = std::function<Var<T>(Graph<T>&, std::size_t step)>;
  using StepHook = std::function<void(const StepStats&)>;

  Trainer(LanguageModel<T>& lm, const TrainConfig& cfg);

  LanguageModel<T>& model() noexcept { return *lm_; }
  AdamW<T>& optimizer() noexcept { return optim_; }
  const TrainConfig& config() const noexcept { return cfg_; }

  /// One optimizer step. Throws NumericError when the loss or a gradient is
  /// not finite; the parameters are left unchanged in that case.
  StepStats step(const BatchLoss& loss);

  /// Steps until the optimizer has taken `last_step` steps.
  void run(const BatchLoss& loss, std::size_t last_step, const StepHook& hook = {});

 private:
  LanguageModel<T>* lm_;
  TrainConfig cfg_;
  AdamW<T> optim_;
};

/// Loss over uniformly sampled corpus sequences; batches depend only on
/// (seed, step).
template <typename T>
typename Trainer<T>::BatchLoss corpus_loss(const LanguageModel<T>& lm,
                                           const std::vector<std::vector<int>>& sequences,
                                           std::size_t batch_size, std::uint64_t seed);

template <typename T>
typename Trainer<T>::BatchLoss records_loss(const LanguageModel<T>& lm,
                                            const std::vector<EncodedRecord>& records,
                                            std::size_t batch_size, std::uint64_t seed);

}  // namespace scpr
