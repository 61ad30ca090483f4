#include "scpr/train/trainer.hpp"

#include <cmath>

#include "scpr/core/ops.hpp"

namespace scpr {

void TrainConfig::validate() const {
  optim.validate();
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (steps == 0) throw ConfigError("train.steps must be positive");
  if (seq_len == 0) throw ConfigError("train.seq_len must be positive");
  if (optim.warmup_steps > steps)
    throw ConfigError("train.warmup_steps (" + std::to_string(optim.warmup_steps) +
                      ") exceeds train.steps (" + std::to_string(steps) + ")");
  if (clip_norm < 0) throw ConfigError("train.clip_norm must be non-negative");
}

TrainConfig TrainConfig::paper_lm() {
  TrainConfig c;
  c.optim.lr = 1e-5;
  c.batch_size = 4;
  c.seq_len = 200;
  return c;
}

template <typename T>
Var<T> record_loss(Graph<T>& g, const LanguageModel<T>& lm, const RecordBatch& rb) {
  const std::size_t vocab = lm.model_config().vocab_size;
  Tensor<T> target = Tensor<T>::matrix(rb.answer_rows.size(), vocab);
  for (std::size_t i = 0; i < rb.records.size(); ++i)
    for (const auto& [id, p] : rb.records[i]->target) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab) throw IndexError("target id outside vocabulary");
      target.at(i, static_cast<std::size_t>(id)) += static_cast<T>(p);
    }
  Var<T> lp = lm.forward(g, rb.batch).log_probs;
  return ops::soft_cross_entropy(ops::gather_rows(lp, std::span<const int>(rb.answer_rows)), target);
}

template <typename T>
Trainer<T>::Trainer(LanguageModel<T>& lm, const TrainConfig& cfg)
    : lm_(&lm), cfg_(cfg), optim_(lm.params(), cfg.optim) {
  cfg_.validate();
}

template <typename T>
StepStats Trainer<T>::step(const BatchLoss& loss) {
  StepStats s;
  s.step = optim_.step_count() + 1;
  ParameterSet<T>& ps = lm_->params();
  ps.zero_grad();
  {
    Graph<T> g;
    Var<T> l = loss(g, s.step);
    s.loss = static_cast<double>(l.value()[0]);
    if (!std::isfinite(s.loss)) throw NumericError("loss is not finite at step " + std::to_string(s.step));
    g.backward(l);
  }
  s.grad_norm = grad_norm(ps);
  if (!std::isfinite(s.grad_norm)) {
    optim_.step();  // throws, naming the offending parameter
  }
  clip_grad_norm(ps, cfg_.clip_norm);
  s.lr = optim_.step();
  return s;
}

template <typename T>
void Trainer<T>::run(const BatchLoss& loss, std::size_t last_step, const StepHook& hook) {
  while (optim_.step_count() < last_step) {
    const StepStats s = step(loss);
    if (hook) hook(s);
  }
}

template <typename T>
typename Trainer<T>::BatchLoss corpus_loss(const LanguageModel<T>& lm,
                                           const std::vector<std::vector<int>>& sequences,
                                           std::size_t batch_size, std::uint64_t seed) {
  return [&lm, &sequences, batch_size, seed](Graph<T>& g, std::size_t step) {
    const auto picks = sample_indices(sequences.size(), batch_size, seed, step);
    const TokenBatch b = make_lm_batch(sequences, picks);
    return lm.loss(g, b);
  };
}

template <typename T>
typename Trainer<T>::BatchLoss records_loss(const LanguageModel<T>& lm,
                                            const std::vector<EncodedRecord>& records,
                                            std::size_t batch_size, std::uint64_t seed) {
  return [&lm, &records, batch_size, seed](Graph<T>& g, std::size_t step) {
    const auto picks = sample_indices(records.size(), batch_size, seed, step);
    const RecordBatch rb = make_record_batch(records, picks);
    return record_loss(g, lm, rb);
  };
}

#define SCPR_INSTANTIATE_TRAIN(T)                                                              \
  template class Trainer<T>;                                                                   \
  template Var<T> record_loss<T>(Graph<T>&, const LanguageModel<T>&, const RecordBatch&);     \
  template Trainer<T>::BatchLoss corpus_loss<T>(const LanguageModel<T>&,                       \
                                                const std::vector<std::vector<int>>&,          \
                                                std::size_t, std::uint64_t);                   \
  template Trainer<T>::BatchLoss records_loss<T>(const LanguageModel<T>&,                      \
                                                 const std::vector<EncodedRecord>&,            \
                                                 std::size_t, std::uint64_t);

SCPR_INSTANTIATE_TRAIN(float)
SCPR_INSTANTIATE_TRAIN(double)

#undef SCPR_INSTANTIATE_TRAIN

}  // namespace scpr
