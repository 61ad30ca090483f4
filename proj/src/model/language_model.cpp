#include "scpr/model/language_model.hpp"

#include "scpr/core/ops.hpp"

namespace scpr {

template <typename T>
LanguageModel<T>::LanguageModel(const ModelConfig& model, const HeadConfig& head,
                                std::uint64_t seed) {
  head.validate(model);
  Rng rng(seed);
  body_ = std::make_unique<Transformer<T>>(model, params_, rng);
  head_ = std::make_unique<OutputHead<T>>(head, model, params_, rng);
}

template <typename T>
HeadInput<T> LanguageModel<T>::head_input(Graph<T>& g, const TokenBatch& batch) const {
  HeadInput<T> in;
  in.batch = &batch;
  in.states = body_->forward(g, batch);
  in.embedding = g.parameter(body_->output_embedding());
  return in;
}

template <typename T>
HeadOutput<T> LanguageModel<T>::forward(Graph<T>& g, const TokenBatch& batch) const {
  return head_->forward(g, head_input(g, batch));
}

template <typename T>
Var<T> LanguageModel<T>::loss(Graph<T>& g, const TokenBatch& batch) const {
  return ops::nll(forward(g, batch).log_probs, std::span<const int>(batch.targets));
}

template class LanguageModel<float>;
template class LanguageModel<double>;

}  // namespace scpr
