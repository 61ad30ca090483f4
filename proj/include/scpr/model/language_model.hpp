#pragma once

#include <cstdint>
#include <memory>

#include "scpr/heads/head.hpp"
#include "scpr/model/transformer.hpp"

namespace scpr {

/// A transformer body with one output head and the parameters of both.
template <typename T>
class LanguageModel {
 public:
  LanguageModel(const ModelConfig& model, const HeadConfig& head, std::uint64_t seed);
  LanguageModel(const LanguageModel&) = delete;
  LanguageModel& operator=(const LanguageModel&) = delete;

  const ModelConfig& model_config() const noexcept { return body_->config(); }
  const HeadConfig& head_config() const noexcept { return head_->config(); }
  ParameterSet<T>& params() noexcept { return params_; }
  const ParameterSet<T>& params() const noexcept { return params_; }
  const Transformer<T>& body() const noexcept { return *body_; }
  const OutputHead<T>& head() const noexcept { return *head_; }

  HeadInput<T> head_input(Graph<T>& g, const TokenBatch& batch) const;
  HeadOutput<T> forward(Graph<T>& g, const TokenBatch& batch) const;
  /// Mean NLL over rows whose target is not -1.
  Var<T> loss(Graph<T>& g, const TokenBatch& batch) const;

 private:
  ParameterSet<T> params_;
  std::unique_ptr<Transformer<T>> body_;
  std::unique_ptr<OutputHead<T>> head_;
};

}  // namespace scpr
