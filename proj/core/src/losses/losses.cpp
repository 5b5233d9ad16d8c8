#include "lcret/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <string>

#include "lcret/encoder/config.hpp"

namespace lcret {

// Finite stand-in for -inf on excluded candidates; exp underflows to 0 exactly.
inline constexpr double kExcluded = -1e4;

std::vector<std::size_t> mrl_dims(std::size_t hidden) {
  if (hidden < 32) throw ConfigError("mrl dims: hidden size " + std::to_string(hidden) + " is below 32");
  std::vector<std::size_t> dims;
  for (std::size_t d = 32; d <= hidden; d += 32) dims.push_back(d);
  return dims;
}

void LossConfig::resolve(std::size_t hidden) {
  for (double tau : {tau_dense, tau_mrl, tau_sparse, tau_rerank}) {
    if (!(tau > 0.0)) throw ConfigError("loss config: temperatures must be positive");
  }
  if (!(lambda_sparse >= 0.0)) throw ConfigError("loss config: lambda_sparse must be non-negative");
  if (mrl_dims.empty()) mrl_dims = lcret::mrl_dims(hidden);
  if (mrl_weights.empty()) mrl_weights.assign(mrl_dims.size(), 1.0);
  if (mrl_weights.size() != mrl_dims.size()) throw ConfigError("loss config: one MRL weight per dimension");
  for (std::size_t i = 0; i < mrl_dims.size(); ++i) {
    const std::size_t d = mrl_dims[i];
    if (d == 0 || d % 32 != 0 || d > hidden) {
      throw ConfigError("loss config: MRL dimension " + std::to_string(d) + " is not a multiple of 32 within " +
                        std::to_string(hidden));
    }
    if (!(mrl_weights[i] > 0.0)) throw ConfigError("loss config: MRL weights must be positive");
  }
}

double info_nce(double pos_score, std::span<const double> all_scores, double tau) {
  if (all_scores.empty()) throw std::invalid_argument("info_nce: empty score list");
  if (!(tau > 0.0)) throw std::invalid_argument("info_nce: tau must be positive");
  if (std::find(all_scores.begin(), all_scores.end(), pos_score) == all_scores.end()) {
    throw std::invalid_argument("info_nce: positive score is not among the candidates");
  }
  const double top = *std::max_element(all_scores.begin(), all_scores.end()) / tau;
  double z = 0.0;
  for (double s : all_scores) z += std::exp(s / tau - top);
  return std::max(0.0, top + std::log(z) - pos_score / tau);
}

template <Real T>
Var info_nce_rows(Graph<T>& g, Var scores, const CandidateLayout& layout, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("info_nce: tau must be positive");
  const auto& s = g.value(scores);
  const std::size_t rows = s.rows(), cols = s.cols();
  if (layout.positives.size() != rows) {
    throw std::invalid_argument("info_nce: " + std::to_string(layout.positives.size()) + " positives for " +
                                std::to_string(rows) + " queries");
  }
  if (rows == 0) return g.constant(Tensor<T>::scalar(T{0}));
  for (std::size_t i = 0; i < rows; ++i) {
    if (layout.positives[i] >= cols) {
      throw std::out_of_range("info_nce: positive index " + std::to_string(layout.positives[i]) + " outside " +
                              std::to_string(cols) + " candidates");
    }
  }
  Var logits = g.scale(scores, static_cast<T>(1.0 / tau));
  if (!layout.own.empty()) {
    if (layout.own.size() != rows) throw std::invalid_argument("info_nce: one candidate range per query");
    Tensor<T> mask({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
      const auto [begin, end] = layout.own[i];
      if (begin > layout.positives[i] || layout.positives[i] >= end || end > cols) {
        throw std::out_of_range("info_nce: candidate range of query " + std::to_string(i) + " misses its positive");
      }
      for (std::size_t j = 0; j < cols; ++j) mask.at(i, j) = (j >= begin && j < end) ? T{0} : T(kExcluded);
    }
    logits = g.add(logits, g.constant(std::move(mask)));
  }
  return g.scale(g.mean(g.pick(g.log_softmax(logits), layout.positives)), T(-1));
}

template <Real T>
Var batch_dense_loss(Graph<T>& g, Var queries, Var docs, const CandidateLayout& layout, double tau) {
  if (g.value(queries).cols() != g.value(docs).cols()) throw ShapeError("dense loss: embedding widths differ");
  return info_nce_rows(g, g.matmul(queries, g.transpose(docs)), layout, tau);
}

template <Real T>
Var mrl_loss(Graph<T>& g, Var queries, Var docs, const CandidateLayout& layout, const LossConfig& config) {
  const std::size_t hidden = g.value(queries).cols();
  if (config.mrl_dims.empty() || config.mrl_dims.size() != config.mrl_weights.size()) {
    throw ConfigError("mrl loss: unresolved loss config");
  }
  Var total{};
  for (std::size_t i = 0; i < config.mrl_dims.size(); ++i) {
    const std::size_t d = config.mrl_dims[i];
    if (d > hidden) throw ConfigError("mrl loss: dimension " + std::to_string(d) + " exceeds " + std::to_string(hidden));
    Var q = g.l2_normalize(g.slice_cols(queries, 0, d));
    Var k = g.l2_normalize(g.slice_cols(docs, 0, d));
    Var term = g.scale(batch_dense_loss(g, q, k, layout, config.tau_mrl), static_cast<T>(config.mrl_weights[i]));
    total = total.valid() ? g.add(total, term) : term;
  }
  return total;
}

template <Real T>
Var sparse_loss(Graph<T>& g, Var query_weights, Var doc_weights, const CandidateLayout& layout,
                const LossConfig& config) {
  for (Var v : {query_weights, doc_weights}) {
    for (T w : g.value(v).values()) {
      if (w < T{0}) throw std::invalid_argument("sparse loss: negative term weight");
    }
  }
  if (g.value(query_weights).cols() != g.value(doc_weights).cols()) {
    throw ShapeError("sparse loss: vocabulary widths differ");
  }
  return info_nce_rows(g, g.matmul(query_weights, g.transpose(doc_weights)), layout, config.tau_sparse);
}

template <Real T>
Var trm_loss(Graph<T>& g, Var queries, Var docs, Var query_weights, Var doc_weights, const CandidateLayout& layout,
             const LossConfig& config) {
  Var dense = mrl_loss(g, queries, docs, layout, config);
  if (config.lambda_sparse == 0.0) return dense;
  Var sparse = sparse_loss(g, query_weights, doc_weights, layout, config);
  return g.add(dense, g.scale(sparse, static_cast<T>(config.lambda_sparse)));
}

template <Real T>
Var mlm_loss(Graph<T>& g, Var logits, std::span<const std::int32_t> labels) {
  const auto& l = g.value(logits);
  if (labels.size() != l.rows()) {
    throw std::invalid_argument("mlm loss: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(l.rows()) + " logit rows");
  }
  if (labels.empty()) {
    std::clog << "warning: mlm loss over zero masked positions is 0\n";
    return g.constant(Tensor<T>::scalar(T{0}));
  }
  std::vector<std::size_t> cols;
  for (auto id : labels) {
    if (id < 0 || static_cast<std::size_t>(id) >= l.cols()) {
      throw std::out_of_range("mlm loss: label " + std::to_string(id) + " outside vocabulary");
    }
    cols.push_back(static_cast<std::size_t>(id));
  }
  return g.scale(g.mean(g.pick(g.log_softmax(logits), cols)), T(-1));
}

template <Real T>
Var rerank_loss(Graph<T>& g, Var scores, double tau) {
  const std::size_t rows = g.value(scores).rows();
  return info_nce_rows(g, scores, CandidateLayout{std::vector<std::size_t>(rows, 0), {}}, tau);
}

#define LCRET_LOSSES(T)                                                                                          \
  template Var info_nce_rows<T>(Graph<T>&, Var, const CandidateLayout&, double);                                 \
  template Var batch_dense_loss<T>(Graph<T>&, Var, Var, const CandidateLayout&, double);                         \
  template Var mrl_loss<T>(Graph<T>&, Var, Var, const CandidateLayout&, const LossConfig&);                      \
  template Var sparse_loss<T>(Graph<T>&, Var, Var, const CandidateLayout&, const LossConfig&);                   \
  template Var trm_loss<T>(Graph<T>&, Var, Var, Var, Var, const CandidateLayout&, const LossConfig&);            \
  template Var mlm_loss<T>(Graph<T>&, Var, std::span<const std::int32_t>);                                       \
  template Var rerank_loss<T>(Graph<T>&, Var, double);

LCRET_LOSSES(float)
LCRET_LOSSES(double)

}  // namespace lcret
