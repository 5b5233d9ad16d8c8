#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "lcret/numerics/graph.hpp"

namespace lcret {

struct LossConfig {
  double tau_dense = 0.01;
  double tau_mrl = 0.05;
  double tau_sparse = 0.01;
  double tau_rerank = 1.0;
  double lambda_sparse = 1.0;
  std::vector<std::size_t> mrl_dims;  // empty: every multiple of 32 up to H
  std::vector<double> mrl_weights;    // empty: all ones
  bool use_in_batch_negatives = true;

  /// Fills empty dims/weights for hidden size `hidden` and throws ConfigError
  /// on any violated invariant.
  void resolve(std::size_t hidden);
};

/// {32, 64, ..., H}.
std::vector<std::size_t> mrl_dims(std::size_t hidden);

/// -log softmax(all/tau)[pos]; `pos_score` must occur in `all_scores`.
double info_nce(double pos_score, std::span<const double> all_scores, double tau);

/// Which candidate columns each query may score against. Empty `own` means
/// every column (in-batch negatives); otherwise row i sees only columns
/// [own[i].first, own[i].second).
struct CandidateLayout {
  std::vector<std::size_t> positives;
  std::vector<std::pair<std::size_t, std::size_t>> own;
};

/// Mean over rows of -log softmax(scores[i]/tau)[positives[i]], restricted to
/// the row's allowed columns.
template <Real T>
Var info_nce_rows(Graph<T>& g, Var scores, const CandidateLayout& layout, double tau);

/// InfoNCE over cosine scores of length-normalised query (Q x H) and
/// document (N x H) rows.
template <Real T>
Var batch_dense_loss(Graph<T>& g, Var queries, Var docs, const CandidateLayout& layout, double tau);

/// sum_d w_d * batch_dense_loss on renormalised d-prefixes, tau = tau_mrl.
/// `config` must be resolved for the embedding width.
template <Real T>
Var mrl_loss(Graph<T>& g, Var queries, Var docs, const CandidateLayout& layout, const LossConfig& config);

/// InfoNCE over sparse scores q . d for dense-layout (rows x vocab) weight matrices.
template <Real T>
Var sparse_loss(Graph<T>& g, Var query_weights, Var doc_weights, const CandidateLayout& layout,
                const LossConfig& config);

/// lambda * sparse_loss + mrl_loss.
template <Real T>
Var trm_loss(Graph<T>& g, Var queries, Var docs, Var query_weights, Var doc_weights, const CandidateLayout& layout,
             const LossConfig& config);

/// Mean cross-entropy of `logits` (M x V) against `labels`; 0 when M = 0.
template <Real T>
Var mlm_loss(Graph<T>& g, Var logits, std::span<const std::int32_t> labels);

/// `scores` is groups x (1 + negatives) with the positive in column 0.
template <Real T>
Var rerank_loss(Graph<T>& g, Var scores, double tau);

inline constexpr std::size_t kRerankHardNegatives = 6;
inline constexpr std::size_t kRerankRandomNegatives = 4;

}  // namespace lcret
