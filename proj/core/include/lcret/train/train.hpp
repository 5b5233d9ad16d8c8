#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lcret/encoder/encoder.hpp"
#include "lcret/losses/losses.hpp"
#include "lcret/numerics/optimizer.hpp"
#include "lcret/pipeline/batching.hpp"
#include "lcret/pipeline/data.hpp"
#include "lcret/pipeline/sampling.hpp"
#include "lcret/pipeline/tokenizer.hpp"

namespace lcret {

enum class Stage { mlm_short, mlm_long, contrastive_pretrain, trm_finetune, rerank_finetune };

/// "mlm-short", "mlm-long", "contrastive-pretrain", "trm-finetune", "rerank-finetune".
std::string_view stage_name(Stage stage) noexcept;
/// Throws ConfigError on an unknown name.
Stage parse_stage(std::string_view name);
/// 10000, 160000 and 20000 for the two MLM stages and contrastive
/// pre-training; fine-tuning keeps the checkpoint's base (nullopt).
std::optional<double> default_rope_base(Stage stage) noexcept;
bool is_mlm(Stage stage) noexcept;

struct TrainOptions {
  std::size_t steps = 100;
  std::size_t batch_size = 8;
  std::size_t sub_batch_size = 0;  // 0 encodes the whole batch at once
  std::optional<BatchSchedule> schedule;  // fine-tuning; default: one bucket of batch_size

  std::size_t max_query_tokens = 64;
  std::size_t max_doc_tokens = 256;

  std::size_t chunk_tokens = 128;  // MLM sequence length
  std::size_t length_floor = 0;    // MLM: documents below it are down-sampled; 0 keeps all
  double short_keep_prob = kDefaultShortKeepProb;
  double mask_prob = kDefaultMaskProb;
  double sampling_alpha = kDefaultSamplingAlpha;

  std::size_t hard_negatives = kEmbeddingHardNegatives;
  std::size_t rerank_hard_negatives = kRerankHardNegatives;
  std::size_t rerank_random_negatives = kRerankRandomNegatives;

  AdamOptions adam;  // total_steps 0 is replaced by `steps`
  LossConfig loss;
  std::uint64_t seed = 0;
};

struct StepRecord {
  std::size_t step = 0;  // 1-based
  double loss = 0.0;
  double lr = 0.0;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Masked-language-model training over chunked documents. Batches come from
/// one language at a time, chosen by the smoothed multinomial.
template <Real T>
std::vector<StepRecord> train_mlm(Encoder<T>& encoder, const Tokenizer& tokenizer, const std::vector<Document>& docs,
                                  const TrainOptions& options, const StepCallback& on_step = {});

/// Dense [CLS] InfoNCE at tau_dense with in-batch negatives only; each batch
/// is drawn from a single (language, source) group.
template <Real T>
std::vector<StepRecord> train_contrastive(Encoder<T>& encoder, const Tokenizer& tokenizer,
                                          const std::vector<TrainingExample>& examples, const TrainOptions& options,
                                          const StepCallback& on_step = {});

/// Matryoshka dense plus sparse loss with `hard_negatives` per query and
/// in-batch negatives, over length-bucketed batches.
template <Real T>
std::vector<StepRecord> train_trm(Encoder<T>& encoder, const Tokenizer& tokenizer,
                                  const std::vector<TrainingExample>& examples, const TrainOptions& options,
                                  const StepCallback& on_step = {});

/// Cross-encoder groups of one positive, the first rerank_hard_negatives of
/// each example and rerank_random_negatives drawn from `random_pool` (every
/// text of `examples` when empty).
template <Real T>
std::vector<StepRecord> train_reranker(Encoder<T>& encoder, const Tokenizer& tokenizer,
                                       const std::vector<TrainingExample>& examples, const TrainOptions& options,
                                       std::span<const std::string> random_pool = {},
                                       const StepCallback& on_step = {});

/// Query and document token sequences of one embedding batch. Documents are
/// grouped per query: the positive first, then its negatives.
struct EmbeddingBatch {
  std::vector<std::vector<std::int32_t>> queries;
  std::vector<std::vector<std::int32_t>> docs;
  CandidateLayout layout;
};

enum class EmbeddingObjective { dense, trm };

EmbeddingBatch make_embedding_batch(const Tokenizer& tokenizer, std::span<const TrainingExample> examples,
                                    std::size_t negatives, std::size_t max_query_tokens, std::size_t max_doc_tokens);

/// Adds the batch loss gradient into the encoder's parameter gradients and
/// returns the loss. With 0 < sub_batch_size < sequence count, sequences are
/// encoded in sub-batches twice: once for the representations and once to
/// push their loss gradients through the encoder. `dropout_seed` seeds the
/// per-sub-batch dropout masks identically in both passes.
template <Real T>
double accumulate_embedding_grads(Encoder<T>& encoder, const EmbeddingBatch& batch, EmbeddingObjective objective,
                                  const LossConfig& loss, std::size_t sub_batch_size, bool training,
                                  std::uint64_t dropout_seed);

/// Fraction of queries whose positive has the strictly highest [CLS] cosine
/// among the positives of consecutive groups of `batch_size` examples.
template <Real T>
double in_batch_accuracy(const Encoder<T>& encoder, const Tokenizer& tokenizer,
                         const std::vector<TrainingExample>& examples, std::size_t batch_size,
                         std::size_t max_query_tokens, std::size_t max_doc_tokens);

/// "step,loss,lr" header then one row per step.
void write_loss_csv(std::ostream& out, std::span<const StepRecord> records);

}  // namespace lcret
