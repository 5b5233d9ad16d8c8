#include "lcret/train/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

#include "lcret/evalkit/evalkit.hpp"
#include "lcret/repr/repr.hpp"

namespace lcret {
namespace {

enum class Rep { dense, trm, rerank };

constexpr std::uint64_t kSeedStride = 0x9E3779B97F4A7C15ULL;

template <Real T>
Adam<T> make_adam(const TrainOptions& options) {
  AdamOptions adam = options.adam;
  if (adam.total_steps == 0) adam.total_steps = options.steps;
  return Adam<T>(adam);
}

UnpaddedBatch batch_of(std::span<const std::vector<std::int32_t>> seqs) {
  UnpaddedBatch b;
  for (const auto& s : seqs) b.append(s);
  return b;
}

template <Real T>
Var represent(Graph<T>& g, Encoder<T>& encoder, const UnpaddedBatch& batch, Rep kind, const ForwardOptions& fo) {
  const auto vars = encoder.forward(g, batch, fo);
  switch (kind) {
    case Rep::dense:
      return vars.cls;
    case Rep::trm: {
      const auto ids = sparse_ids(batch.tokens);
      const Var weights = g.relu(g.matmul(vars.tokens, g.param(encoder.sparse_weight())));
      const Var sparse = g.segment_max(weights, std::span<const std::int32_t>(ids),
                                       std::span<const std::size_t>(batch.cu_seqlens), encoder.config().vocab_size);
      const Var parts[] = {vars.cls, sparse};
      return g.concat_cols(parts);
    }
    case Rep::rerank:
      return g.matmul(vars.cls, g.param(encoder.rerank_weight()));
  }
  throw std::logic_error("represent: unknown kind");
}

/// Loss over the representation rows of `seqs`, gradients added into the
/// encoder parameters; sub-batched encodes recompute each sub-batch.
template <Real T, class LossFn>
double accumulate(Encoder<T>& encoder, const std::vector<std::vector<std::int32_t>>& seqs, Rep kind,
                  LossFn&& loss_fn, std::size_t sub_batch, bool training, std::uint64_t seed) {
  const std::size_t n = seqs.size();
  if (n == 0) throw std::invalid_argument("accumulate: empty batch");
  const std::size_t chunk = sub_batch == 0 || sub_batch >= n ? n : sub_batch;
  const std::size_t chunks = (n + chunk - 1) / chunk;
  auto encode_chunk = [&](Graph<T>& g, std::size_t c) {
    const std::size_t begin = c * chunk, end = std::min(n, begin + chunk);
    std::mt19937_64 rng(seed + kSeedStride * (c + 1));
    ForwardOptions fo;
    fo.training = training;
    fo.rng = &rng;
    return represent(g, encoder, batch_of(std::span(seqs).subspan(begin, end - begin)), kind, fo);
  };

  if (chunks == 1) {
    Graph<T> g;
    const Var loss = loss_fn(g, encode_chunk(g, 0));
    const double value = g.value(loss).item();
    g.backward(loss);
    return value;
  }

  std::vector<T> rows;
  std::size_t width = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    Graph<T> g;
    const auto& v = g.value(encode_chunk(g, c));
    width = v.cols();
    rows.insert(rows.end(), v.values().begin(), v.values().end());
  }
  Graph<T> head;
  const Var reps = head.input(Tensor<T>({n, width}, std::move(rows)));
  const Var loss = loss_fn(head, reps);
  const double value = head.value(loss).item();
  head.backward(loss);
  const auto grad = head.grad(reps);

  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t begin = c * chunk, end = std::min(n, begin + chunk);
    Graph<T> g;
    const Var rep = encode_chunk(g, c);
    Tensor<T> upstream({end - begin, width},
                       std::vector<T>(grad.begin() + static_cast<std::ptrdiff_t>(begin * width),
                                      grad.begin() + static_cast<std::ptrdiff_t>(end * width)));
    g.backward(g.sum(g.mul(rep, g.constant(std::move(upstream)))));
  }
  return value;
}

template <Real T>
double embedding_step(Encoder<T>& encoder, const EmbeddingBatch& batch, EmbeddingObjective objective,
                      const LossConfig& loss, std::size_t sub_batch, bool training, std::uint64_t seed) {
  const std::size_t q = batch.queries.size();
  std::vector<std::vector<std::int32_t>> seqs = batch.queries;
  seqs.insert(seqs.end(), batch.docs.begin(), batch.docs.end());
  const std::size_t n = seqs.size(), hidden = encoder.config().hidden_size;
  if (objective == EmbeddingObjective::dense) {
    return accumulate(
        encoder, seqs, Rep::dense,
        [&](Graph<T>& g, Var reps) {
          return batch_dense_loss(g, g.l2_normalize(g.slice_rows(reps, 0, q)), g.l2_normalize(g.slice_rows(reps, q, n)),
                                  batch.layout, loss.tau_dense);
        },
        sub_batch, training, seed);
  }
  const std::size_t width = hidden + encoder.config().vocab_size;
  return accumulate(
      encoder, seqs, Rep::trm,
      [&](Graph<T>& g, Var reps) {
        const Var qs = g.slice_rows(reps, 0, q), ds = g.slice_rows(reps, q, n);
        return trm_loss(g, g.slice_cols(qs, 0, hidden), g.slice_cols(ds, 0, hidden), g.slice_cols(qs, hidden, width),
                        g.slice_cols(ds, hidden, width), batch.layout, loss);
      },
      sub_batch, training, seed);
}

std::string example_name(std::size_t i) { return "example " + std::to_string(i); }

/// Shuffled, length-bucketed batches, cycled until `steps` batches are produced.
class FineTuneBatches {
 public:
  FineTuneBatches(std::vector<std::size_t> lengths, BatchSchedule schedule, std::uint64_t seed)
      : lengths_(std::move(lengths)), schedule_(std::move(schedule)), rng_(seed) {
    schedule_.validate();
    for (std::size_t i = 0; i < lengths_.size(); ++i) names_.push_back(example_name(i));
  }

  DynamicBatch next() {
    if (cursor_ == pending_.size()) refill();
    return pending_[cursor_++];
  }

 private:
  void refill() {
    std::vector<std::size_t> order(lengths_.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    std::vector<std::size_t> lengths;
    std::vector<std::string> names;
    for (auto i : order) {
      lengths.push_back(lengths_[i]);
      names.push_back(names_[i]);
    }
    pending_ = dynamic_batches(lengths, names, schedule_);
    for (auto& b : pending_) {
      for (auto& e : b.examples) e = order[e];
    }
    std::shuffle(pending_.begin(), pending_.end(), rng_);
    cursor_ = 0;
    if (pending_.empty()) throw std::invalid_argument("fine-tuning: no examples");
  }

  std::vector<std::size_t> lengths_;
  std::vector<std::string> names_;
  BatchSchedule schedule_;
  std::mt19937_64 rng_;
  std::vector<DynamicBatch> pending_;
  std::size_t cursor_ = 0;
};

BatchSchedule schedule_for(const TrainOptions& options) {
  if (options.schedule) return *options.schedule;
  const std::size_t sub = options.sub_batch_size == 0 ? std::numeric_limits<std::size_t>::max() : options.sub_batch_size;
  return BatchSchedule::fixed(std::numeric_limits<std::size_t>::max(), options.batch_size, sub);
}

std::uint64_t step_seed(const TrainOptions& options, std::size_t step) { return options.seed ^ (kSeedStride * step); }

template <Real T>
StepRecord finish_step(Adam<T>& adam, Encoder<T>& encoder, std::size_t step, double loss, const StepCallback& cb) {
  if (!std::isfinite(loss)) throw NumericError("training: non-finite loss at step " + std::to_string(step));
  adam.step(encoder.params());
  const StepRecord r{step, loss, adam.current_lr()};
  if (cb) cb(r);
  return r;
}

void require_steps(const TrainOptions& options) {
  if (options.steps == 0 || options.batch_size == 0) throw ConfigError("training: steps and batch_size must be positive");
}

}  // namespace

std::string_view stage_name(Stage stage) noexcept {
  switch (stage) {
    case Stage::mlm_short: return "mlm-short";
    case Stage::mlm_long: return "mlm-long";
    case Stage::contrastive_pretrain: return "contrastive-pretrain";
    case Stage::trm_finetune: return "trm-finetune";
    case Stage::rerank_finetune: return "rerank-finetune";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : {Stage::mlm_short, Stage::mlm_long, Stage::contrastive_pretrain, Stage::trm_finetune,
                  Stage::rerank_finetune}) {
    if (stage_name(s) == name) return s;
  }
  throw ConfigError("unknown stage '" + std::string(name) +
                    "' (mlm-short, mlm-long, contrastive-pretrain, trm-finetune, rerank-finetune)");
}

std::optional<double> default_rope_base(Stage stage) noexcept {
  switch (stage) {
    case Stage::mlm_short: return 10000.0;
    case Stage::mlm_long: return 160000.0;
    case Stage::contrastive_pretrain: return 20000.0;
    default: return std::nullopt;
  }
}

bool is_mlm(Stage stage) noexcept { return stage == Stage::mlm_short || stage == Stage::mlm_long; }

EmbeddingBatch make_embedding_batch(const Tokenizer& tokenizer, std::span<const TrainingExample> examples,
                                    std::size_t negatives, std::size_t max_query_tokens, std::size_t max_doc_tokens) {
  EmbeddingBatch b;
  for (const auto& ex : examples) {
    if (ex.negatives.size() < negatives) {
      throw DataError("training example for query '" + ex.query + "' has " + std::to_string(ex.negatives.size()) +
                      " negatives, needs " + std::to_string(negatives));
    }
    b.layout.positives.push_back(b.docs.size());
    b.queries.push_back(encode_text(tokenizer, ex.query, max_query_tokens));
    b.docs.push_back(encode_text(tokenizer, ex.positive, max_doc_tokens));
    for (std::size_t j = 0; j < negatives; ++j) b.docs.push_back(encode_text(tokenizer, ex.negatives[j], max_doc_tokens));
  }
  return b;
}

template <Real T>
double accumulate_embedding_grads(Encoder<T>& encoder, const EmbeddingBatch& batch, EmbeddingObjective objective,
                                  const LossConfig& loss, std::size_t sub_batch_size, bool training,
                                  std::uint64_t dropout_seed) {
  LossConfig resolved = loss;
  resolved.resolve(encoder.config().hidden_size);
  return embedding_step(encoder, batch, objective, resolved, sub_batch_size, training, dropout_seed);
}

template <Real T>
std::vector<StepRecord> train_mlm(Encoder<T>& encoder, const Tokenizer& tokenizer, const std::vector<Document>& docs,
                                  const TrainOptions& options, const StepCallback& on_step) {
  require_steps(options);
  if (options.chunk_tokens < 2) throw ConfigError("train_mlm: chunk_tokens must be at least 2");
  const auto sources = group_by_language(docs);
  std::vector<std::vector<std::vector<std::int32_t>>> chunks(sources.size());
  for (std::size_t s = 0; s < sources.size(); ++s) {
    std::vector<std::vector<std::int32_t>> ids;
    std::vector<std::size_t> lengths;
    for (const auto& d : sources[s].documents) {
      ids.push_back(tokenizer.tokenize(d.text));
      lengths.push_back(ids.back().size());
    }
    std::vector<std::size_t> keep(ids.size());
    std::iota(keep.begin(), keep.end(), 0);
    if (options.length_floor > 0) {
      keep = downsample_short(lengths, options.length_floor, options.short_keep_prob, options.seed + s);
    }
    for (auto i : keep) {
      for (auto& piece : chunk(ids[i], options.chunk_tokens - 1)) {
        piece.insert(piece.begin(), kClsId);
        chunks[s].push_back(std::move(piece));
      }
    }
  }
  std::vector<std::size_t> sizes;
  for (const auto& c : chunks) sizes.push_back(c.size());
  const auto counts = source_counts(sources, SourceWeighting::documents);
  BatchSampler sampler(sizes, language_sampling_probs(counts, options.sampling_alpha), options.seed);
  std::mt19937_64 rng(options.seed + 1);
  auto adam = make_adam<T>(options);
  std::vector<StepRecord> log;
  for (std::size_t step = 1; step <= options.steps; ++step) {
    const auto drawn = sampler.next(options.batch_size);
    std::vector<std::vector<std::int32_t>> seqs;
    for (auto i : drawn.items) seqs.push_back(chunks[drawn.source][i]);
    UnpaddedBatch batch = batch_of(seqs);
    auto masked = mlm_mask(batch, options.mask_prob, tokenizer.used_ids(), rng);
    batch.tokens = masked.ids;
    Graph<T> g;
    ForwardOptions fo;
    fo.training = true;
    fo.rng = &rng;
    const auto vars = encoder.forward(g, batch, fo);
    const Var loss = mlm_loss(g, encoder.mlm_logits(g, vars.tokens, masked.positions),
                              std::span<const std::int32_t>(masked.labels));
    const double value = g.value(loss).item();
    g.backward(loss);
    log.push_back(finish_step(adam, encoder, step, value, on_step));
  }
  return log;
}

template <Real T>
std::vector<StepRecord> train_contrastive(Encoder<T>& encoder, const Tokenizer& tokenizer,
                                          const std::vector<TrainingExample>& examples, const TrainOptions& options,
                                          const StepCallback& on_step) {
  require_steps(options);
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < examples.size(); ++i) groups[{examples[i].lang, examples[i].source}].push_back(i);
  if (groups.empty()) throw std::invalid_argument("train_contrastive: no examples");
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::size_t> sizes;
  std::vector<double> counts;
  for (auto& [key, idx] : groups) {
    sizes.push_back(idx.size());
    counts.push_back(static_cast<double>(idx.size()));
    members.push_back(std::move(idx));
  }
  BatchSampler sampler(sizes, language_sampling_probs(counts, options.sampling_alpha), options.seed);
  LossConfig loss = options.loss;
  loss.resolve(encoder.config().hidden_size);
  auto adam = make_adam<T>(options);
  std::vector<StepRecord> log;
  for (std::size_t step = 1; step <= options.steps; ++step) {
    const auto drawn = sampler.next(options.batch_size);
    std::vector<TrainingExample> batch;
    for (auto i : drawn.items) batch.push_back(examples[members[drawn.source][i]]);
    const auto eb = make_embedding_batch(tokenizer, batch, 0, options.max_query_tokens, options.max_doc_tokens);
    const double value = embedding_step(encoder, eb, EmbeddingObjective::dense, loss, options.sub_batch_size, true,
                                        step_seed(options, step));
    log.push_back(finish_step(adam, encoder, step, value, on_step));
  }
  return log;
}

template <Real T>
std::vector<StepRecord> train_trm(Encoder<T>& encoder, const Tokenizer& tokenizer,
                                  const std::vector<TrainingExample>& examples, const TrainOptions& options,
                                  const StepCallback& on_step) {
  require_steps(options);
  std::vector<std::size_t> lengths;
  for (const auto& ex : examples) lengths.push_back(encode_text(tokenizer, ex.positive, options.max_doc_tokens).size());
  FineTuneBatches batches(lengths, schedule_for(options), options.seed);
  LossConfig loss = options.loss;
  loss.resolve(encoder.config().hidden_size);
  auto adam = make_adam<T>(options);
  std::vector<StepRecord> log;
  for (std::size_t step = 1; step <= options.steps; ++step) {
    const auto db = batches.next();
    std::vector<TrainingExample> batch;
    for (auto i : db.examples) batch.push_back(examples[i]);
    auto eb = make_embedding_batch(tokenizer, batch, options.hard_negatives, options.max_query_tokens,
                                   options.max_doc_tokens);
    if (!loss.use_in_batch_negatives) {
      const std::size_t group = 1 + options.hard_negatives;
      for (std::size_t i = 0; i < batch.size(); ++i) eb.layout.own.emplace_back(i * group, (i + 1) * group);
    }
    const double value =
        embedding_step(encoder, eb, EmbeddingObjective::trm, loss, db.sub_batch_size, true, step_seed(options, step));
    log.push_back(finish_step(adam, encoder, step, value, on_step));
  }
  return log;
}

template <Real T>
std::vector<StepRecord> train_reranker(Encoder<T>& encoder, const Tokenizer& tokenizer,
                                       const std::vector<TrainingExample>& examples, const TrainOptions& options,
                                       std::span<const std::string> random_pool, const StepCallback& on_step) {
  require_steps(options);
  std::vector<std::string> pool(random_pool.begin(), random_pool.end());
  if (pool.empty()) {
    std::set<std::string> texts;
    for (const auto& ex : examples) {
      texts.insert(ex.positive);
      texts.insert(ex.negatives.begin(), ex.negatives.end());
    }
    pool.assign(texts.begin(), texts.end());
  }
  const std::size_t group = 1 + options.rerank_hard_negatives + options.rerank_random_negatives;
  std::vector<std::size_t> lengths;
  for (const auto& ex : examples) {
    if (ex.negatives.size() < options.rerank_hard_negatives) {
      throw DataError("reranker example for query '" + ex.query + "' has too few hard negatives");
    }
    lengths.push_back(encode_pair(tokenizer, ex.query, ex.positive, options.max_doc_tokens).size());
  }
  FineTuneBatches batches(lengths, schedule_for(options), options.seed);
  std::mt19937_64 rng(options.seed + 2);
  std::uniform_int_distribution<std::size_t> any(0, pool.empty() ? 0 : pool.size() - 1);
  auto adam = make_adam<T>(options);
  std::vector<StepRecord> log;
  for (std::size_t step = 1; step <= options.steps; ++step) {
    const auto db = batches.next();
    std::vector<std::vector<std::int32_t>> seqs;
    for (auto i : db.examples) {
      const auto& ex = examples[i];
      std::set<std::string_view> used{ex.positive};
      std::vector<std::string_view> texts{ex.positive};
      for (std::size_t j = 0; j < options.rerank_hard_negatives; ++j) {
        texts.push_back(ex.negatives[j]);
        used.insert(ex.negatives[j]);
      }
      for (std::size_t attempts = 0; texts.size() < group; ++attempts) {
        if (attempts > 100 * group) throw DataError("reranker: random negative pool is too small");
        const auto& candidate = pool[any(rng)];
        if (used.insert(candidate).second) texts.push_back(candidate);
      }
      for (auto t : texts) seqs.push_back(encode_pair(tokenizer, ex.query, t, options.max_doc_tokens));
    }
    const std::size_t groups = db.examples.size();
    const double value = accumulate(
        encoder, seqs, Rep::rerank,
        [&](Graph<T>& g, Var scores) {
          std::vector<Var> rows;
          for (std::size_t k = 0; k < groups; ++k) rows.push_back(g.transpose(g.slice_rows(scores, k * group, (k + 1) * group)));
          return rerank_loss(g, g.concat_rows(rows), options.loss.tau_rerank);
        },
        db.sub_batch_size, true, step_seed(options, step));
    log.push_back(finish_step(adam, encoder, step, value, on_step));
  }
  return log;
}

template <Real T>
double in_batch_accuracy(const Encoder<T>& encoder, const Tokenizer& tokenizer,
                         const std::vector<TrainingExample>& examples, std::size_t batch_size,
                         std::size_t max_query_tokens, std::size_t max_doc_tokens) {
  if (examples.empty() || batch_size == 0) throw std::invalid_argument("in_batch_accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < examples.size(); begin += batch_size) {
    const std::size_t end = std::min(examples.size(), begin + batch_size);
    UnpaddedBatch qb, db;
    for (std::size_t i = begin; i < end; ++i) {
      qb.append(encode_text(tokenizer, examples[i].query, max_query_tokens));
      db.append(encode_text(tokenizer, examples[i].positive, max_doc_tokens));
    }
    const auto qo = encoder.encode(qb), d_out = encoder.encode(db);
    std::vector<DenseEmbedding> qs, ds;
    for (std::size_t b = 0; b < end - begin; ++b) {
      qs.push_back(dense_embed(qo, b));
      ds.push_back(dense_embed(d_out, b));
    }
    for (std::size_t i = 0; i < qs.size(); ++i) {
      const double pos = cosine(qs[i], ds[i]);
      bool best = true;
      for (std::size_t j = 0; j < ds.size() && best; ++j) {
        if (j != i && cosine(qs[i], ds[j]) >= pos) best = false;
      }
      if (best) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

void write_loss_csv(std::ostream& out, std::span<const StepRecord> records) {
  out << "step,loss,lr\n";
  for (const auto& r : records) out << r.step << ',' << format_double(r.loss) << ',' << format_double(r.lr) << '\n';
}

#define LCRET_TRAIN(T)                                                                                                \
  template double accumulate_embedding_grads<T>(Encoder<T>&, const EmbeddingBatch&, EmbeddingObjective,              \
                                                const LossConfig&, std::size_t, bool, std::uint64_t);                \
  template std::vector<StepRecord> train_mlm<T>(Encoder<T>&, const Tokenizer&, const std::vector<Document>&,        \
                                                const TrainOptions&, const StepCallback&);                           \
  template std::vector<StepRecord> train_contrastive<T>(Encoder<T>&, const Tokenizer&,                              \
                                                        const std::vector<TrainingExample>&, const TrainOptions&,    \
                                                        const StepCallback&);                                        \
  template std::vector<StepRecord> train_trm<T>(Encoder<T>&, const Tokenizer&, const std::vector<TrainingExample>&, \
                                                const TrainOptions&, const StepCallback&);                           \
  template std::vector<StepRecord> train_reranker<T>(Encoder<T>&, const Tokenizer&,                                 \
                                                     const std::vector<TrainingExample>&, const TrainOptions&,       \
                                                     std::span<const std::string>, const StepCallback&);             \
  template double in_batch_accuracy<T>(const Encoder<T>&, const Tokenizer&, const std::vector<TrainingExample>&,    \
                                       std::size_t, std::size_t, std::size_t);

LCRET_TRAIN(float)
LCRET_TRAIN(double)

}  // namespace lcret
