#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lcret/encoder/encoder.hpp"
#include "lcret/pipeline/tokenizer.hpp"

namespace lcret {

struct DenseEmbedding {
  std::vector<double> values;
  bool normalized = false;

  std::size_t size() const noexcept { return values.size(); }
};

/// Nonnegative token weights sorted by token id, zeros omitted.
class SparseVector {
 public:
  using Entry = std::pair<std::int32_t, double>;

  SparseVector() = default;
  /// Throws on negative weights or duplicate ids; drops zeros.
  explicit SparseVector(std::vector<Entry> entries);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  /// Weight of `id`, 0 when absent.
  double weight(std::int32_t id) const noexcept;

  bool operator==(const SparseVector&) const = default;

 private:
  std::vector<Entry> entries_;
};

struct HybridRecord {
  std::string doc_id;
  DenseEmbedding dense;
  SparseVector sparse;
  std::size_t token_count = 0;
};

/// Unit-length copy; throws NumericError on a zero or non-finite vector.
DenseEmbedding normalize(std::span<const double> values);

double cosine(const DenseEmbedding& a, const DenseEmbedding& b);

/// L2-normalised [CLS] row of sequence `b`.
template <Real T>
DenseEmbedding dense_embed(const EncoderOutput<T>& output, std::size_t b);

/// True when `d` is a valid slice width of an `hidden`-wide embedding:
/// the full width, or a positive multiple of 32 below it.
bool valid_slice(std::size_t d, std::size_t hidden) noexcept;

/// Renormalised d-prefix.
DenseEmbedding matryoshka_slice(const DenseEmbedding& emb, std::size_t d);

/// Token ids with specials replaced by -1, as consumed by Graph::segment_max.
std::vector<std::int32_t> sparse_ids(std::span<const std::int32_t> tokens);

/// max over occurrences of ReLU(h_t . w) per non-special token of sequence `b`.
template <Real T>
SparseVector sparse_weights(const EncoderOutput<T>& output, const UnpaddedBatch& batch, std::size_t b,
                            const Tensor<T>& w_sparse);

double sparse_score(const SparseVector& q, const SparseVector& d) noexcept;

/// h_CLS . w for every sequence of a batch of "[CLS] q [SEP] d" pairs.
template <Real T>
std::vector<double> rerank_scores(const EncoderOutput<T>& output, const Tensor<T>& w_rerank);

/// Query and document truncation defaults.
inline constexpr std::size_t kQueryMaxTokens = 512;
inline constexpr std::size_t kDocMaxTokens = 1024;

/// Tokenises, encodes and extracts records for a list of texts. Batches of
/// `batch_size` texts are encoded on up to `threads` threads.
template <Real T>
class Embedder {
 public:
  Embedder(const Encoder<T>& encoder, const Tokenizer& tokenizer, std::size_t max_tokens, std::size_t batch_size = 32,
           std::size_t threads = 1);

  std::vector<HybridRecord> embed(std::span<const std::string> ids, std::span<const std::string> texts) const;

 private:
  const Encoder<T>& encoder_;
  const Tokenizer& tokenizer_;
  std::size_t max_tokens_;
  std::size_t batch_size_;
  std::size_t threads_;
};

/// Cross-encoder scores of (query, document) pairs, batched like Embedder.
template <Real T>
std::vector<double> score_pairs(const Encoder<T>& encoder, const Tokenizer& tokenizer,
                                std::span<const std::pair<std::string, std::string>> pairs, std::size_t max_tokens,
                                std::size_t batch_size = 32, std::size_t threads = 1);

/// JSONL {"id", "dense": [...], "sparse": {"token_id": weight}, "tokens": n}.
void write_records(std::ostream& out, const std::vector<HybridRecord>& records);
std::vector<HybridRecord> read_records(std::istream& in, const std::string& name = "<records>");
void save_records(const std::filesystem::path& path, const std::vector<HybridRecord>& records);
std::vector<HybridRecord> load_records(const std::filesystem::path& path);

/// Thread count from LCRET_THREADS (default 1, minimum 1).
std::size_t thread_count_from_env();

}  // namespace lcret
