#include "lcret/repr/repr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

#include <nlohmann/json.hpp>

#include "lcret/numerics/parallel.hpp"
#include "lcret/pipeline/data.hpp"

namespace lcret {

SparseVector::SparseVector(std::vector<Entry> entries) {
  std::sort(entries.begin(), entries.end());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto [id, w] = entries[i];
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("sparse vector: weight of token " + std::to_string(id) + " is " + std::to_string(w));
    }
    if (i > 0 && entries[i - 1].first == id) {
      throw std::invalid_argument("sparse vector: duplicate token " + std::to_string(id));
    }
    if (w > 0.0) entries_.push_back(entries[i]);
  }
}

double SparseVector::weight(std::int32_t id) const noexcept {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), id, [](const Entry& e, std::int32_t v) {
    return e.first < v;
  });
  return it != entries_.end() && it->first == id ? it->second : 0.0;
}

DenseEmbedding normalize(std::span<const double> values) {
  double sq = 0.0;
  for (double v : values) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw NumericError("normalize: zero or non-finite vector");
  DenseEmbedding out{std::vector<double>(values.begin(), values.end()), true};
  for (double& v : out.values) v /= norm;
  return out;
}

double cosine(const DenseEmbedding& a, const DenseEmbedding& b) {
  if (a.size() != b.size()) throw ShapeError("cosine: dimensions differ");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a.values[i] * b.values[i];
  if (a.normalized && b.normalized) return dot;
  double na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  return dot / std::sqrt(na * nb);
}

template <Real T>
DenseEmbedding dense_embed(const EncoderOutput<T>& output, std::size_t b) {
  if (b >= output.cls_hiddens.rows()) {
    throw std::out_of_range("dense_embed: sequence " + std::to_string(b) + " of " +
                            std::to_string(output.cls_hiddens.rows()));
  }
  const auto row = output.cls_hiddens.row(b);
  const std::vector<double> values(row.begin(), row.end());
  return normalize(values);
}

bool valid_slice(std::size_t d, std::size_t hidden) noexcept {
  return d == hidden || (d > 0 && d % 32 == 0 && d < hidden);
}

DenseEmbedding matryoshka_slice(const DenseEmbedding& emb, std::size_t d) {
  if (!valid_slice(d, emb.size())) {
    throw std::invalid_argument("matryoshka_slice: width " + std::to_string(d) + " is not a slice of " +
                                std::to_string(emb.size()));
  }
  return normalize(std::span<const double>(emb.values).first(d));
}

std::vector<std::int32_t> sparse_ids(std::span<const std::int32_t> tokens) {
  std::vector<std::int32_t> ids(tokens.begin(), tokens.end());
  for (auto& id : ids) {
    if (is_special_token(id)) id = -1;
  }
  return ids;
}

template <Real T>
SparseVector sparse_weights(const EncoderOutput<T>& output, const UnpaddedBatch& batch, std::size_t b,
                            const Tensor<T>& w_sparse) {
  const std::size_t hidden = output.token_hiddens.cols();
  if (w_sparse.size() != hidden) throw ShapeError("sparse_weights: projection must be H x 1");
  std::map<std::int32_t, double> best;
  for (std::size_t r = batch.cu_seqlens.at(b); r < batch.cu_seqlens.at(b + 1); ++r) {
    const std::int32_t id = batch.tokens[r];
    if (is_special_token(id)) continue;
    double pre = 0.0;
    const auto h = output.token_hiddens.row(r);
    for (std::size_t i = 0; i < hidden; ++i) pre += static_cast<double>(h[i]) * static_cast<double>(w_sparse[i]);
    const double w = std::max(pre, 0.0);
    auto [it, fresh] = best.emplace(id, w);
    if (!fresh) it->second = std::max(it->second, w);
  }
  return SparseVector(std::vector<SparseVector::Entry>(best.begin(), best.end()));
}

double sparse_score(const SparseVector& q, const SparseVector& d) noexcept {
  const auto& a = q.entries();
  const auto& b = d.entries();
  double score = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i].first < b[j].first) {
      ++i;
    } else if (b[j].first < a[i].first) {
      ++j;
    } else {
      score += a[i++].second * b[j++].second;
    }
  }
  return score;
}

template <Real T>
std::vector<double> rerank_scores(const EncoderOutput<T>& output, const Tensor<T>& w_rerank) {
  const std::size_t hidden = output.cls_hiddens.cols();
  if (w_rerank.size() != hidden) throw ShapeError("rerank_scores: projection must be H x 1");
  std::vector<double> out;
  for (std::size_t b = 0; b < output.cls_hiddens.rows(); ++b) {
    double s = 0.0;
    const auto h = output.cls_hiddens.row(b);
    for (std::size_t i = 0; i < hidden; ++i) s += static_cast<double>(h[i]) * static_cast<double>(w_rerank[i]);
    out.push_back(s);
  }
  return out;
}

template <Real T>
Embedder<T>::Embedder(const Encoder<T>& encoder, const Tokenizer& tokenizer, std::size_t max_tokens,
                      std::size_t batch_size, std::size_t threads)
    : encoder_(encoder),
      tokenizer_(tokenizer),
      max_tokens_(std::min(max_tokens, encoder.config().max_seq_len)),
      batch_size_(std::max<std::size_t>(1, batch_size)),
      threads_(std::max<std::size_t>(1, threads)) {
  if (tokenizer.vocab_size() > encoder.config().vocab_size) {
    throw ConfigError("embedder: tokenizer vocabulary exceeds the encoder's");
  }
}

template <Real T>
std::vector<HybridRecord> Embedder<T>::embed(std::span<const std::string> ids,
                                             std::span<const std::string> texts) const {
  if (ids.size() != texts.size()) throw std::invalid_argument("embed: one id per text");
  std::vector<HybridRecord> out(texts.size());
  const std::size_t batches = (texts.size() + batch_size_ - 1) / batch_size_;
  parallel_for(batches, threads_, [&](std::size_t k) {
    const std::size_t begin = k * batch_size_, end = std::min(texts.size(), begin + batch_size_);
    UnpaddedBatch batch;
    for (std::size_t i = begin; i < end; ++i) batch.append(encode_text(tokenizer_, texts[i], max_tokens_));
    const auto output = encoder_.encode(batch);
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t b = i - begin;
      out[i] = {ids[i], dense_embed(output, b), sparse_weights(output, batch, b, encoder_.sparse_weight()),
                batch.seq_length(b)};
    }
  });
  return out;
}

template <Real T>
std::vector<double> score_pairs(const Encoder<T>& encoder, const Tokenizer& tokenizer,
                                std::span<const std::pair<std::string, std::string>> pairs, std::size_t max_tokens,
                                std::size_t batch_size, std::size_t threads) {
  batch_size = std::max<std::size_t>(1, batch_size);
  max_tokens = std::min(max_tokens, encoder.config().max_seq_len);
  std::vector<double> out(pairs.size());
  const std::size_t batches = (pairs.size() + batch_size - 1) / batch_size;
  parallel_for(batches, threads, [&](std::size_t k) {
    const std::size_t begin = k * batch_size, end = std::min(pairs.size(), begin + batch_size);
    UnpaddedBatch batch;
    for (std::size_t i = begin; i < end; ++i) {
      batch.append(encode_pair(tokenizer, pairs[i].first, pairs[i].second, max_tokens));
    }
    const auto scores = rerank_scores(encoder.encode(batch), encoder.rerank_weight());
    std::copy(scores.begin(), scores.end(), out.begin() + static_cast<std::ptrdiff_t>(begin));
  });
  return out;
}

void write_records(std::ostream& out, const std::vector<HybridRecord>& records) {
  for (const auto& r : records) {
    nlohmann::ordered_json sparse = nlohmann::ordered_json::object();
    for (const auto& [id, w] : r.sparse.entries()) sparse[std::to_string(id)] = w;
    nlohmann::ordered_json obj;
    obj["id"] = r.doc_id;
    obj["dense"] = r.dense.values;
    obj["sparse"] = std::move(sparse);
    obj["tokens"] = r.token_count;
    out << obj.dump() << '\n';
  }
}

std::vector<HybridRecord> read_records(std::istream& in, const std::string& name) {
  std::vector<HybridRecord> out;
  std::string text;
  std::size_t line = 0;
  auto fail = [&](const std::string& what) {
    throw DataError(name + ":" + std::to_string(line) + ": " + what);
  };
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto obj = nlohmann::json::parse(text);
      HybridRecord r;
      r.doc_id = obj.at("id").get<std::string>();
      r.dense.values = obj.at("dense").get<std::vector<double>>();
      r.dense.normalized = true;
      std::vector<SparseVector::Entry> entries;
      for (const auto& [key, w] : obj.at("sparse").items()) {
        entries.emplace_back(static_cast<std::int32_t>(std::stol(key)), w.get<double>());
      }
      r.sparse = SparseVector(std::move(entries));
      r.token_count = obj.value("tokens", std::size_t{0});
      out.push_back(std::move(r));
    } catch (const DataError&) {
      throw;
    } catch (const std::exception& e) {
      fail(e.what());
    }
  }
  return out;
}

void save_records(const std::filesystem::path& path, const std::vector<HybridRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot write");
  write_records(out, records);
}

std::vector<HybridRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open");
  return read_records(in, path.string());
}

std::size_t thread_count_from_env() {
  const char* v = std::getenv("LCRET_THREADS");
  if (v == nullptr) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  return (end != v && n > 0) ? static_cast<std::size_t>(n) : 1;
}

#define LCRET_REPR(T)                                                                                           \
  template DenseEmbedding dense_embed<T>(const EncoderOutput<T>&, std::size_t);                                 \
  template SparseVector sparse_weights<T>(const EncoderOutput<T>&, const UnpaddedBatch&, std::size_t,           \
                                          const Tensor<T>&);                                                    \
  template std::vector<double> rerank_scores<T>(const EncoderOutput<T>&, const Tensor<T>&);                     \
  template class Embedder<T>;                                                                                   \
  template std::vector<double> score_pairs<T>(const Encoder<T>&, const Tokenizer&,                              \
                                              std::span<const std::pair<std::string, std::string>>, std::size_t, \
                                              std::size_t, std::size_t);

LCRET_REPR(float)
LCRET_REPR(double)

}  // namespace lcret
