#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lcret/encoder/config.hpp"
#include "lcret/index/index.hpp"
#include "lcret/repr/repr.hpp"
#include "lcret/train/train.hpp"

namespace lcret::cli {

namespace fs = std::filesystem;

struct Globals {
  std::uint64_t seed = 0;
  std::optional<Precision> precision;  // unset: f32 for new models, stored precision otherwise
  std::size_t threads = 1;
};

struct SynthArgs {
  fs::path out;
  std::size_t docs = 1000;
  std::size_t train_docs = 1000;
  std::size_t queries = 200;
  std::size_t hard_negatives = kEmbeddingHardNegatives;
  std::size_t random_negatives = kRerankRandomNegatives;
  std::size_t languages = 1;
};

struct TrainArgs {
  std::string stage;
  fs::path out;
  std::optional<fs::path> init;
  std::optional<fs::path> corpus;
  std::optional<fs::path> pairs;
  std::optional<fs::path> random_pool;
  std::optional<fs::path> schedule;
  TrainOptions options;
  std::optional<double> rope_base;
  double dropout = 0.1;
  std::size_t vocab_words = 30000;
  std::size_t layers = 2, hidden = 64, heads = 4, ffn = 128, max_seq_len = 8192;
  std::string run_config;  // effective configuration, written next to the checkpoint
};

struct EmbedArgs {
  fs::path model, input, out;
  std::size_t max_tokens = kDocMaxTokens;
  std::size_t batch_size = 32;
};

struct IndexArgs {
  fs::path records, out;
  std::size_t d_search = 0;  // 0: full width
};

struct SearchArgs {
  fs::path model, index, queries, out;
  std::string mode = "hybrid";
  std::size_t k = kRerankDepth;
  double lambda_sparse = kDefaultLambdaSparse;
  std::size_t max_tokens = kQueryMaxTokens;
  std::string tag = "lcret";
};

struct RerankArgs {
  fs::path model, run, queries, corpus, out;
  std::size_t depth = kRerankDepth;
  std::size_t max_tokens = kDocMaxTokens;
  std::string tag = "lcret-rerank";
};

struct EvalArgs {
  fs::path run, qrels;
  std::optional<fs::path> out;
  std::vector<std::string> metrics{"ndcg@10", "recall@20"};
};

struct BenchArgs {
  std::optional<fs::path> out;
  std::size_t batches = 4;
  std::size_t batch_size = 32;
  std::size_t long_len = 2048;
  std::size_t short_len = 32;
  std::size_t long_per_batch = 1;
  std::size_t repeats = 1;
  std::size_t layers = 2, hidden = 64, heads = 4, ffn = 128;
};

int synth(const Globals& g, const SynthArgs& a);
int train(const Globals& g, const TrainArgs& a);
int embed(const Globals& g, const EmbedArgs& a);
int index(const Globals& g, const IndexArgs& a);
int search(const Globals& g, const SearchArgs& a);
int rerank(const Globals& g, const RerankArgs& a);
int eval(const Globals& g, const EvalArgs& a);
int bench(const Globals& g, const BenchArgs& a);

}  // namespace lcret::cli
