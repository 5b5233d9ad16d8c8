#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "lcret/evalkit/evalkit.hpp"
#include "lcret/pipeline/synthetic.hpp"
#include "lcret/retrieval/retrieval.hpp"

namespace lcret::cli {
namespace {

const char* kCheckpointFile = "model.ckpt";
const char* kTokenizerFile = "tokenizer.txt";

struct Model {
  Checkpoint checkpoint;
  WordByteTokenizer tokenizer;
  Precision precision = Precision::f32;
};

Model load_model(const fs::path& dir, const Globals& g) {
  Model m;
  m.checkpoint = Checkpoint::load(dir / kCheckpointFile);
  m.tokenizer = WordByteTokenizer::load(dir / kTokenizerFile);
  m.precision = g.precision.value_or(load_config(m.checkpoint).precision);
  return m;
}

template <class F>
int with_encoder(const Model& m, F&& body) {
  if (m.precision == Precision::f64) {
    auto enc = Encoder<double>::from_checkpoint(m.checkpoint);
    return body(enc);
  }
  auto enc = Encoder<float>::from_checkpoint(m.checkpoint);
  return body(enc);
}

template <Real T>
void save_model(const fs::path& dir, const Encoder<T>& enc, const WordByteTokenizer& tok) {
  fs::create_directories(dir);
  enc.to_checkpoint().save(dir / kCheckpointFile);
  tok.save(dir / kTokenizerFile);
}

std::ofstream create(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::vector<std::string> texts_of(const std::vector<TrainingExample>& pairs) {
  std::vector<std::string> out;
  for (const auto& ex : pairs) {
    out.push_back(ex.query);
    out.push_back(ex.positive);
    out.insert(out.end(), ex.negatives.begin(), ex.negatives.end());
  }
  return out;
}

void check_stage_inputs(Stage stage, const TrainArgs& a) {
  const std::string name(stage_name(stage));
  if (is_mlm(stage)) {
    if (!a.corpus) throw ConfigError("stage " + name + " needs --corpus");
    if (a.pairs) throw ConfigError("stage " + name + " trains on --corpus, not --pairs");
  } else {
    if (!a.pairs) throw ConfigError("stage " + name + " needs --pairs");
    if (a.corpus) throw ConfigError("stage " + name + " trains on --pairs, not --corpus");
  }
  if (stage != Stage::rerank_finetune && a.random_pool) {
    throw ConfigError("--random-pool only applies to rerank-finetune");
  }
  const bool needs_init = stage == Stage::mlm_long || stage == Stage::trm_finetune || stage == Stage::rerank_finetune;
  if (needs_init && !a.init) throw ConfigError("stage " + name + " continues from a checkpoint; pass --init");
}

template <Real T>
int run_training(Encoder<T>& enc, const WordByteTokenizer& tok, Stage stage, const TrainArgs& a,
                 const TrainOptions& options) {
  if (const auto base = a.rope_base ? a.rope_base : default_rope_base(stage)) enc.set_rope_base(*base);
  std::vector<StepRecord> log;
  std::vector<TrainingExample> pairs;
  if (is_mlm(stage)) {
    log = train_mlm(enc, tok, load_corpus(*a.corpus), options);
  } else {
    pairs = load_pairs(*a.pairs);
    if (stage == Stage::contrastive_pretrain) {
      log = train_contrastive(enc, tok, pairs, options);
    } else if (stage == Stage::trm_finetune) {
      log = train_trm(enc, tok, pairs, options);
    } else {
      std::vector<std::string> pool;
      if (a.random_pool) {
        for (auto& d : load_corpus(*a.random_pool)) pool.push_back(std::move(d.text));
      }
      log = train_reranker(enc, tok, pairs, options, pool);
    }
  }
  save_model(a.out, enc, tok);
  auto csv = create(a.out / "loss.csv");
  write_loss_csv(csv, log);
  if (!a.run_config.empty()) create(a.out / "run_config.ini") << a.run_config;
  std::cout << stage_name(stage) << ": " << log.size() << " steps, final loss " << format_double(log.back().loss)
            << ", rope base " << format_double(enc.config().rope_base) << '\n';
  if (stage == Stage::contrastive_pretrain || stage == Stage::trm_finetune) {
    std::cout << "in-batch accuracy "
              << format_double(in_batch_accuracy(enc, tok, pairs, options.batch_size, options.max_query_tokens,
                                                 options.max_doc_tokens))
              << '\n';
  }
  return 0;
}

double seconds_of(const std::function<void()>& f, std::size_t repeats) {
  double best = 0.0;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, repeats); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    best = r == 0 ? s : std::min(best, s);
  }
  return best;
}

template <Real T>
int run_bench(const Globals& g, const BenchArgs& a, const EncoderConfig& config) {
  const Encoder<T> enc(config, g.seed);
  std::mt19937_64 rng(g.seed);
  std::uniform_int_distribution<std::int32_t> token(kNumSpecialTokens, static_cast<std::int32_t>(config.vocab_size) - 1);
  std::ostringstream csv;
  csv << "batch,mode,sequences,tokens,grid_tokens,flops,seconds\n";
  double padded_total = 0.0, unpadded_total = 0.0;
  std::uint64_t padded_flops = 0, unpadded_flops = 0;
  for (std::size_t b = 0; b < a.batches; ++b) {
    std::vector<std::size_t> lengths(a.batch_size, a.short_len);
    for (std::size_t i = 0; i < std::min(a.long_per_batch, a.batch_size); ++i) lengths[i] = a.long_len;
    std::shuffle(lengths.begin(), lengths.end(), rng);
    std::vector<std::vector<std::int32_t>> seqs;
    for (auto len : lengths) {
      std::vector<std::int32_t> s{kClsId};
      for (std::size_t i = 1; i < len; ++i) s.push_back(token(rng));
      seqs.push_back(std::move(s));
    }
    const std::size_t width = *std::max_element(lengths.begin(), lengths.end());
    std::vector<std::int32_t> grid(a.batch_size * width, kPadId);
    for (std::size_t i = 0; i < seqs.size(); ++i) std::copy(seqs[i].begin(), seqs[i].end(), grid.begin() + i * width);
    const auto batch = UnpaddedBatch::from_sequences(seqs);
    std::size_t tokens = 0;
    for (auto len : lengths) tokens += len;

    const double tu = seconds_of([&] { (void)enc.encode(batch); }, a.repeats);
    const double tp = seconds_of([&] { (void)enc.encode_padded(grid, a.batch_size, width, lengths); }, a.repeats);
    const auto fu = forward_flops(config, lengths), fp = forward_flops(config, lengths, width);
    csv << b << ",unpadded," << a.batch_size << ',' << tokens << ',' << tokens << ',' << fu << ',' << format_double(tu)
        << '\n';
    csv << b << ",padded," << a.batch_size << ',' << tokens << ',' << a.batch_size * width << ',' << fp << ','
        << format_double(tp) << '\n';
    unpadded_total += tu;
    padded_total += tp;
    unpadded_flops += fu;
    padded_flops += fp;
  }
  if (a.out) {
    create(*a.out) << csv.str();
  } else {
    std::cout << csv.str();
  }
  std::cerr << "unpadded " << format_double(unpadded_total) << " s, padded " << format_double(padded_total)
            << " s, speedup " << format_double(padded_total / unpadded_total) << "x, flop ratio "
            << format_double(static_cast<double>(unpadded_flops) / static_cast<double>(padded_flops)) << '\n';
  return 0;
}

}  // namespace

int synth(const Globals& g, const SynthArgs& a) {
  if (a.queries > a.docs) throw ConfigError("--queries cannot exceed --docs");
  SyntheticSpec train_spec;
  train_spec.num_docs = a.train_docs;
  train_spec.num_languages = a.languages;
  train_spec.seed = g.seed * 4 + 1;
  train_spec.id_prefix = "t";
  SyntheticSpec eval_spec = train_spec;
  eval_spec.num_docs = a.docs;
  eval_spec.seed = g.seed * 4 + 2;
  eval_spec.id_prefix = "d";

  const auto train_corpus = generate_corpus(train_spec);
  std::vector<std::size_t> all(a.train_docs);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto pairs =
      generate_pairs(train_spec, train_corpus, all, a.hard_negatives, a.random_negatives, g.seed * 4 + 3);

  const auto eval_corpus = generate_corpus(eval_spec);
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < a.queries; ++i) picked.push_back(i * a.docs / a.queries);
  const auto queries = generate_queries(eval_spec, eval_corpus, picked, g.seed * 4 + 4);

  fs::create_directories(a.out);
  {
    auto out = create(a.out / "train_corpus.jsonl");
    write_corpus(out, train_corpus.docs);
  }
  {
    auto out = create(a.out / "train_pairs.jsonl");
    write_pairs(out, pairs);
  }
  {
    auto out = create(a.out / "corpus.jsonl");
    write_corpus(out, eval_corpus.docs);
  }
  std::vector<Document> qdocs;
  Qrels qrels;
  for (const auto& q : queries) {
    qdocs.push_back({q.id, q.text, ""});
    qrels.add(q.id, q.doc_id, 1);
  }
  {
    auto out = create(a.out / "queries.jsonl");
    write_corpus(out, qdocs);
  }
  {
    auto out = create(a.out / "qrels.txt");
    write_qrels(out, qrels);
  }
  std::cout << "wrote " << a.train_docs << " training docs, " << pairs.size() << " pairs, " << a.docs
            << " evaluation docs and " << queries.size() << " queries to " << a.out.string() << '\n';
  return 0;
}

int train(const Globals& g, const TrainArgs& a) {
  const Stage stage = parse_stage(a.stage);
  check_stage_inputs(stage, a);
  TrainOptions options = a.options;
  options.seed = g.seed;
  if (a.schedule) options.schedule = BatchSchedule::load(*a.schedule);

  if (a.init) {
    Model m = load_model(*a.init, g);
    return with_encoder(m, [&](auto& enc) { return run_training(enc, m.tokenizer, stage, a, options); });
  }
  std::vector<std::string> texts;
  if (a.corpus) {
    for (auto& d : load_corpus(*a.corpus)) texts.push_back(std::move(d.text));
  } else {
    texts = texts_of(load_pairs(*a.pairs));
  }
  const auto tok = WordByteTokenizer::train(texts, a.vocab_words);
  EncoderConfig config = EncoderConfig::toy(tok.vocab_size());
  config.num_layers = a.layers;
  config.hidden_size = a.hidden;
  config.num_heads = a.heads;
  config.head_size = a.heads == 0 ? 0 : a.hidden / a.heads;
  config.ffn_inner = a.ffn;
  config.max_seq_len = a.max_seq_len;
  config.dropout = a.dropout;
  config.precision = g.precision.value_or(Precision::f32);
  config.validate();
  if (config.precision == Precision::f64) {
    Encoder<double> enc(config, g.seed);
    return run_training(enc, tok, stage, a, options);
  }
  Encoder<float> enc(config, g.seed);
  return run_training(enc, tok, stage, a, options);
}

int embed(const Globals& g, const EmbedArgs& a) {
  const Model m = load_model(a.model, g);
  const auto docs = load_corpus(a.input);
  std::vector<std::string> ids, texts;
  for (const auto& d : docs) {
    ids.push_back(d.id);
    texts.push_back(d.text);
  }
  return with_encoder(m, [&]<Real T>(const Encoder<T>& enc) {
    const Embedder<T> embedder(enc, m.tokenizer, a.max_tokens, a.batch_size, g.threads);
    save_records(a.out, embedder.embed(ids, texts));
    std::cout << "embedded " << docs.size() << " texts\n";
    return 0;
  });
}

int index(const Globals&, const IndexArgs& a) {
  const auto records = load_records(a.records);
  if (records.empty()) throw DataError(a.records.string() + ": no records");
  const std::size_t d = a.d_search == 0 ? records.front().dense.size() : a.d_search;
  const auto idx = build_index(records, d);
  save_index(idx, a.out);
  std::cout << "indexed " << idx.size() << " documents at d = " << d << '\n';
  return 0;
}

int search(const Globals& g, const SearchArgs& a) {
  const SearchMode mode = parse_search_mode(a.mode);
  if (a.lambda_sparse < 0.0) throw ConfigError("--lambda-sparse must be non-negative");
  const Model m = load_model(a.model, g);
  const auto idx = load_index(a.index);
  const auto queries = load_corpus(a.queries);
  std::vector<std::string> ids, texts;
  for (const auto& q : queries) {
    ids.push_back(q.id);
    texts.push_back(q.text);
  }
  return with_encoder(m, [&]<Real T>(const Encoder<T>& enc) {
    const Embedder<T> embedder(enc, m.tokenizer, a.max_tokens, 32, g.threads);
    const auto results = search_all(idx, embedder.embed(ids, texts), mode, a.k, a.lambda_sparse, g.threads);
    save_run(a.out, to_run(results), a.tag);
    std::cout << "searched " << results.size() << " queries (" << search_mode_name(mode) << ")\n";
    return 0;
  });
}

int rerank(const Globals& g, const RerankArgs& a) {
  const Model m = load_model(a.model, g);
  const auto first = load_run(a.run);
  const auto queries = text_lookup(load_corpus(a.queries));
  const auto docs = text_lookup(load_corpus(a.corpus));
  return with_encoder(m, [&](const auto& enc) {
    save_run(a.out, rerank_run(enc, m.tokenizer, first, queries, docs, a.depth, a.max_tokens, g.threads), a.tag);
    std::cout << "reranked " << first.queries.size() << " queries at depth " << a.depth << '\n';
    return 0;
  });
}

int eval(const Globals&, const EvalArgs& a) {
  const auto run = load_run(a.run);
  const auto qrels = load_qrels(a.qrels);
  std::vector<MetricReport> reports;
  for (const auto& metric : a.metrics) reports.push_back(evaluate_metric(run, qrels, metric));
  if (a.out) {
    auto out = create(*a.out);
    write_metrics_csv(out, reports);
    for (const auto& r : reports) std::cout << r.metric << ' ' << format_double(r.mean) << '\n';
  } else {
    write_metrics_csv(std::cout, reports);
  }
  return 0;
}

int bench(const Globals& g, const BenchArgs& a) {
  if (a.batches == 0 || a.batch_size == 0 || a.short_len == 0 || a.long_len == 0) {
    throw ConfigError("bench sizes must be positive");
  }
  EncoderConfig config = EncoderConfig::toy(1024);
  config.num_layers = a.layers;
  config.hidden_size = a.hidden;
  config.num_heads = a.heads;
  config.head_size = a.heads == 0 ? 0 : a.hidden / a.heads;
  config.ffn_inner = a.ffn;
  config.max_seq_len = std::max<std::size_t>(config.max_seq_len, std::max(a.long_len, a.short_len));
  config.precision = g.precision.value_or(Precision::f32);
  config.validate();
  if (config.precision == Precision::f64) return run_bench<double>(g, a, config);
  return run_bench<float>(g, a, config);
}

}  // namespace lcret::cli
