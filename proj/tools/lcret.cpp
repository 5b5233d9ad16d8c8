#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "lcret/repr/repr.hpp"

using namespace lcret;
using namespace lcret::cli;

namespace {

void add_model_shape(CLI::App* cmd, std::size_t& layers, std::size_t& hidden, std::size_t& heads, std::size_t& ffn) {
  cmd->add_option("--layers", layers, "Transformer layers")->capture_default_str();
  cmd->add_option("--hidden", hidden, "Hidden size")->capture_default_str();
  cmd->add_option("--heads", heads, "Attention heads (head size = hidden / heads)")->capture_default_str();
  cmd->add_option("--ffn", ffn, "Feed-forward inner size")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-context retrieval toolkit: train, embed, index, search, rerank, evaluate and benchmark."};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI/TOML run configuration; command-line flags take precedence");

  Globals globals;
  std::string precision;
  app.add_option("--seed", globals.seed, "Seed for initialisation, sampling and synthetic data")->capture_default_str();
  app.add_option("--precision", precision, "f32 or f64 (default: f32, or the checkpoint's precision)")
      ->check(CLI::IsMember({"f32", "f64"}));

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic training and evaluation corpus");
  synth_cmd->add_option("--out", synth_args.out, "Output directory")->required();
  synth_cmd->add_option("--docs", synth_args.docs, "Evaluation corpus size")->capture_default_str();
  synth_cmd->add_option("--train-docs", synth_args.train_docs, "Training corpus size")->capture_default_str();
  synth_cmd->add_option("--queries", synth_args.queries, "Evaluation queries")->capture_default_str();
  synth_cmd->add_option("--hard-negatives", synth_args.hard_negatives, "Hard negatives per pair")->capture_default_str();
  synth_cmd->add_option("--random-negatives", synth_args.random_negatives, "Random negatives per pair")
      ->capture_default_str();
  synth_cmd->add_option("--languages", synth_args.languages, "Synthetic languages (1 or 2)")->capture_default_str();

  TrainArgs train_args;
  auto& o = train_args.options;
  auto* train_cmd = app.add_subcommand("train", "Run one training stage and save a checkpoint with its loss CSV");
  train_cmd->add_option("--stage", train_args.stage,
                        "mlm-short | mlm-long | contrastive-pretrain | trm-finetune | rerank-finetune")
      ->required();
  train_cmd->add_option("--out", train_args.out, "Output model directory")->required();
  train_cmd->add_option("--init", train_args.init, "Model directory to continue from");
  train_cmd->add_option("--corpus", train_args.corpus, "JSONL documents (MLM stages)");
  train_cmd->add_option("--pairs", train_args.pairs, "JSONL training pairs (contrastive and fine-tuning stages)");
  train_cmd->add_option("--random-pool", train_args.random_pool, "JSONL documents for reranker random negatives");
  train_cmd->add_option("--schedule", train_args.schedule, "Length-bucketed batch schedule file");
  train_cmd->add_option("--steps", o.steps)->capture_default_str();
  train_cmd->add_option("--batch-size", o.batch_size)->capture_default_str();
  train_cmd->add_option("--sub-batch-size", o.sub_batch_size, "Sequences per gradient-cached chunk (0: whole batch)")
      ->capture_default_str();
  train_cmd->add_option("--lr", o.adam.lr)->capture_default_str();
  train_cmd->add_option("--weight-decay", o.adam.weight_decay)->capture_default_str();
  train_cmd->add_option("--warmup-ratio", o.adam.warmup_ratio)->capture_default_str();
  train_cmd->add_option("--max-query-tokens", o.max_query_tokens)->capture_default_str();
  train_cmd->add_option("--max-doc-tokens", o.max_doc_tokens)->capture_default_str();
  train_cmd->add_option("--chunk-tokens", o.chunk_tokens, "MLM sequence length")->capture_default_str();
  train_cmd->add_option("--length-floor", o.length_floor, "MLM: down-sample documents shorter than this")
      ->capture_default_str();
  train_cmd->add_option("--mask-prob", o.mask_prob)->capture_default_str();
  train_cmd->add_option("--sampling-alpha", o.sampling_alpha)->capture_default_str();
  train_cmd->add_option("--hard-negatives", o.hard_negatives)->capture_default_str();
  train_cmd->add_option("--rerank-hard-negatives", o.rerank_hard_negatives)->capture_default_str();
  train_cmd->add_option("--rerank-random-negatives", o.rerank_random_negatives)->capture_default_str();
  train_cmd->add_option("--tau-dense", o.loss.tau_dense)->capture_default_str();
  train_cmd->add_option("--tau-mrl", o.loss.tau_mrl)->capture_default_str();
  train_cmd->add_option("--tau-sparse", o.loss.tau_sparse)->capture_default_str();
  train_cmd->add_option("--tau-rerank", o.loss.tau_rerank)->capture_default_str();
  train_cmd->add_option("--sparse-loss-weight", o.loss.lambda_sparse)->capture_default_str();
  train_cmd->add_option("--mrl-dims", o.loss.mrl_dims, "Matryoshka widths (default: every multiple of 32)")
      ->delimiter(',');
  train_cmd->add_option("--mrl-weights", o.loss.mrl_weights)->delimiter(',');
  bool no_in_batch = false;
  train_cmd->add_flag("--no-in-batch-negatives", no_in_batch);
  train_cmd->add_option("--rope-base", train_args.rope_base, "Override the stage's RoPE base");
  train_cmd->add_option("--dropout", train_args.dropout, "Hidden dropout of a new model")->capture_default_str();
  train_cmd->add_option("--vocab-words", train_args.vocab_words, "Tokenizer word budget of a new model")
      ->capture_default_str();
  train_cmd->add_option("--max-seq-len", train_args.max_seq_len, "Maximum sequence length of a new model")
      ->capture_default_str();
  add_model_shape(train_cmd, train_args.layers, train_args.hidden, train_args.heads, train_args.ffn);

  EmbedArgs embed_args;
  auto* embed_cmd = app.add_subcommand("embed", "Encode documents into dense and sparse JSONL records");
  embed_cmd->add_option("--model", embed_args.model)->required();
  embed_cmd->add_option("--input", embed_args.input, "JSONL documents")->required();
  embed_cmd->add_option("--out", embed_args.out, "JSONL records")->required();
  embed_cmd->add_option("--max-tokens", embed_args.max_tokens)->capture_default_str();
  embed_cmd->add_option("--batch-size", embed_args.batch_size)->capture_default_str();

  IndexArgs index_args;
  auto* index_cmd = app.add_subcommand("index", "Build and persist the dense and inverted indexes");
  index_cmd->add_option("--records", index_args.records)->required();
  index_cmd->add_option("--out", index_args.out, "Index directory")->required();
  index_cmd->add_option("--d-search", index_args.d_search, "Dense search width (0: full embedding)")
      ->capture_default_str();

  SearchArgs search_args;
  auto* search_cmd = app.add_subcommand("search", "Retrieve for every query and write a TREC run");
  search_cmd->add_option("--model", search_args.model)->required();
  search_cmd->add_option("--index", search_args.index)->required();
  search_cmd->add_option("--queries", search_args.queries, "JSONL queries {\"id\", \"text\"}")->required();
  search_cmd->add_option("--out", search_args.out, "TREC run file")->required();
  search_cmd->add_option("--mode", search_args.mode)
      ->check(CLI::IsMember({"dense", "sparse", "hybrid"}))
      ->capture_default_str();
  search_cmd->add_option("-k,--k", search_args.k, "Hits per query")->capture_default_str();
  search_cmd->add_option("--lambda-sparse", search_args.lambda_sparse, "Sparse weight in hybrid fusion")
      ->capture_default_str();
  search_cmd->add_option("--max-tokens", search_args.max_tokens, "Query truncation")->capture_default_str();
  search_cmd->add_option("--tag", search_args.tag, "Run tag column")->capture_default_str();

  RerankArgs rerank_args;
  auto* rerank_cmd = app.add_subcommand("rerank", "Re-score the head of a run with the cross-encoder");
  rerank_cmd->add_option("--model", rerank_args.model)->required();
  rerank_cmd->add_option("--run", rerank_args.run, "First-stage TREC run")->required();
  rerank_cmd->add_option("--queries", rerank_args.queries)->required();
  rerank_cmd->add_option("--corpus", rerank_args.corpus)->required();
  rerank_cmd->add_option("--out", rerank_args.out)->required();
  rerank_cmd->add_option("--rerank-depth", rerank_args.depth)->capture_default_str();
  rerank_cmd->add_option("--max-tokens", rerank_args.max_tokens, "Pair truncation")->capture_default_str();
  rerank_cmd->add_option("--tag", rerank_args.tag)->capture_default_str();

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Score a run against qrels");
  eval_cmd->add_option("--run", eval_args.run)->required();
  eval_cmd->add_option("--qrels", eval_args.qrels)->required();
  eval_cmd->add_option("--metrics", eval_args.metrics, "ndcg@k and recall@k, comma separated")
      ->delimiter(',')
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_args.out, "Metrics CSV (default: stdout)");

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "Time padded against unpadded encoding on skewed batches");
  bench_cmd->add_option("--out", bench_args.out, "Timing CSV (default: stdout)");
  bench_cmd->add_option("--batches", bench_args.batches)->capture_default_str();
  bench_cmd->add_option("--batch-size", bench_args.batch_size)->capture_default_str();
  bench_cmd->add_option("--long-len", bench_args.long_len)->capture_default_str();
  bench_cmd->add_option("--short-len", bench_args.short_len)->capture_default_str();
  bench_cmd->add_option("--long-per-batch", bench_args.long_per_batch)->capture_default_str();
  bench_cmd->add_option("--repeats", bench_args.repeats, "Timed repetitions; the fastest is kept")
      ->capture_default_str();
  add_model_shape(bench_cmd, bench_args.layers, bench_args.hidden, bench_args.heads, bench_args.ffn);

  CLI11_PARSE(app, argc, argv);

  try {
    if (!precision.empty()) globals.precision = parse_precision(precision);
    globals.threads = thread_count_from_env();
    o.loss.use_in_batch_negatives = !no_in_batch;
    if (*synth_cmd) return synth(globals, synth_args);
    if (*train_cmd) {
      std::istringstream full(app.config_to_str(true, false));
      for (std::string line; std::getline(full, line);) {
        const auto eq = line.find('=');
        const bool scoped = line.rfind("train.", 0) == 0 || line.substr(0, eq).find('.') == std::string::npos;
        if (scoped && line.substr(eq + 1) != "\"\"") train_args.run_config += line + '\n';
      }
      return train(globals, train_args);
    }
    if (*embed_cmd) return embed(globals, embed_args);
    if (*index_cmd) return index(globals, index_args);
    if (*search_cmd) return search(globals, search_args);
    if (*rerank_cmd) return rerank(globals, rerank_args);
    if (*eval_cmd) return eval(globals, eval_args);
    if (*bench_cmd) return bench(globals, bench_args);
  } catch (const std::exception& e) {
    std::cerr << "lcret: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
