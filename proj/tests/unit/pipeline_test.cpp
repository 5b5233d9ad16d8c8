#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "lcret/encoder/config.hpp"
#include "lcret/numerics/checkpoint.hpp"
#include "lcret/pipeline/batching.hpp"
#include "lcret/pipeline/data.hpp"
#include "lcret/pipeline/sampling.hpp"
#include "lcret/pipeline/synthetic.hpp"
#include "lcret/pipeline/tokenizer.hpp"

namespace lcret {
namespace {

TEST(LanguageSampling, SquareRootSmoothing) {
  const std::vector<double> counts{1, 4};
  const auto q = language_sampling_probs(counts, 0.5);
  EXPECT_NEAR(q[0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(q[1], 2.0 / 3.0, 1e-12);
}

TEST(LanguageSampling, AlphaOneIsProportional) {
  const std::vector<double> counts{3, 5, 12};
  const auto q = language_sampling_probs(counts, 1.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(q[i], counts[i] / 20.0, 1e-12);
  const std::vector<double> one{42};
  EXPECT_EQ(language_sampling_probs(one, 0.5), std::vector<double>{1.0});
}

TEST(LanguageSampling, RejectsEmptyAndZero) {
  EXPECT_THROW(language_sampling_probs({}, 0.5), std::invalid_argument);
  const std::vector<double> zero{1, 0};
  EXPECT_THROW(language_sampling_probs(zero, 0.5), std::invalid_argument);
  const std::vector<double> ok{1, 2};
  EXPECT_THROW(language_sampling_probs(ok, -1.0), std::invalid_argument);
}

TEST(LanguageSampling, ScaleInvariantAndFlattening) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> count(1.0, 1000.0), alpha(0.0, 0.99);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> counts(2 + trial % 5);
    for (auto& c : counts) c = std::floor(count(rng));
    counts[0] = 1.0;
    counts[1] = 1000.0;
    const double a = alpha(rng);
    const auto q = language_sampling_probs(counts, a);
    EXPECT_NEAR(std::accumulate(q.begin(), q.end(), 0.0), 1.0, 1e-12);
    auto scaled = counts;
    for (auto& c : scaled) c *= 37.0;
    const auto qs = language_sampling_probs(scaled, a);
    for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(q[i], qs[i], 1e-12);
    const auto p = language_sampling_probs(counts, 1.0);
    const auto smallest = std::min_element(counts.begin(), counts.end()) - counts.begin();
    EXPECT_GT(q[smallest], p[smallest]);
  }
}

TEST(BatchSampler, EmpiricalFrequenciesWithinThreeSigma) {
  const std::vector<double> counts{1, 4};
  const auto q = language_sampling_probs(counts, 0.5);
  BatchSampler sampler({10, 40}, q, 2024);
  const std::size_t draws = 10000;
  std::size_t first = 0;
  for (std::size_t i = 0; i < draws; ++i) first += sampler.next(4).source == 0;
  const double sigma = std::sqrt(draws * q[0] * q[1]);
  EXPECT_LE(std::abs(static_cast<double>(first) - draws * q[0]), 3 * sigma);
}

TEST(BatchSampler, SingleSourceAndDeterminism) {
  BatchSampler one({5}, {1.0}, 1);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(one.next(3).source, 0u);
  BatchSampler a({50, 30}, {0.5, 0.5}, 9), b({50, 30}, {0.5, 0.5}, 9);
  for (int i = 0; i < 50; ++i) {
    const auto x = a.next(8), y = b.next(8);
    EXPECT_EQ(x.source, y.source);
    EXPECT_EQ(x.items, y.items);
  }
}

TEST(BatchSampler, WithoutReplacementUnlessSourceIsSmall) {
  BatchSampler big({100}, {1.0}, 3);
  for (int i = 0; i < 50; ++i) {
    const auto batch = big.next(30);
    EXPECT_EQ(std::set<std::size_t>(batch.items.begin(), batch.items.end()).size(), 30u);
    for (auto item : batch.items) EXPECT_LT(item, 100u);
  }
  BatchSampler small({3}, {1.0}, 3);
  const auto batch = small.next(10);
  EXPECT_EQ(batch.items.size(), 10u);
  for (auto item : batch.items) EXPECT_LT(item, 3u);
  EXPECT_THROW(BatchSampler({0, 0}, {0.5, 0.5}, 1), std::invalid_argument);
}

std::vector<std::int32_t> plain_tokens(std::size_t n) {
  std::vector<std::int32_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = 4 + static_cast<std::int32_t>(i % 500);
  return ids;
}

TEST(MlmMask, ZeroProbabilitySelectsNothing) {
  const auto ids = plain_tokens(1000);
  const auto m = mlm_mask(ids, 0.0, 512, 1ull);
  EXPECT_TRUE(m.positions.empty());
  EXPECT_TRUE(m.labels.empty());
  EXPECT_EQ(m.ids, ids);
}

TEST(MlmMask, SelectedFractionMatchesProbability) {
  const auto ids = plain_tokens(100000);
  const auto m = mlm_mask(ids, 0.3, 512, 5ull);
  EXPECT_NEAR(static_cast<double>(m.positions.size()) / ids.size(), 0.30, 0.01);
  for (std::size_t i = 0; i < m.positions.size(); ++i) EXPECT_EQ(m.labels[i], ids[m.positions[i]]);
}

TEST(MlmMask, CorruptionSplitWithinThreeSigma) {
  const auto ids = plain_tokens(100000);
  const auto m = mlm_mask(ids, 1.0, 512, 6ull);
  ASSERT_EQ(m.positions.size(), ids.size());
  std::size_t masked = 0, kept = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (m.ids[i] == kMaskId) {
      ++masked;
    } else if (m.ids[i] == ids[i]) {
      ++kept;
    }
  }
  // A random replacement can coincide with the original id (1/508 of the 10%).
  const double n = ids.size();
  auto within = [&](double observed, double p) { return std::abs(observed - n * p) <= 3 * std::sqrt(n * p * (1 - p)); };
  EXPECT_TRUE(within(masked, 0.8)) << masked;
  EXPECT_TRUE(within(kept, 0.1 + 0.1 / 508.0)) << kept;
  EXPECT_TRUE(within(n - masked - kept, 0.1 - 0.1 / 508.0));
  for (auto id : m.ids) EXPECT_LT(id, 512);
}

TEST(MlmMask, SpecialTokensAreNeverSelected) {
  std::vector<std::int32_t> ids{kClsId, 10, 11, kSepId, 12, kPadId};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto m = mlm_mask(ids, 1.0, 64, seed);
    EXPECT_EQ(m.positions, (std::vector<std::size_t>{1, 2, 4}));
    EXPECT_EQ(m.ids[0], kClsId);
    EXPECT_EQ(m.ids[3], kSepId);
  }
  EXPECT_THROW(mlm_mask(ids, 1.5, 64, 1ull), std::invalid_argument);
}

TEST(Chunk, SplitsLongTexts) {
  const auto ids = plain_tokens(5000);
  const auto chunks = chunk(ids, 2048);
  ASSERT_EQ(chunks.size(), 3u);
  EXPECT_EQ(chunks[0].size(), 2048u);
  EXPECT_EQ(chunks[1].size(), 2048u);
  EXPECT_EQ(chunks[2].size(), 904u);
  EXPECT_EQ(chunk(plain_tokens(100), 2048), (std::vector<std::vector<std::int32_t>>{plain_tokens(100)}));
  EXPECT_EQ(chunk(plain_tokens(2048), 2048).size(), 1u);
  EXPECT_THROW(chunk(ids, 1), std::invalid_argument);
}

TEST(Chunk, ConcatenationRestoresInput) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto ids = plain_tokens(rng() % 3000);
    const std::size_t max_len = 2 + rng() % 700;
    std::vector<std::int32_t> joined;
    for (const auto& c : chunk(ids, max_len)) {
      EXPECT_LE(c.size(), max_len);
      EXPECT_FALSE(c.empty());
      joined.insert(joined.end(), c.begin(), c.end());
    }
    EXPECT_EQ(joined, ids);
  }
}

TEST(Downsample, KeepsLongAndThinsShort) {
  std::vector<std::size_t> lengths(20000, 100);
  for (std::size_t i = 0; i < lengths.size(); i += 2) lengths[i] = 4096;
  const auto kept = downsample_short(lengths, 2048, 0.25, 3);
  std::size_t long_kept = 0, short_kept = 0;
  for (auto i : kept) (lengths[i] >= 2048 ? long_kept : short_kept)++;
  EXPECT_EQ(long_kept, 10000u);
  EXPECT_NEAR(short_kept / 10000.0, 0.25, 0.015);
  EXPECT_EQ(downsample_short(lengths, 2048, 0.25, 3), kept);
}

TEST(BatchSchedule, TableValues) {
  const auto e = BatchSchedule::embedding();
  EXPECT_EQ(e.buckets[e.bucket_for(600)].batch_size, 384u);
  EXPECT_EQ(e.buckets[e.bucket_for(100)].batch_size, 768u);
  EXPECT_EQ(e.buckets[e.bucket_for(100)].sub_batch_size, 256u);
  EXPECT_EQ(e.buckets[e.bucket_for(500)].batch_size, 384u);
  EXPECT_EQ(e.buckets[e.bucket_for(7999)].sub_batch_size, 16u);
  EXPECT_THROW(e.bucket_for(8000), std::out_of_range);
  const auto r = BatchSchedule::reranker();
  EXPECT_EQ(r.buckets[0].batch_size, 512u);
  EXPECT_EQ(r.buckets[3].batch_size, 160u);
}

TEST(BatchSchedule, FileRoundTripAndValidation) {
  std::stringstream text;
  BatchSchedule::embedding().write(text);
  EXPECT_EQ(BatchSchedule::parse(text).buckets, BatchSchedule::embedding().buckets);
  std::istringstream capped("# toy\n100 = 8 32\n");
  EXPECT_EQ(BatchSchedule::parse(capped).buckets[0].sub_batch_size, 8u);
  std::istringstream decreasing("500 = 8 4\n100 = 8 4\n");
  EXPECT_THROW(BatchSchedule::parse(decreasing), ConfigError);
  std::istringstream garbage("500 : 8 4\n");
  EXPECT_THROW(BatchSchedule::parse(garbage), ConfigError);
  std::istringstream zero("500 = 0 4\n");
  EXPECT_THROW(BatchSchedule::parse(zero), ConfigError);
}

TEST(DynamicBatches, PartitionsInputByBucket) {
  std::mt19937_64 rng(13);
  const auto schedule = BatchSchedule::embedding();
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> lengths(rng() % 3000);
    for (auto& l : lengths) l = rng() % 8000;
    const auto batches = dynamic_batches(lengths, {}, schedule);
    std::vector<int> seen(lengths.size(), 0);
    for (const auto& b : batches) {
      EXPECT_LE(b.examples.size(), schedule.buckets[b.bucket].batch_size);
      EXPECT_EQ(b.sub_batch_size, schedule.buckets[b.bucket].sub_batch_size);
      for (auto i : b.examples) {
        ++seen[i];
        EXPECT_EQ(schedule.bucket_for(lengths[i]), b.bucket);
      }
    }
    for (int s : seen) EXPECT_EQ(s, 1);
  }
  EXPECT_TRUE(dynamic_batches({}, {}, schedule).empty());
}

TEST(DynamicBatches, OverlongExampleIsNamed) {
  const std::vector<std::size_t> lengths{10, 9000};
  const std::vector<std::string> ids{"ok", "too-long"};
  try {
    dynamic_batches(lengths, ids, BatchSchedule::embedding());
    FAIL();
  } catch (const std::out_of_range& e) {
    EXPECT_NE(std::string(e.what()).find("too-long"), std::string::npos);
  }
}

TEST(Tokenizer, DeterministicWithByteFallback) {
  const std::vector<std::string> texts{"the cat sat", "the dog sat", "The cat!"};
  const auto tok = WordByteTokenizer::train(texts, 100);
  EXPECT_EQ(tok.vocab_size() % 64, 0u);
  EXPECT_EQ(tok.words(), (std::vector<std::string>{"the", "cat", "sat", "!", "dog"}));
  const auto ids = tok.tokenize("The cat ate!");
  const std::vector<std::int32_t> expect{260, 261, 4 + 'a', 4 + 't', 4 + 'e', 263};
  EXPECT_EQ(ids, expect);
  for (auto id : ids) EXPECT_LT(static_cast<std::size_t>(id), tok.used_ids());
  EXPECT_EQ(tok.token_text(260), "the");
  EXPECT_EQ(WordByteTokenizer::train(texts, 100).words(), tok.words());
}

TEST(Tokenizer, SaveLoadRoundTrip) {
  const std::vector<std::string> texts{"alpha beta gamma", "beta gamma", "gamma"};
  const auto tok = WordByteTokenizer::train(texts, 2);
  EXPECT_EQ(tok.words(), (std::vector<std::string>{"gamma", "beta"}));
  std::stringstream s;
  tok.save(s);
  const auto back = WordByteTokenizer::load(s);
  EXPECT_EQ(back.words(), tok.words());
  EXPECT_EQ(back.tokenize("alpha beta"), tok.tokenize("alpha beta"));
  std::istringstream bad("nonsense\n");
  EXPECT_THROW(WordByteTokenizer::load(bad), FormatError);
}

TEST(Tokenizer, ModelInputs) {
  const std::vector<std::string> texts{"a b c d e f"};
  const auto tok = WordByteTokenizer::train(texts, 100);
  EXPECT_EQ(encode_text(tok, "a b c", 3), (std::vector<std::int32_t>{kClsId, 260, 261}));
  const auto pair = encode_pair(tok, "a b c d", "e f", 16);
  EXPECT_EQ(pair, (std::vector<std::int32_t>{kClsId, 260, 261, 262, 263, kSepId, 264, 265}));
  const auto tight = encode_pair(tok, "a b c d e f", "a b c d e f", 8);
  EXPECT_EQ(tight.size(), 8u);
  EXPECT_EQ(tight[4], kSepId);
}

TEST(Data, CorpusJsonlWithLineNumbers) {
  std::istringstream good(R"({"id": "d1", "text": "hello", "lang": "en"}

{"id": "d2", "text": "world", "lang": "de"})");
  const auto docs = read_corpus(good, "c.jsonl");
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[1].lang, "de");
  std::istringstream bad("{\"id\": \"d1\", \"text\": \"x\"}\n{\"id\": 3, \"text\": \"y\"}\n");
  try {
    read_corpus(bad, "c.jsonl");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("c.jsonl:2:"), std::string::npos);
  }
  std::istringstream broken("{not json}\n");
  EXPECT_THROW(read_corpus(broken), DataError);
  std::stringstream round;
  write_corpus(round, docs);
  const auto again = read_corpus(round);
  EXPECT_EQ(again[0].text, "hello");
  EXPECT_EQ(group_by_language(docs).size(), 2u);
}

TEST(Data, PairsEnforceNegativeCount) {
  std::istringstream in(
      R"({"query": "q", "positive": "p", "negatives": ["a","b"], "lang": "en", "source": "s"})"
      "\n");
  const auto pairs = read_pairs(in);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].negatives.size(), 2u);
  std::istringstream again(R"({"query": "q", "positive": "p", "negatives": ["a","b"]})");
  EXPECT_THROW(read_pairs(again, "p.jsonl", kEmbeddingHardNegatives), DataError);
  std::istringstream empty_pos(R"({"query": "q", "positive": ""})");
  EXPECT_THROW(read_pairs(empty_pos), DataError);
}

TEST(Synthetic, UniqueEntityPairsAndRelevantQueries) {
  SyntheticSpec spec;
  spec.num_docs = 300;
  const auto corpus = generate_corpus(spec);
  EXPECT_EQ(corpus.docs.size(), 300u);
  std::set<std::pair<std::size_t, std::size_t>> pairs(corpus.entities.begin(), corpus.entities.end());
  EXPECT_EQ(pairs.size(), 300u);
  std::vector<std::size_t> idx{0, 5, 17};
  const auto queries = generate_queries(spec, corpus, idx, 4);
  ASSERT_EQ(queries.size(), 3u);
  EXPECT_EQ(queries[1].doc_id, "d5");
  for (const auto& w : split_words(queries[1].text)) {
    EXPECT_NE(corpus.docs[5].text.find(w), std::string::npos) << w;
  }
  const auto again = generate_corpus(spec);
  EXPECT_EQ(again.docs[42].text, corpus.docs[42].text);
  const auto examples = generate_pairs(spec, corpus, idx, 6, 4, 5);
  for (const auto& ex : examples) {
    EXPECT_EQ(ex.negatives.size(), 10u);
    for (const auto& n : ex.negatives) EXPECT_NE(n, ex.positive);
  }
}

}  // namespace
}  // namespace lcret
