#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "gradcheck.hpp"
#include "lcret/encoder/encoder.hpp"

namespace lcret {
namespace {

EncoderConfig random_config(std::mt19937_64& rng, Precision precision) {
  std::uniform_int_distribution<std::size_t> layers(1, 2), heads(1, 3), half(1, 3), ffn(4, 24);
  EncoderConfig c;
  c.num_layers = layers(rng);
  c.num_heads = heads(rng);
  c.head_size = 2 * half(rng);
  c.hidden_size = c.num_heads * c.head_size;
  c.ffn_inner = ffn(rng);
  c.vocab_size = 64;
  c.max_seq_len = 64;
  c.dropout = 0.0;
  c.precision = precision;
  return c;
}

std::vector<std::vector<std::int32_t>> random_sequences(std::mt19937_64& rng, std::span<const std::size_t> lengths,
                                                        std::size_t vocab) {
  std::uniform_int_distribution<std::int32_t> id(0, static_cast<std::int32_t>(vocab) - 1);
  std::vector<std::vector<std::int32_t>> out;
  for (std::size_t len : lengths) {
    std::vector<std::int32_t> s(len);
    for (auto& t : s) t = id(rng);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::int32_t> to_grid(const std::vector<std::vector<std::int32_t>>& seqs, std::size_t width) {
  std::vector<std::int32_t> grid(seqs.size() * width, kPadId);
  for (std::size_t b = 0; b < seqs.size(); ++b) std::copy(seqs[b].begin(), seqs[b].end(), grid.begin() + b * width);
  return grid;
}

std::vector<std::size_t> real_rows(std::span<const std::size_t> lengths, std::size_t width) {
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    for (std::size_t p = 0; p < lengths[b]; ++p) rows.push_back(b * width + p);
  }
  return rows;
}

template <Real T>
std::vector<std::vector<double>> grads(ParameterSet<T>& params) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = params.tensor(i).grad();
    out.emplace_back(g.begin(), g.end());
  }
  return out;
}

TEST(Rope, PositionZeroIsIdentity) {
  std::mt19937_64 rng(1);
  const auto x = Tensor<double>::normal({3, 8}, 1.0, rng);
  const std::vector<std::size_t> pos(3, 0);
  const auto y = rope_apply(x, pos, 10000.0, 4);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], y[i]);
}

TEST(Rope, UnitPairAtPositionOne) {
  Tensor<double> x({1, 4}, {1, 0, 0, 0});
  const std::vector<std::size_t> pos{1};
  const auto y = rope_apply(x, pos, 10000.0, 4);
  EXPECT_NEAR(y[0], std::cos(1.0), 1e-12);
  EXPECT_NEAR(y[2], std::sin(1.0), 1e-12);
  EXPECT_NEAR(y[0], 0.5403, 1e-4);
  EXPECT_NEAR(y[2], 0.8415, 1e-4);
}

TEST(Rope, AcceptsStageBasesAndRejectsOddHeads) {
  Tensor<double> x({1, 4}, {1, 2, 3, 4});
  const std::vector<std::size_t> pos{7};
  EXPECT_NO_THROW(rope_apply(x, pos, 10000.0, 4));
  EXPECT_NO_THROW(rope_apply(x, pos, 160000.0, 4));
  EXPECT_THROW(rope_apply(Tensor<double>({1, 3}), pos, 10000.0, 3), ConfigError);
  EncoderConfig c = EncoderConfig::toy(100);
  c.head_size = 3;
  c.num_heads = 1;
  c.hidden_size = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Rope, DotProductsDependOnlyOnRelativeOffset) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = Tensor<double>::normal({5, 12}, 1.0, rng);
    const auto k = Tensor<double>::normal({5, 12}, 1.0, rng);
    std::vector<std::size_t> pos{0, 1, 2, 3, 4}, shifted(5);
    const std::size_t s = 1 + static_cast<std::size_t>(rng() % 500);
    for (std::size_t i = 0; i < 5; ++i) shifted[i] = pos[i] + s;
    const auto q0 = rope_apply(q, pos, 10000.0, 6), k0 = rope_apply(k, pos, 10000.0, 6);
    const auto q1 = rope_apply(q, shifted, 10000.0, 6), k1 = rope_apply(k, shifted, 10000.0, 6);
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 5; ++j) {
          double a = 0, b = 0;
          for (std::size_t d = h * 6; d < h * 6 + 6; ++d) {
            a += q0.at(i, d) * k0.at(j, d);
            b += q1.at(i, d) * k1.at(j, d);
          }
          EXPECT_NEAR(a, b, 1e-6);
        }
      }
    }
  }
}

TEST(Unpad, PrefixSumOffsets) {
  const std::vector<std::int32_t> grid{10, 11, 2, 20, 21, 22};
  const std::vector<std::size_t> lengths{2, 3};
  const auto batch = unpad(grid, 2, 3, lengths);
  EXPECT_EQ(batch.total_tokens(), 5u);
  EXPECT_EQ(batch.cu_seqlens, (std::vector<std::size_t>{0, 2, 5}));
  EXPECT_EQ(batch.tokens, (std::vector<std::int32_t>{10, 11, 20, 21, 22}));
  EXPECT_EQ(batch.positions, (std::vector<std::size_t>{0, 1, 0, 1, 2}));
}

TEST(Unpad, FullRowsAndSingleToken) {
  const std::vector<std::int32_t> grid{4, 5, 6, 7, 8, 9};
  const std::vector<std::size_t> full{3, 3};
  const auto batch = unpad(grid, 2, 3, full);
  EXPECT_EQ(batch.tokens, grid);
  EXPECT_EQ(batch.cu_seqlens, (std::vector<std::size_t>{0, 3, 6}));
  const std::vector<std::size_t> one{1};
  const auto single = unpad(std::span(grid).first(3), 1, 3, one);
  EXPECT_EQ(single.cu_seqlens, (std::vector<std::size_t>{0, 1}));
}

TEST(Unpad, RejectsBadLengths) {
  const std::vector<std::int32_t> grid{1, 2, 3, 4};
  const std::vector<std::size_t> zero{0, 2}, wide{2, 3};
  EXPECT_THROW(unpad(grid, 2, 2, zero), ShapeError);
  EXPECT_THROW(unpad(grid, 2, 2, wide), ShapeError);
}

TEST(Repad, RoundTripAndZeroPads) {
  std::mt19937_64 rng(3);
  const std::vector<std::size_t> lengths{2, 3};
  const std::vector<std::int32_t> grid{1, 2, 0, 3, 4, 5};
  const auto batch = unpad(grid, 2, 3, lengths);
  const auto values = Tensor<double>::normal({5, 4}, 1.0, rng);
  const auto out = repad(batch, values, 3);
  ASSERT_EQ(out.shape(), (Shape{2, 3, 4}));
  for (std::size_t h = 0; h < 4; ++h) {
    EXPECT_EQ(out[(0 * 3 + 2) * 4 + h], 0.0);
    EXPECT_EQ(out[(0 * 3 + 1) * 4 + h], values.at(1, h));
    EXPECT_EQ(out[(1 * 3 + 2) * 4 + h], values.at(4, h));
  }
  EXPECT_THROW(repad(batch, Tensor<double>({4, 4}), 3), ShapeError);
}

TEST(Repad, SingleFullSequenceIsReshape) {
  std::mt19937_64 rng(4);
  const std::vector<std::int32_t> grid{1, 2, 3};
  const std::vector<std::size_t> lengths{3};
  const auto values = Tensor<double>::normal({3, 2}, 1.0, rng);
  const auto out = repad(unpad(grid, 1, 3, lengths), values, 3);
  for (std::size_t i = 0; i < values.size(); ++i) EXPECT_EQ(out[i], values[i]);
}

TEST(Encoder, SingleTokenBatch) {
  EncoderConfig c = EncoderConfig::toy(64);
  c.num_layers = 1;
  const Encoder<float> enc(c, 5);
  const auto out = enc.encode(UnpaddedBatch::from_sequences({{kClsId}}));
  EXPECT_EQ(out.token_hiddens.shape(), (Shape{1, c.hidden_size}));
  for (std::size_t h = 0; h < c.hidden_size; ++h) EXPECT_EQ(out.cls_hiddens[h], out.token_hiddens[h]);
}

TEST(Encoder, ClsRowsSitAtSequenceOffsets) {
  std::mt19937_64 rng(6);
  auto c = random_config(rng, Precision::f64);
  const Encoder<double> enc(c, 6);
  const std::vector<std::size_t> lengths{4, 1, 3};
  const auto batch = UnpaddedBatch::from_sequences(random_sequences(rng, lengths, c.vocab_size));
  const auto out = enc.encode(batch);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t h = 0; h < c.hidden_size; ++h) {
      EXPECT_EQ(out.cls_hiddens.at(b, h), out.token_hiddens.at(batch.cu_seqlens[b], h));
    }
  }
}

TEST(Encoder, RejectsOutOfRangeIdsAndPositions) {
  EncoderConfig c = EncoderConfig::toy(64);
  c.max_seq_len = 4;
  const Encoder<float> enc(c);
  EXPECT_THROW(enc.encode(UnpaddedBatch::from_sequences({{0, 64}})), std::out_of_range);
  EXPECT_THROW(enc.encode(UnpaddedBatch::from_sequences({{0, -1}})), std::out_of_range);
  EXPECT_THROW(enc.encode(UnpaddedBatch::from_sequences({{0, 5, 6, 7, 8}})), std::out_of_range);
}

TEST(Encoder, ConfigInvariants) {
  EXPECT_NO_THROW(EncoderConfig::base().validate());
  EXPECT_EQ(EncoderConfig::base().vocab_size % 64, 0u);
  EncoderConfig c = EncoderConfig::toy(100);
  EXPECT_EQ(c.vocab_size, 128u);
  c.attention_dropout = 0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = EncoderConfig::toy(100);
  c.hidden_size = 65;
  EXPECT_THROW(c.validate(), ConfigError);
  c = EncoderConfig::toy(100);
  c.vocab_size = 100;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(Encoder<double>(EncoderConfig::toy(64)), ConfigError);
}

template <Real T>
void check_padded_equivalence(std::uint64_t seed, double tol) {
  std::mt19937_64 rng(seed);
  auto c = random_config(rng, precision_of<T>());
  Encoder<T> enc(c, seed);
  std::uniform_int_distribution<std::size_t> len(1, 7), count(1, 4);
  std::vector<std::size_t> lengths(count(rng));
  for (auto& l : lengths) l = len(rng);
  if (seed == 0) lengths = {5, 2, 7};
  std::size_t width = 0;
  for (auto l : lengths) width = std::max(width, l);
  width += seed % 3;
  const auto seqs = random_sequences(rng, lengths, c.vocab_size);
  const auto batch = UnpaddedBatch::from_sequences(seqs);
  const auto grid = to_grid(seqs, width);
  const auto rows = real_rows(lengths, width);

  Graph<T> gu;
  const auto vu = enc.forward(gu, batch);
  gu.backward(testing::probe(gu, vu.tokens, seed + 99));
  const auto unpadded = gu.value(vu.tokens);
  const auto grad_u = grads(enc.params());
  enc.params().zero_grad();

  Graph<T> gp;
  const Var vp = gp.gather_rows(enc.forward_padded(gp, grid, lengths.size(), width, lengths), rows);
  gp.backward(testing::probe(gp, vp, seed + 99));
  const auto padded = gp.value(vp);
  const auto grad_p = grads(enc.params());
  enc.params().zero_grad();

  EXPECT_LE(max_relative_error(unpadded.values(), padded.values()), tol) << "seed " << seed;
  for (std::size_t i = 0; i < grad_u.size(); ++i) {
    EXPECT_LE(max_relative_error(grad_u[i], grad_p[i]), tol) << enc.params().name(i) << " seed " << seed;
  }
  const auto inference = enc.encode_padded(grid, lengths.size(), width, lengths);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t h = 0; h < c.hidden_size; ++h) {
      EXPECT_NEAR(inference.at(rows[r], h), padded.at(r, h), tol);
    }
  }
}

TEST(Encoder, UnpaddedMatchesMaskedPaddedForward64) {
  for (std::uint64_t seed = 0; seed < 24; ++seed) check_padded_equivalence<double>(seed, 1e-5);
}

TEST(Encoder, UnpaddedMatchesMaskedPaddedForward32) {
  for (std::uint64_t seed = 100; seed < 124; ++seed) check_padded_equivalence<float>(seed, 1e-3);
}

TEST(Encoder, SequencesAreIsolated) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed + 500);
    auto c = random_config(rng, Precision::f64);
    const Encoder<double> enc(c, seed);
    const std::vector<std::size_t> lengths{3, 5, 4};
    auto seqs = random_sequences(rng, lengths, c.vocab_size);
    const auto before = enc.encode(UnpaddedBatch::from_sequences(seqs));
    for (auto& t : seqs[1]) t = static_cast<std::int32_t>((t + 7) % 64);
    const auto batch = UnpaddedBatch::from_sequences(seqs);
    const auto after = enc.encode(batch);
    for (std::size_t b : {0u, 2u}) {
      for (std::size_t r = batch.cu_seqlens[b]; r < batch.cu_seqlens[b + 1]; ++r) {
        for (std::size_t h = 0; h < c.hidden_size; ++h) {
          EXPECT_NEAR(before.token_hiddens.at(r, h), after.token_hiddens.at(r, h), 1e-12);
        }
      }
    }
  }
}

TEST(Encoder, UniformPositionShiftLeavesOutputsUnchanged) {
  std::mt19937_64 rng(7);
  auto c = random_config(rng, Precision::f64);
  c.max_seq_len = 4096;
  const Encoder<double> enc(c, 7);
  const std::vector<std::size_t> lengths{6};
  auto batch = UnpaddedBatch::from_sequences(random_sequences(rng, lengths, c.vocab_size));
  const auto base = enc.encode(batch);
  for (auto& p : batch.positions) p += 1000;
  const auto shifted = enc.encode(batch);
  EXPECT_LE(max_relative_error(base.token_hiddens.values(), shifted.token_hiddens.values()), 1e-6);
}

TEST(Encoder, ScoredPairsCountOnlyRealTokens) {
  const std::vector<std::size_t> lengths{5, 2, 7};
  const auto batch = UnpaddedBatch::from_sequences({{0, 0, 0, 0, 0}, {0, 0}, {0, 0, 0, 0, 0, 0, 0}});
  EXPECT_EQ(batch.attention_blocks().scored_pairs(), 25u + 4u + 49u);
  EXPECT_LT(batch.attention_blocks().scored_pairs(), 3u * 7u * 7u);
  EXPECT_EQ(padded_attention_blocks(lengths, 7).scored_pairs(), 3u * 7u * 7u);
}

TEST(Flops, MatmulShapeOracleAndSkewedBatch) {
  EncoderConfig c = EncoderConfig::toy(64);
  auto oracle = [&](std::uint64_t rows, std::uint64_t pairs) {
    const std::uint64_t H = c.hidden_size, F = c.ffn_inner;
    const std::uint64_t qkv = 2 * rows * H * 3 * H, out = 2 * rows * H * H;
    const std::uint64_t gate_up = 2 * 2 * rows * H * F, down = 2 * rows * F * H;
    const std::uint64_t scores = 2 * pairs * c.head_size * c.num_heads, mix = scores;
    return c.num_layers * (qkv + out + gate_up + down + scores + mix);
  };
  const std::vector<std::size_t> lengths{5, 2, 7};
  EXPECT_EQ(forward_flops(c, lengths), oracle(14, 25 + 4 + 49));
  EXPECT_EQ(forward_flops(c, lengths, 7), oracle(21, 3 * 49));
  const std::vector<std::size_t> equal(4, 9);
  EXPECT_EQ(forward_flops(c, equal), forward_flops(c, equal, 9));
  EXPECT_THROW(forward_flops(c, lengths, 6), ShapeError);

  std::vector<std::size_t> skewed(32, 32);
  skewed[0] = 2048;
  const double ratio =
      static_cast<double>(forward_flops(c, skewed)) / static_cast<double>(forward_flops(c, skewed, 2048));
  EXPECT_LT(ratio, 0.10);
}

TEST(Mlm, LogitsMatchFullProjectionRows) {
  std::mt19937_64 rng(8);
  auto c = random_config(rng, Precision::f64);
  const Encoder<double> enc(c, 8);
  const std::vector<std::size_t> lengths{4, 3};
  const auto batch = UnpaddedBatch::from_sequences(random_sequences(rng, lengths, c.vocab_size));
  const auto out = enc.encode(batch);
  std::vector<std::size_t> all(batch.total_tokens());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto full = enc.mlm_logits(out, all);
  EXPECT_EQ(full.rows(), batch.total_tokens());
  EXPECT_EQ(full.cols(), c.vocab_size);
  const std::vector<std::size_t> subset{5, 1, 3};
  const auto part = enc.mlm_logits(out, subset);
  ASSERT_EQ(part.rows(), 3u);
  for (std::size_t i = 0; i < subset.size(); ++i) {
    for (std::size_t v = 0; v < c.vocab_size; ++v) EXPECT_NEAR(part.at(i, v), full.at(subset[i], v), 1e-6);
  }
  EXPECT_EQ(enc.mlm_logits(out, {}).rows(), 0u);
  const std::vector<std::size_t> bad{7};
  EXPECT_THROW(enc.mlm_logits(out, bad), std::out_of_range);
}

TEST(ContextScaling, RevNtkAndStageSchedule) {
  EncoderConfig c = EncoderConfig::toy(64);
  c.rope_base = 160000.0;
  EXPECT_DOUBLE_EQ(context_scaling(c, 1.0 / 8.0).rope_base, 20000.0);
  EXPECT_EQ(context_scaling(c, 1.0), c);
  c.rope_base = 10000.0;
  const auto stage2 = context_scaling(c, 16.0);
  EXPECT_DOUBLE_EQ(stage2.rope_base, 160000.0);
  EXPECT_EQ(stage2.hidden_size, c.hidden_size);
  EXPECT_THROW(context_scaling(c, 0.0), ConfigError);
  EXPECT_THROW(context_scaling(c, -2.0), ConfigError);
}

TEST(Encoder, CheckpointRoundTrip) {
  std::mt19937_64 rng(9);
  auto c = random_config(rng, Precision::f64);
  const Encoder<double> enc(c, 9);
  std::stringstream bytes;
  enc.to_checkpoint().write(bytes);
  const auto restored = Encoder<double>::from_checkpoint(Checkpoint::read(bytes));
  EXPECT_EQ(restored.config(), c);
  const auto batch = UnpaddedBatch::from_sequences({{0, 5, 9, 1}});
  const auto a = enc.encode(batch), b = restored.encode(batch);
  for (std::size_t i = 0; i < a.token_hiddens.size(); ++i) EXPECT_EQ(a.token_hiddens[i], b.token_hiddens[i]);
  EXPECT_TRUE(enc.to_checkpoint().contains("layer.0.ffn.gate.weight"));
}

TEST(Encoder, DropoutOnlyInTraining) {
  EncoderConfig c = EncoderConfig::toy(64);
  c.num_layers = 1;
  Encoder<float> enc(c, 10);
  const auto batch = UnpaddedBatch::from_sequences({{0, 5, 9, 1, 7, 8}});
  std::mt19937_64 rng(1);
  Graph<float> g1(false), g2(false);
  const auto train = g1.value(enc.forward(g1, batch, {true, &rng}).tokens);
  const auto eval = g2.value(enc.forward(g2, batch).tokens);
  EXPECT_GT(max_relative_error(train.values(), eval.values()), 1e-3);
  const auto inference = enc.encode(batch).token_hiddens;
  EXPECT_LE(max_relative_error(eval.values(), inference.values()), 0.0);
}

}  // namespace
}  // namespace lcret
