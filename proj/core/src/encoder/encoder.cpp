#include "lcret/encoder/encoder.hpp"

#include <cmath>
#include <string>

#include "lcret/numerics/kernels.hpp"

namespace lcret {

void EncoderConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("encoder config: " + what); };
  if (num_layers == 0) fail("num_layers must be positive");
  if (num_heads == 0 || head_size == 0) fail("num_heads and head_size must be positive");
  if (hidden_size != num_heads * head_size) {
    fail("hidden_size " + std::to_string(hidden_size) + " != num_heads x head_size (" + std::to_string(num_heads) +
         " x " + std::to_string(head_size) + ")");
  }
  if (head_size % 2 != 0) fail("head_size must be even for rotary pairs");
  if (ffn_inner == 0) fail("ffn_inner must be positive");
  if (vocab_size <= static_cast<std::size_t>(kNumSpecialTokens) || vocab_size % 64 != 0) {
    fail("vocab_size " + std::to_string(vocab_size) + " must be a positive multiple of 64");
  }
  if (!(rope_base > 0.0)) fail("rope_base must be positive");
  if (max_seq_len == 0) fail("max_seq_len must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (attention_dropout != 0.0) fail("attention_dropout is fixed at 0");
}

EncoderConfig EncoderConfig::toy(std::size_t vocab_size) {
  EncoderConfig c;
  c.num_layers = 2;
  c.hidden_size = 64;
  c.num_heads = 4;
  c.head_size = 16;
  c.ffn_inner = 128;
  c.vocab_size = round_up_vocab(vocab_size);
  return c;
}

EncoderConfig context_scaling(const EncoderConfig& config, double factor) {
  if (!(factor > 0.0)) throw ConfigError("context_scaling: factor must be positive");
  EncoderConfig out = config;
  out.rope_base = config.rope_base * factor;
  return out;
}

void store_config(Checkpoint& ckpt, const EncoderConfig& c) {
  ckpt.put("meta.encoder_config",
           Tensor<double>({11}, {double(c.num_layers), double(c.hidden_size), double(c.num_heads),
                                 double(c.head_size), double(c.ffn_inner), double(c.vocab_size), c.rope_base,
                                 double(c.max_seq_len), c.dropout, c.attention_dropout,
                                 double(static_cast<int>(c.precision))}));
}

EncoderConfig load_config(const Checkpoint& ckpt) {
  const auto v = ckpt.get<double>("meta.encoder_config");
  if (v.size() != 11) throw FormatError("meta.encoder_config has " + std::to_string(v.size()) + " fields, expected 11");
  auto count = [&](std::size_t i) { return static_cast<std::size_t>(v[i]); };
  EncoderConfig c;
  c.num_layers = count(0);
  c.hidden_size = count(1);
  c.num_heads = count(2);
  c.head_size = count(3);
  c.ffn_inner = count(4);
  c.vocab_size = count(5);
  c.rope_base = v[6];
  c.max_seq_len = count(7);
  c.dropout = v[8];
  c.attention_dropout = v[9];
  c.precision = v[10] == 0.0 ? Precision::f32 : Precision::f64;
  c.validate();
  return c;
}

std::uint64_t forward_flops(const EncoderConfig& config, std::span<const std::size_t> lengths,
                            std::size_t padded_width) {
  const std::uint64_t H = config.hidden_size, F = config.ffn_inner;
  std::uint64_t rows = 0, pairs = 0;
  for (std::size_t len : lengths) {
    if (padded_width > 0 && len > padded_width) throw ShapeError("forward_flops: sequence longer than the padded width");
    const std::uint64_t n = padded_width > 0 ? padded_width : len;
    rows += n;
    pairs += n * n;
  }
  const std::uint64_t per_layer = 2 * rows * (4 * H * H + 3 * H * F) + 4 * pairs * H;
  return per_layer * config.num_layers;
}

template <Real T>
Tensor<T> rope_apply(const Tensor<T>& states, std::span<const std::size_t> positions, double base,
                     std::size_t head_size) {
  if (head_size == 0 || head_size % 2 != 0) throw ConfigError("rope_apply: head_size must be even");
  if (!(base > 0.0)) throw ConfigError("rope_apply: base must be positive");
  if (states.cols() % head_size != 0) throw ShapeError("rope_apply: width is not a multiple of head_size");
  if (positions.size() != states.rows()) throw ShapeError("rope_apply: need one position per row");
  Tensor<T> out = states.reshaped({states.rows(), states.cols()});
  const auto inv = kernels::rotary_inv_freq(base, head_size);
  kernels::rotary_rotate(out.data(), out.rows(), out.cols(), positions, std::span<const double>(inv), head_size, 1.0);
  return out;
}

template <Real T>
Encoder<T>::Encoder(EncoderConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  if (config_.precision != precision_of<T>()) {
    throw ConfigError("encoder config precision " + std::string(precision_name(config_.precision)) +
                      " does not match the instantiated scalar type");
  }
  std::mt19937_64 rng(seed);
  const std::size_t H = config_.hidden_size, F = config_.ffn_inner, V = config_.vocab_size;
  const T std_init = T(0.02);
  auto weight = [&](const std::string& name, Shape shape) {
    params_.add(name, Tensor<T>::normal(std::move(shape), std_init, rng));
  };
  auto zeros = [&](const std::string& name, std::size_t n) { params_.add(name, Tensor<T>({n})); };
  auto norm = [&](const std::string& prefix) {
    params_.add(prefix + ".scale", Tensor<T>::full({H}, T(1)));
    zeros(prefix + ".offset", H);
  };
  weight("embeddings.token.weight", {V, H});
  norm("embeddings.norm");
  for (std::size_t i = 0; i < config_.num_layers; ++i) {
    const std::string p = "layer." + std::to_string(i);
    weight(p + ".attention.qkv.weight", {H, 3 * H});
    zeros(p + ".attention.qkv.bias", 3 * H);
    weight(p + ".attention.output.weight", {H, H});
    zeros(p + ".attention.output.bias", H);
    norm(p + ".attention.norm");
    weight(p + ".ffn.gate.weight", {H, F});
    zeros(p + ".ffn.gate.bias", F);
    weight(p + ".ffn.up.weight", {H, F});
    zeros(p + ".ffn.up.bias", F);
    weight(p + ".ffn.down.weight", {F, H});
    zeros(p + ".ffn.down.bias", H);
    norm(p + ".ffn.norm");
  }
  weight("mlm.dense.weight", {H, H});
  zeros("mlm.dense.bias", H);
  norm("mlm.norm");
  zeros("mlm.decoder.bias", V);
  weight("head.sparse.weight", {H, 1});
  weight("head.rerank.weight", {H, 1});
}

template <Real T>
void Encoder<T>::set_rope_base(double base) {
  EncoderConfig next = config_;
  next.rope_base = base;
  next.validate();
  config_ = next;
}

template <Real T>
template <class Bind>
Var Encoder<T>::run_stream(Graph<T>& g, Bind&& bind, std::span<const std::int32_t> tokens,
                           std::span<const std::size_t> positions, const AttentionBlocks& blocks,
                           const ForwardOptions& options) const {
  const auto& c = config_;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= c.vocab_size) {
      throw std::out_of_range("encode: token id " + std::to_string(tokens[i]) + " outside vocabulary of " +
                              std::to_string(c.vocab_size));
    }
    if (positions[i] >= c.max_seq_len) {
      throw std::out_of_range("encode: position " + std::to_string(positions[i]) + " >= max_seq_len " +
                              std::to_string(c.max_seq_len));
    }
  }
  const bool drop = options.training && c.dropout > 0.0;
  if (drop && options.rng == nullptr) throw std::invalid_argument("encode: training with dropout needs an rng");

  auto linear = [&](Var x, const std::string& prefix) {
    return g.add(g.matmul(x, bind(prefix + ".weight")), bind(prefix + ".bias"));
  };
  auto norm = [&](Var x, const std::string& prefix) {
    return g.add(g.mul(g.layer_norm(x), bind(prefix + ".scale")), bind(prefix + ".offset"));
  };
  auto dropout = [&](Var x) {
    if (!drop) return x;
    const auto& v = g.value(x);
    Tensor<T> mask({v.rows(), v.cols()});
    std::bernoulli_distribution keep(1.0 - c.dropout);
    const T kept = T(1.0 / (1.0 - c.dropout));
    for (auto& m : mask.values()) m = keep(*options.rng) ? kept : T{0};
    return g.mul(x, g.constant(std::move(mask)));
  };

  const std::size_t H = c.hidden_size;
  Var x = g.embedding(bind("embeddings.token.weight"), tokens);
  x = norm(x, "embeddings.norm");
  for (std::size_t i = 0; i < c.num_layers; ++i) {
    const std::string p = "layer." + std::to_string(i);
    Var qkv = linear(x, p + ".attention.qkv");
    Var q = g.rotary(g.slice_cols(qkv, 0, H), positions, c.rope_base, c.head_size);
    Var k = g.rotary(g.slice_cols(qkv, H, 2 * H), positions, c.rope_base, c.head_size);
    Var v = g.slice_cols(qkv, 2 * H, 3 * H);
    Var attn = dropout(linear(g.attention(q, k, v, blocks, c.num_heads), p + ".attention.output"));
    x = norm(g.add(x, attn), p + ".attention.norm");
    Var gated = g.mul(g.gelu(linear(x, p + ".ffn.gate")), linear(x, p + ".ffn.up"));
    Var ffn = dropout(linear(gated, p + ".ffn.down"));
    x = norm(g.add(x, ffn), p + ".ffn.norm");
  }
  return x;
}

template <Real T>
template <class Bind>
Var Encoder<T>::run_mlm_head(Graph<T>& g, Bind&& bind, Var token_hiddens,
                             std::span<const std::size_t> masked_rows) const {
  const std::size_t rows = g.value(token_hiddens).rows();
  for (std::size_t r : masked_rows) {
    if (r >= rows) {
      throw std::out_of_range("mlm_logits: masked index " + std::to_string(r) + " outside stream of " +
                              std::to_string(rows));
    }
  }
  Var h = g.gather_rows(token_hiddens, masked_rows);
  h = g.gelu(g.add(g.matmul(h, bind("mlm.dense.weight")), bind("mlm.dense.bias")));
  h = g.add(g.mul(g.layer_norm(h), bind("mlm.norm.scale")), bind("mlm.norm.offset"));
  Var logits = g.matmul(h, g.transpose(bind("embeddings.token.weight")));
  return g.add(logits, bind("mlm.decoder.bias"));
}

template <Real T>
typename Encoder<T>::Vars Encoder<T>::forward(Graph<T>& g, const UnpaddedBatch& batch, const ForwardOptions& options) {
  batch.validate();
  auto bind = [&](const std::string& name) { return g.param(params_.at(name)); };
  Var tokens = run_stream(g, bind, batch.tokens, batch.positions, batch.attention_blocks(), options);
  const std::vector<std::size_t> starts(batch.cu_seqlens.begin(), batch.cu_seqlens.end() - 1);
  return {tokens, g.gather_rows(tokens, starts)};
}

namespace {

std::vector<std::size_t> grid_positions(std::size_t batch, std::size_t width) {
  std::vector<std::size_t> pos(batch * width);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i % width;
  return pos;
}

void check_grid(std::span<const std::int32_t> grid, std::size_t batch, std::size_t width,
                std::span<const std::size_t> lengths) {
  if (grid.size() != batch * width || lengths.size() != batch) throw ShapeError("padded forward: bad grid shape");
  for (std::size_t len : lengths) {
    if (len == 0 || len > width) throw ShapeError("padded forward: lengths must lie in [1, width]");
  }
}

}  // namespace

template <Real T>
Var Encoder<T>::forward_padded(Graph<T>& g, std::span<const std::int32_t> grid, std::size_t batch, std::size_t width,
                               std::span<const std::size_t> lengths, const ForwardOptions& options) {
  check_grid(grid, batch, width, lengths);
  auto bind = [&](const std::string& name) { return g.param(params_.at(name)); };
  return run_stream(g, bind, grid, grid_positions(batch, width), padded_attention_blocks(lengths, width), options);
}

template <Real T>
EncoderOutput<T> Encoder<T>::encode(const UnpaddedBatch& batch) const {
  batch.validate();
  Graph<T> g(false);
  auto bind = [&](const std::string& name) { return g.frozen(params_.at(name)); };
  Var tokens = run_stream(g, bind, batch.tokens, batch.positions, batch.attention_blocks(), {});
  const std::vector<std::size_t> starts(batch.cu_seqlens.begin(), batch.cu_seqlens.end() - 1);
  Var cls = g.gather_rows(tokens, starts);
  return {g.value(tokens), g.value(cls)};
}

template <Real T>
Tensor<T> Encoder<T>::encode_padded(std::span<const std::int32_t> grid, std::size_t batch, std::size_t width,
                                    std::span<const std::size_t> lengths) const {
  check_grid(grid, batch, width, lengths);
  Graph<T> g(false);
  auto bind = [&](const std::string& name) { return g.frozen(params_.at(name)); };
  Var tokens =
      run_stream(g, bind, grid, grid_positions(batch, width), padded_attention_blocks(lengths, width), {});
  return g.value(tokens);
}

template <Real T>
Var Encoder<T>::mlm_logits(Graph<T>& g, Var token_hiddens, std::span<const std::size_t> masked_rows) {
  auto bind = [&](const std::string& name) { return g.param(params_.at(name)); };
  if (masked_rows.empty()) return g.constant(Tensor<T>({0, config_.vocab_size}));
  return run_mlm_head(g, bind, token_hiddens, masked_rows);
}

template <Real T>
Tensor<T> Encoder<T>::mlm_logits(const EncoderOutput<T>& output, std::span<const std::size_t> masked_rows) const {
  if (masked_rows.empty()) return Tensor<T>({0, config_.vocab_size});
  Graph<T> g(false);
  auto bind = [&](const std::string& name) { return g.frozen(params_.at(name)); };
  Var hiddens = g.frozen(output.token_hiddens);
  return g.value(run_mlm_head(g, bind, hiddens, masked_rows));
}

template <Real T>
Checkpoint Encoder<T>::to_checkpoint() const {
  Checkpoint ckpt;
  store_config(ckpt, config_);
  params_.store(ckpt);
  return ckpt;
}

template <Real T>
Encoder<T> Encoder<T>::from_checkpoint(const Checkpoint& ckpt) {
  EncoderConfig config = load_config(ckpt);
  config.precision = precision_of<T>();
  Encoder enc(config, 0);
  enc.params_.load(ckpt);
  return enc;
}

template Tensor<float> rope_apply(const Tensor<float>&, std::span<const std::size_t>, double, std::size_t);
template Tensor<double> rope_apply(const Tensor<double>&, std::span<const std::size_t>, double, std::size_t);
template class Encoder<float>;
template class Encoder<double>;

}  // namespace lcret
