#include "affect/model.hpp"

#include <cmath>
#include <random>

#include "affect/errors.hpp"
#include "affect/ops.hpp"

namespace affect {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(n_patches, "n_patches");
  positive(in_channels, "in_channels");
  positive(hidden_channels, "hidden_channels");
  positive(d_model, "d_model");
  positive(heads, "heads");
  positive(ffn_hidden, "ffn_hidden");
  positive(n_blocks, "n_blocks");
  if (d_model % heads != 0) {
    throw ConfigError("model config: d_model " + std::to_string(d_model) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  if (!(layer_norm_eps > 0)) throw ConfigError("model config: layer_norm_eps must be positive");
}

namespace {

template <typename T>
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor<T> uniform(Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> v(shape.numel());
    for (auto& e : v) e = static_cast<T>(dist(rng_));
    return Tensor<T>::from(shape, std::move(v), true);
  }
  Tensor<T> constant(Shape shape, T value) { return Tensor<T>::full(shape, value, true); }

  Linear<T> linear(std::size_t in, std::size_t out) {
    return {uniform({in, out}, in), constant({1, out}, T(0))};
  }
  LayerNormParams<T> layer_norm(std::size_t d) {
    return {constant({1, d}, T(1)), constant({1, d}, T(0))};
  }
  AttentionParams<T> attention(std::size_t d) {
    auto q = linear(d, d);
    Linear<T> k{uniform({d, d}, d), {}};
    auto v = linear(d, d);
    return {std::move(q), std::move(k), std::move(v), linear(d, d)};
  }
  NodeHead<T> head(std::size_t nodes, std::size_t d) {
    return {uniform({nodes, d}, d), constant({1, nodes}, T(0))};
  }

 private:
  std::mt19937_64 rng_;
};

template <typename T>
void append_linear(std::vector<NamedTensor<T>>& out, const std::string& name, const Linear<T>& l) {
  out.emplace_back(name + ".weight", l.weight);
  out.emplace_back(name + ".bias", l.bias);
}

template <typename T>
void append_norm(std::vector<NamedTensor<T>>& out, const std::string& name,
                 const LayerNormParams<T>& n) {
  out.emplace_back(name + ".gain", n.gain);
  out.emplace_back(name + ".bias", n.bias);
}

template <typename T>
void append_attention(std::vector<NamedTensor<T>>& out, const std::string& name,
                      const AttentionParams<T>& a) {
  append_linear(out, name + ".q", a.q);
  out.emplace_back(name + ".k.weight", a.k.weight);
  append_linear(out, name + ".v", a.v);
  append_linear(out, name + ".out", a.out);
}

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.d_model;
  Initializer<T> init(seed);
  ModelParams<T> p;
  p.config = config;
  p.compress1 = init.linear(config.in_channels, config.hidden_channels);
  p.compress2 = init.linear(config.hidden_channels, d);
  p.pos_embed_f = init.uniform({config.n_patches, d}, d);
  p.pos_embed_q = init.uniform({kNumQueries, d}, d);
  for (std::size_t i = 0; i < config.n_blocks; ++i) {
    DecoderBlockParams<T> b;
    // Queries enter the first block as zeros, so it has no self-attention.
    b.has_self_attention = i > 0;
    if (b.has_self_attention) {
      b.self_attn = init.attention(d);
      b.ln_self = init.layer_norm(d);
    }
    b.cross_attn = init.attention(d);
    b.ln_cross = init.layer_norm(d);
    b.ffn_in = init.linear(d, config.ffn_hidden);
    b.ffn_out = init.linear(config.ffn_hidden, d);
    b.ln_ffn = init.layer_norm(d);
    p.blocks.push_back(std::move(b));
  }
  p.gcn.w_au = init.uniform({d, d}, d);
  p.gcn.mask = init.uniform({kNumFused, d}, d);
  p.gcn.w_fuse1 = init.uniform({d, d}, d);
  p.gcn.w_fuse2 = init.uniform({d, d}, d);
  p.gcn.a_au_logits = init.constant({kNumAu, kNumAu}, T(0));
  p.gcn.a_fuse_logits = init.constant({kNumFused, kNumFused}, T(0));
  p.head_au = init.head(kNumAu, d);
  p.head_expr = init.head(kNumExpr, d);
  p.head_va = init.head(kNumVa, d);
  return p;
}

template <typename T>
std::vector<NamedTensor<T>> ModelParams<T>::named_parameters() const {
  std::vector<NamedTensor<T>> out;
  append_linear(out, "compress.0", compress1);
  append_linear(out, "compress.1", compress2);
  out.emplace_back("pos_embed.features", pos_embed_f);
  out.emplace_back("pos_embed.queries", pos_embed_q);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string prefix = "decoder." + std::to_string(i);
    const auto& b = blocks[i];
    if (b.has_self_attention) {
      append_attention(out, prefix + ".self_attn", b.self_attn);
      append_norm(out, prefix + ".ln_self", b.ln_self);
    }
    append_attention(out, prefix + ".cross_attn", b.cross_attn);
    append_norm(out, prefix + ".ln_cross", b.ln_cross);
    append_linear(out, prefix + ".ffn.0", b.ffn_in);
    append_linear(out, prefix + ".ffn.1", b.ffn_out);
    append_norm(out, prefix + ".ln_ffn", b.ln_ffn);
  }
  out.emplace_back("gcn.au.weight", gcn.w_au);
  out.emplace_back("gcn.mask", gcn.mask);
  out.emplace_back("gcn.fuse.0.weight", gcn.w_fuse1);
  out.emplace_back("gcn.fuse.1.weight", gcn.w_fuse2);
  out.emplace_back("gcn.au.adjacency_logits", gcn.a_au_logits);
  out.emplace_back("gcn.fuse.adjacency_logits", gcn.a_fuse_logits);
  out.emplace_back("head.au.weight", head_au.weight);
  out.emplace_back("head.au.bias", head_au.bias);
  out.emplace_back("head.expr.weight", head_expr.weight);
  out.emplace_back("head.expr.bias", head_expr.bias);
  out.emplace_back("head.va.weight", head_va.weight);
  out.emplace_back("head.va.bias", head_va.bias);
  return out;
}

template <typename T>
std::vector<Tensor<T>> ModelParams<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

template <typename T>
Tensor<T> initial_queries(const ModelConfig& config, std::size_t batch) {
  return Tensor<T>::zeros({batch * kNumQueries, config.d_model});
}

namespace {

template <typename T>
Tensor<T> affine(const Tensor<T>& x, const Linear<T>& l) {
  return ops::pointwise_conv1d(x, l.weight, l.bias);
}

template <typename T>
Tensor<T> norm(const Tensor<T>& x, const LayerNormParams<T>& n, double eps) {
  return ops::layer_norm(x, n.gain, n.bias, static_cast<T>(eps));
}

template <typename T>
void report_attention(ForwardObserver<T>* observer, const std::vector<T>& weights, std::size_t batch,
                      std::size_t heads, std::size_t nq, std::size_t nk, std::size_t block,
                      AttentionKind kind) {
  if (!observer) return;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const auto first = weights.begin() + static_cast<std::ptrdiff_t>((b * heads + h) * nq * nk);
      observer->on_attention(block, kind, b, h,
                             Tensor<T>::from({nq, nk}, std::vector<T>(first, first + nq * nk)));
    }
  }
}

template <typename T>
Tensor<T> self_attention(const AttentionParams<T>& p, const Tensor<T>& query_key,
                         const Tensor<T>& value, std::size_t batch, std::size_t heads,
                         std::size_t block, ForwardObserver<T>* observer) {
  const Tensor<T> q = affine(query_key, p.q);
  const Tensor<T> k = ops::matmul(query_key, p.k.weight);
  const Tensor<T> v = affine(value, p.v);
  std::vector<T> weights;
  const auto mixed = ops::attention(q, k, v, batch, heads, observer ? &weights : nullptr);
  report_attention(observer, weights, batch, heads, kNumQueries, kNumQueries, block,
                   AttentionKind::self);
  return affine(mixed, p.out);
}

// Keys and values are never materialized; see ops::projected_attention.
template <typename T>
Tensor<T> cross_attention(const AttentionParams<T>& p, const Tensor<T>& query,
                          const Tensor<T>& key, const Tensor<T>& value, std::size_t batch,
                          std::size_t heads, std::size_t block, ForwardObserver<T>* observer) {
  const Tensor<T> q = affine(query, p.q);
  std::vector<T> weights;
  const auto mixed = ops::projected_attention(q, key, p.k.weight, value, p.v.weight, p.v.bias,
                                              batch, heads, observer ? &weights : nullptr);
  report_attention(observer, weights, batch, heads, kNumQueries, key.rows() / batch, block,
                   AttentionKind::cross);
  return affine(mixed, p.out);
}

template <typename T>
Tensor<T> node_head(const Tensor<T>& nodes, const NodeHead<T>& head, std::size_t batch) {
  const std::size_t k = head.weight.rows();
  const auto per_node = ops::row_sum(ops::mul(nodes, ops::tile_rows(head.weight, batch)));
  return ops::add_row(ops::reshape(per_node, {batch, k}), head.bias);
}

template <typename T>
void check_batch(const Tensor<T>& x, std::size_t rows_per_sample, std::size_t batch,
                 const char* what) {
  if (batch == 0 || x.rows() != rows_per_sample * batch) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(batch) + " x " +
                     std::to_string(rows_per_sample) + " rows, got " + to_string(x.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> compress_features(const ModelParams<T>& params, const Tensor<T>& features) {
  const auto& c = params.config;
  if (features.cols() != c.in_channels) {
    throw ShapeError("features: channel dimension is " + std::to_string(features.cols()) +
                     ", expected " + std::to_string(c.in_channels));
  }
  if (features.rows() % c.n_patches != 0) {
    throw ShapeError("features: patch dimension " + std::to_string(features.rows()) +
                     " is not a multiple of " + std::to_string(c.n_patches));
  }
  const auto hidden = ops::gelu(affine(features, params.compress1));
  return affine(hidden, params.compress2);
}

template <typename T>
Tensor<T> feature_keys(const ModelParams<T>& params, const Tensor<T>& compressed, std::size_t batch) {
  check_batch(compressed, params.config.n_patches, batch, "feature_keys");
  return ops::add(compressed, ops::tile_rows(params.pos_embed_f, batch));
}

template <typename T>
Tensor<T> task_adaptive_block(const ModelParams<T>& params, std::size_t block_index,
                              const Tensor<T>& queries, const Tensor<T>& compressed,
                              std::size_t batch, ForwardObserver<T>* observer,
                              const Tensor<T>* keys) {
  const auto& c = params.config;
  const auto& block = params.blocks.at(block_index);
  check_batch(queries, kNumQueries, batch, "task_adaptive_block queries");
  check_batch(compressed, c.n_patches, batch, "task_adaptive_block features");
  if (queries.cols() != c.d_model || compressed.cols() != c.d_model) {
    throw ShapeError("task_adaptive_block: width mismatch " + to_string(queries.shape()) + " / " +
                     to_string(compressed.shape()));
  }
  if (observer) observer->on_block(block_index, block.has_self_attention);

  const auto pos_q = ops::tile_rows(params.pos_embed_q, batch);
  Tensor<T> q = queries;
  if (block.has_self_attention) {
    const auto q_hat = ops::add(q, pos_q);
    const auto attended =
        self_attention(block.self_attn, q_hat, q, batch, c.heads, block_index, observer);
    q = norm(ops::add(q, attended), block.ln_self, c.layer_norm_eps);
  }
  const auto q_hat = ops::add(q, pos_q);
  const auto f_hat = keys ? *keys : feature_keys(params, compressed, batch);
  const auto attended = cross_attention(block.cross_attn, q_hat, f_hat, compressed, batch, c.heads,
                                        block_index, observer);
  q = norm(ops::add(q, attended), block.ln_cross, c.layer_norm_eps);
  const auto ffn = affine(ops::gelu(affine(q, block.ffn_in)), block.ffn_out);
  return norm(ops::add(q, ffn), block.ln_ffn, c.layer_norm_eps);
}

template <typename T>
Tensor<T> run_decoder(const ModelParams<T>& params, const Tensor<T>& compressed, std::size_t batch,
                      ForwardObserver<T>* observer) {
  Tensor<T> q = initial_queries<T>(params.config, batch);
  // Keys are the same in every block; build them once.
  const auto keys = feature_keys(params, compressed, batch);
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    q = task_adaptive_block(params, i, q, compressed, batch, observer, &keys);
  }
  return q;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_queries(const Tensor<T>& queries, std::size_t batch) {
  check_batch(queries, kNumQueries, batch, "split_queries");
  std::vector<std::size_t> au, rest;
  au.reserve(batch * kNumAu);
  rest.reserve(batch * kNumFused);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < kNumQueries; ++i) {
      (i < kNumAu ? au : rest).push_back(b * kNumQueries + i);
    }
  }
  return {ops::gather_rows<T>(queries, au), ops::gather_rows<T>(queries, rest)};
}

template <typename T>
Tensor<T> effective_adjacency(const Tensor<T>& a_logits) {
  return ops::softmax_rows(a_logits);
}

template <typename T>
Tensor<T> gcn_layer(const Tensor<T>& nodes, const Tensor<T>& a_logits, const Tensor<T>& weight,
                    GcnActivation activation) {
  const auto propagated = ops::grouped_matmul(effective_adjacency(a_logits), nodes);
  const auto mixed = ops::matmul(propagated, weight);
  return activation == GcnActivation::gelu ? ops::gelu(mixed) : mixed;
}

template <typename T>
Tensor<T> mask_and_fuse(const Tensor<T>& au_nodes, const Tensor<T>& expr_va_nodes,
                        const GcnParams<T>& gcn, std::size_t batch) {
  check_batch(au_nodes, kNumAu, batch, "mask_and_fuse AU nodes");
  check_batch(expr_va_nodes, kNumFused, batch, "mask_and_fuse EXPR+VA nodes");
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(au_nodes.cols()));
  std::vector<Tensor<T>> selected;
  selected.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto g = ops::slice_rows(au_nodes, b * kNumAu, kNumAu);
    const auto scores =
        ops::softmax_rows(ops::scale(ops::matmul(gcn.mask, ops::transpose(g)), inv_sqrt));
    selected.push_back(ops::matmul(scores, g));
  }
  return ops::add(ops::concat_rows<T>(selected), expr_va_nodes);
}

template <typename T>
Predictions<T> forward(const ModelParams<T>& params, const Tensor<T>& features, std::size_t batch,
                       ForwardObserver<T>* observer) {
  check_batch(features, params.config.n_patches, batch, "forward");
  const auto compressed = compress_features(params, features);
  const auto queries = run_decoder(params, compressed, batch, observer);
  const auto [f_au, f_expr_va] = split_queries(queries, batch);

  const auto g_au = gcn_layer(f_au, params.gcn.a_au_logits, params.gcn.w_au);
  const auto fused = mask_and_fuse(g_au, f_expr_va, params.gcn, batch);
  const auto fused1 = gcn_layer(fused, params.gcn.a_fuse_logits, params.gcn.w_fuse1);
  const auto fused2 = gcn_layer(fused1, params.gcn.a_fuse_logits, params.gcn.w_fuse2);

  std::vector<std::size_t> expr_rows, va_rows;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < kNumFused; ++i) {
      (i < kNumExpr ? expr_rows : va_rows).push_back(b * kNumFused + i);
    }
  }
  Predictions<T> out;
  out.au_logits = node_head(g_au, params.head_au, batch);
  out.expr_logits = node_head(ops::gather_rows<T>(fused2, expr_rows), params.head_expr, batch);
  out.va = ops::tanh(node_head(ops::gather_rows<T>(fused2, va_rows), params.head_va, batch));
  return out;
}

#define AFFECT_INSTANTIATE_MODEL(T)                                                              \
  template struct ModelParams<T>;                                                                \
  template Tensor<T> initial_queries<T>(const ModelConfig&, std::size_t);                        \
  template Tensor<T> compress_features(const ModelParams<T>&, const Tensor<T>&);                 \
  template Tensor<T> feature_keys(const ModelParams<T>&, const Tensor<T>&, std::size_t);         \
  template Tensor<T> task_adaptive_block(const ModelParams<T>&, std::size_t, const Tensor<T>&,   \
                                         const Tensor<T>&, std::size_t, ForwardObserver<T>*,     \
                                         const Tensor<T>*);                                      \
  template Tensor<T> run_decoder(const ModelParams<T>&, const Tensor<T>&, std::size_t,           \
                                 ForwardObserver<T>*);                                           \
  template std::pair<Tensor<T>, Tensor<T>> split_queries(const Tensor<T>&, std::size_t);         \
  template Tensor<T> gcn_layer(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,               \
                               GcnActivation);                                                   \
  template Tensor<T> mask_and_fuse(const Tensor<T>&, const Tensor<T>&, const GcnParams<T>&,      \
                                   std::size_t);                                                 \
  template Tensor<T> effective_adjacency(const Tensor<T>&);                                      \
  template Predictions<T> forward(const ModelParams<T>&, const Tensor<T>&, std::size_t,          \
                                  ForwardObserver<T>*);

AFFECT_INSTANTIATE_MODEL(float)
AFFECT_INSTANTIATE_MODEL(double)

#undef AFFECT_INSTANTIATE_MODEL

}  // namespace affect
