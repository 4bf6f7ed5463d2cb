#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "affect/constants.hpp"
#include "affect/tensor.hpp"

namespace affect {

struct ModelConfig {
  std::size_t n_patches = kDefaultPatches;
  std::size_t in_channels = kDefaultChannels;
  std::size_t hidden_channels = 512;
  std::size_t d_model = 128;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 512;
  std::size_t n_blocks = 4;
  double layer_norm_eps = 1e-5;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // in × out
  Tensor<T> bias;    // 1 × out
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain;
  Tensor<T> bias;
};

// The key map has no bias: it would shift every score row by a constant.
template <typename T>
struct AttentionParams {
  Linear<T> q, k, v, out;  // k.bias is unset
};

template <typename T>
struct DecoderBlockParams {
  bool has_self_attention = true;
  AttentionParams<T> self_attn;  // unset when !has_self_attention
  LayerNormParams<T> ln_self;
  AttentionParams<T> cross_attn;
  LayerNormParams<T> ln_cross;
  Linear<T> ffn_in, ffn_out;
  LayerNormParams<T> ln_ffn;
};

template <typename T>
struct GcnParams {
  Tensor<T> w_au;           // d × d, first AU-graph layer
  Tensor<T> mask;           // 10 × d, node-selection vectors
  Tensor<T> w_fuse1;        // d × d
  Tensor<T> w_fuse2;        // d × d
  Tensor<T> a_au_logits;    // 12 × 12
  Tensor<T> a_fuse_logits;  // 10 × 10
};

// One affine map per graph node: logit_j = <node_j, weight_j> + bias_j.
template <typename T>
struct NodeHead {
  Tensor<T> weight;  // nodes × d
  Tensor<T> bias;    // 1 × nodes
};

template <typename T>
using NamedTensor = std::pair<std::string, Tensor<T>>;

template <typename T>
struct ModelParams {
  ModelConfig config;
  Linear<T> compress1;  // in_channels -> hidden_channels
  Linear<T> compress2;  // hidden_channels -> d_model
  Tensor<T> pos_embed_f;  // n_patches × d
  Tensor<T> pos_embed_q;  // 22 × d
  std::vector<DecoderBlockParams<T>> blocks;
  GcnParams<T> gcn;
  NodeHead<T> head_au, head_expr, head_va;

  /// Weights uniform(±1/sqrt(fan_in)), biases zero, layer-norm gains one,
  /// adjacency logits zero (uniform graph).
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  /// Stable, deterministic order; names are the checkpoint keys.
  std::vector<NamedTensor<T>> named_parameters() const;
  std::vector<Tensor<T>> parameters() const;
  std::size_t parameter_count() const;
};

/// Content entering the first block: always zero, one 22×d block per sample.
template <typename T>
Tensor<T> initial_queries(const ModelConfig& config, std::size_t batch);

enum class AttentionKind { self, cross };

/// Instrumentation hooks for forward passes; all default to no-ops.
template <typename T>
struct ForwardObserver {
  virtual ~ForwardObserver() = default;
  virtual void on_block(std::size_t /*index*/, bool /*runs_self_attention*/) {}
  virtual void on_attention(std::size_t /*block*/, AttentionKind /*kind*/, std::size_t /*sample*/,
                            std::size_t /*head*/, const Tensor<T>& /*weights*/) {}
};

/// Per-batch outputs. `va` is already tanh-squashed.
template <typename T>
struct Predictions {
  Tensor<T> au_logits;    // B × 12
  Tensor<T> expr_logits;  // B × 8
  Tensor<T> va;           // B × 2
};

// Feature blocks are stacked per sample: features is (B·n_patches) × in_channels.

template <typename T>
Tensor<T> compress_features(const ModelParams<T>& params, const Tensor<T>& features);

/// Compressed features plus the patch position embedding (cross-attention keys).
template <typename T>
Tensor<T> feature_keys(const ModelParams<T>& params, const Tensor<T>& compressed, std::size_t batch);

/// `keys`, when given, must equal feature_keys(params, compressed, batch).
template <typename T>
Tensor<T> task_adaptive_block(const ModelParams<T>& params, std::size_t block_index,
                              const Tensor<T>& queries, const Tensor<T>& compressed,
                              std::size_t batch, ForwardObserver<T>* observer = nullptr,
                              const Tensor<T>* keys = nullptr);

template <typename T>
Tensor<T> run_decoder(const ModelParams<T>& params, const Tensor<T>& compressed, std::size_t batch,
                      ForwardObserver<T>* observer = nullptr);

/// Splits (B·22)×d queries into AU nodes (B·12)×d and EXPR+VA nodes (B·10)×d.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_queries(const Tensor<T>& queries, std::size_t batch);

enum class GcnActivation { gelu, linear };

/// act(row_softmax(a_logits) · H · W), applied per n-node group of H.
template <typename T>
Tensor<T> gcn_layer(const Tensor<T>& nodes, const Tensor<T>& a_logits, const Tensor<T>& weight,
                    GcnActivation activation = GcnActivation::gelu);

/// Soft selection of 10 AU nodes by the mask vectors, added to the EXPR+VA nodes.
template <typename T>
Tensor<T> mask_and_fuse(const Tensor<T>& au_nodes, const Tensor<T>& expr_va_nodes,
                        const GcnParams<T>& gcn, std::size_t batch);

template <typename T>
Tensor<T> effective_adjacency(const Tensor<T>& a_logits);

template <typename T>
Predictions<T> forward(const ModelParams<T>& params, const Tensor<T>& features, std::size_t batch,
                       ForwardObserver<T>* observer = nullptr);

}  // namespace affect
