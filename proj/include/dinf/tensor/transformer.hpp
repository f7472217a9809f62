#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dinf/tensor/tensor.hpp"

namespace dinf::tensor {

struct TransformerConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t vocab_size = 128;
  std::size_t max_seq = 1024;

  std::size_t head_dim() const { return d_model / n_heads; }
  void validate() const;
  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

struct AttentionWeights {
  Tensor wq, wk, wv, wo;  // each [d_model x d_model]
};

struct LayerWeights {
  AttentionWeights attn;
  Tensor w1;  // [d_model x d_ff]
  Tensor w2;  // [d_ff x d_model]
};

struct ModelWeights {
  Tensor embedding;  // [vocab x d_model]
  std::vector<LayerWeights> layers;
  Tensor lm_head;    // [d_model x vocab]
};

// Uniform in [-0.1, 0.1] from the "weights" substream of `seed`.
ModelWeights init_weights(const TransformerConfig& config, std::uint64_t seed);
ModelWeights zero_weights(const TransformerConfig& config);

struct LayerCache {
  Tensor k, v;  // [context x d_model]; empty until the first append
};

struct KVCache {
  std::vector<LayerCache> layers;
  std::size_t context_len = 0;

  explicit KVCache(std::size_t n_layers) : layers(n_layers) {}
};

Tensor embed(const std::vector<int>& tokens, const ModelWeights& w);

// Scaled dot-product attention over heads packed along columns.
// q: [Lq x h*F], k/v: [Lk x h*F]. Query row i sits at global position
// q_offset + i; with `causal`, it attends to keys 0..q_offset+i only.
// Charges scores and weighted sums as dense Lq x Lk products.
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                      std::size_t q_offset, bool causal, FlopCounter* counter = nullptr);

// Multi-head attention on already-normalised input, including the W_O projection.
// With a cache, x holds only the new positions and K/V are appended.
Tensor attention_forward(const Tensor& x, const AttentionWeights& w, const TransformerConfig& config,
                         LayerCache* cache, bool causal, FlopCounter* counter = nullptr);

Tensor ffn_forward(const Tensor& x, const Tensor& w1, const Tensor& w2,
                   FlopCounter* counter = nullptr);

// Pre-norm block: x + attn(norm(x)), then h + ffn(norm(h)).
Tensor block_forward(const Tensor& x, const LayerWeights& w, const TransformerConfig& config,
                     LayerCache* cache, bool causal, FlopCounter* counter = nullptr);

Tensor lm_head_forward(const Tensor& hidden, const ModelWeights& w, FlopCounter* counter = nullptr);

// Runs all blocks over hidden states (no embedding, no head).
Tensor transformer_hidden(const Tensor& x, const ModelWeights& w, const TransformerConfig& config,
                          KVCache* cache, bool causal, FlopCounter* counter = nullptr);

// Single-device reference: tokens -> logits [L x vocab].
Tensor transformer_forward(const std::vector<int>& tokens, const ModelWeights& w,
                           const TransformerConfig& config, KVCache* cache = nullptr,
                           bool causal = true, FlopCounter* counter = nullptr);

std::vector<int> greedy_generate(const std::vector<int>& prompt, std::size_t n_new,
                                 const ModelWeights& w, const TransformerConfig& config,
                                 bool use_cache);

}  // namespace dinf::tensor
