#include "dinf/tensor/transformer.hpp"

#include <cmath>
#include <sstream>

#include "dinf/sim/errors.hpp"
#include "dinf/tensor/random.hpp"

namespace dinf::tensor {

void TransformerConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(n_layers, "n_layers");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(vocab_size, "vocab_size");
  positive(max_seq, "max_seq");
  if (d_model % n_heads != 0) {
    std::ostringstream os;
    os << "model.d_model (" << d_model << ") must be divisible by model.n_heads (" << n_heads << ")";
    throw ConfigError(os.str());
  }
}

namespace {

Tensor uniform_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Tensor t = Tensor::zeros(rows, cols);
  for (auto& v : t.data()) v = static_cast<float>(-0.1 + 0.2 * uniform01(rng));
  return t;
}

}  // namespace

ModelWeights init_weights(const TransformerConfig& config, std::uint64_t seed) {
  config.validate();
  auto rng = substream(seed, "weights");
  const auto d = config.d_model;
  ModelWeights w;
  w.embedding = uniform_tensor(config.vocab_size, d, rng);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerWeights lw;
    lw.attn.wq = uniform_tensor(d, d, rng);
    lw.attn.wk = uniform_tensor(d, d, rng);
    lw.attn.wv = uniform_tensor(d, d, rng);
    lw.attn.wo = uniform_tensor(d, d, rng);
    lw.w1 = uniform_tensor(d, config.d_ff, rng);
    lw.w2 = uniform_tensor(config.d_ff, d, rng);
    w.layers.push_back(std::move(lw));
  }
  w.lm_head = uniform_tensor(d, config.vocab_size, rng);
  return w;
}

ModelWeights zero_weights(const TransformerConfig& config) {
  config.validate();
  const auto d = config.d_model;
  ModelWeights w;
  w.embedding = Tensor::zeros(config.vocab_size, d);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    w.layers.push_back({{Tensor::zeros(d, d), Tensor::zeros(d, d), Tensor::zeros(d, d),
                         Tensor::zeros(d, d)},
                        Tensor::zeros(d, config.d_ff),
                        Tensor::zeros(config.d_ff, d)});
  }
  w.lm_head = Tensor::zeros(d, config.vocab_size);
  return w;
}

Tensor embed(const std::vector<int>& tokens, const ModelWeights& w) {
  if (tokens.empty()) throw ConfigError("embed: empty token sequence");
  const auto d = w.embedding.cols();
  Tensor x = Tensor::zeros(tokens.size(), d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto t = tokens[i];
    if (t < 0 || static_cast<std::size_t>(t) >= w.embedding.rows()) {
      throw ConfigError("embed: token id out of vocabulary");
    }
    auto src = w.embedding.row(static_cast<std::size_t>(t));
    std::copy(src.begin(), src.end(), x.row(i).begin());
  }
  return x;
}

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                      std::size_t q_offset, bool causal, FlopCounter* counter) {
  const auto lq = q.rows();
  const auto lk = k.rows();
  const auto width = q.cols();
  if (k.cols() != width || v.cols() != width || v.rows() != lk) {
    throw ConfigError("attention: q/k/v shape mismatch");
  }
  if (n_heads == 0 || width % n_heads != 0) throw ConfigError("attention: invalid head count");
  if (causal && q_offset + lq > lk) throw ConfigError("attention: queries beyond key context");
  const auto f = width / n_heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(f));

  Tensor out = Tensor::zeros(lq, width);
  std::vector<float> scores(lk);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto c0 = h * f;
    for (std::size_t i = 0; i < lq; ++i) {
      const auto visible = causal ? q_offset + i + 1 : lk;
      const float* qi = q.row(i).data() + c0;
      for (std::size_t j = 0; j < visible; ++j) {
        const float* kj = k.row(j).data() + c0;
        float s = 0.0f;
        for (std::size_t e = 0; e < f; ++e) s += qi[e] * kj[e];
        scores[j] = s * scale;
      }
      softmax_inplace(std::span<float>(scores.data(), visible));
      float* oi = out.row(i).data() + c0;
      for (std::size_t j = 0; j < visible; ++j) {
        const float p = scores[j];
        const float* vj = v.row(j).data() + c0;
        for (std::size_t e = 0; e < f; ++e) oi[e] += p * vj[e];
      }
    }
  }
  if (counter) {
    counter->flops += 4.0 * static_cast<double>(lq) * static_cast<double>(lk) *
                      static_cast<double>(width);
  }
  check_finite(out, "attention");
  return out;
}

Tensor attention_forward(const Tensor& x, const AttentionWeights& w, const TransformerConfig& config,
                         LayerCache* cache, bool causal, FlopCounter* counter) {
  if (x.cols() != config.d_model) throw ConfigError("attention: input width != d_model");
  const auto offset = (cache && !cache->k.empty()) ? cache->k.rows() : 0;
  if (offset + x.rows() > config.max_seq) throw ConfigError("attention: sequence exceeds max_seq");

  Tensor q = matmul(x, w.wq, counter);
  Tensor k = matmul(x, w.wk, counter);
  Tensor v = matmul(x, w.wv, counter);
  if (cache) {
    if (!cache->k.empty()) {
      if (cache->k.cols() != config.d_model) throw ConfigError("attention: cache/config mismatch");
      const Tensor kparts[] = {cache->k, k};
      const Tensor vparts[] = {cache->v, v};
      k = concat_rows(kparts);
      v = concat_rows(vparts);
    }
    cache->k = k;
    cache->v = v;
  }
  Tensor a = attention_core(q, k, v, config.n_heads, offset, causal, counter);
  return matmul(a, w.wo, counter);
}

Tensor ffn_forward(const Tensor& x, const Tensor& w1, const Tensor& w2, FlopCounter* counter) {
  return matmul(silu(matmul(x, w1, counter)), w2, counter);
}

Tensor block_forward(const Tensor& x, const LayerWeights& w, const TransformerConfig& config,
                     LayerCache* cache, bool causal, FlopCounter* counter) {
  Tensor h = add(x, attention_forward(rms_norm_rows(x), w.attn, config, cache, causal, counter));
  return add(h, ffn_forward(rms_norm_rows(h), w.w1, w.w2, counter));
}

Tensor lm_head_forward(const Tensor& hidden, const ModelWeights& w, FlopCounter* counter) {
  return matmul(rms_norm_rows(hidden), w.lm_head, counter);
}

Tensor transformer_hidden(const Tensor& x, const ModelWeights& w, const TransformerConfig& config,
                          KVCache* cache, bool causal, FlopCounter* counter) {
  if (w.layers.size() != config.n_layers) throw ConfigError("transformer: layer count mismatch");
  if (cache && cache->layers.size() != config.n_layers) {
    throw ConfigError("transformer: cache/config mismatch");
  }
  Tensor h = x;
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    h = block_forward(h, w.layers[l], config, cache ? &cache->layers[l] : nullptr, causal, counter);
  }
  if (cache) cache->context_len += x.rows();
  return h;
}

Tensor transformer_forward(const std::vector<int>& tokens, const ModelWeights& w,
                           const TransformerConfig& config, KVCache* cache, bool causal,
                           FlopCounter* counter) {
  Tensor h = transformer_hidden(embed(tokens, w), w, config, cache, causal, counter);
  return lm_head_forward(h, w, counter);
}

std::vector<int> greedy_generate(const std::vector<int>& prompt, std::size_t n_new,
                                 const ModelWeights& w, const TransformerConfig& config,
                                 bool use_cache) {
  std::vector<int> seq = prompt;
  std::vector<int> generated;
  if (use_cache) {
    KVCache cache(config.n_layers);
    Tensor logits = transformer_forward(seq, w, config, &cache);
    for (std::size_t i = 0; i < n_new; ++i) {
      const int next = static_cast<int>(argmax(logits.row(logits.rows() - 1)));
      generated.push_back(next);
      seq.push_back(next);
      if (i + 1 < n_new) logits = transformer_forward({next}, w, config, &cache);
    }
  } else {
    for (std::size_t i = 0; i < n_new; ++i) {
      Tensor logits = transformer_forward(seq, w, config);
      const int next = static_cast<int>(argmax(logits.row(logits.rows() - 1)));
      generated.push_back(next);
      seq.push_back(next);
    }
  }
  return generated;
}

}  // namespace dinf::tensor
