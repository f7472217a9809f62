#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "dinf/sim/errors.hpp"
#include "dinf/tensor/random.hpp"
#include "dinf/tensor/tensor.hpp"
#include "dinf/tensor/transformer.hpp"

using namespace dinf;
using namespace dinf::tensor;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed) {
  auto rng = substream(seed, "test");
  Tensor t = Tensor::zeros(r, c);
  for (auto& v : t.data()) v = static_cast<float>(uniform01(rng) * 2.0 - 1.0);
  return t;
}

// Straightforward double-precision multi-head attention used as an oracle.
std::vector<std::vector<double>> naive_attention(const Tensor& x, const AttentionWeights& w,
                                                 std::size_t heads, bool causal) {
  const std::size_t L = x.rows(), d = x.cols(), f = d / heads;
  auto proj = [&](const Tensor& m) {
    std::vector<std::vector<double>> out(L, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k) out[i][j] += double(x.at(i, k)) * m.at(k, j);
    return out;
  };
  const auto q = proj(w.wq), k = proj(w.wk), v = proj(w.wv);
  std::vector<std::vector<double>> concat(L, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < L; ++i) {
      const std::size_t keys = causal ? i + 1 : L;
      std::vector<double> s(keys);
      for (std::size_t j = 0; j < keys; ++j) {
        double dot = 0;
        for (std::size_t c = 0; c < f; ++c) dot += q[i][h * f + c] * k[j][h * f + c];
        s[j] = dot / std::sqrt(double(f));
      }
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j < keys; ++j)
        for (std::size_t c = 0; c < f; ++c) concat[i][h * f + c] += s[j] / z * v[j][h * f + c];
    }
  }
  std::vector<std::vector<double>> out(L, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k2 = 0; k2 < d; ++k2) out[i][j] += concat[i][k2] * w.wo.at(k2, j);
  return out;
}

std::vector<int> tokens_for(std::size_t n, std::uint64_t seed, std::size_t vocab) {
  auto rng = substream(seed, "tokens");
  std::vector<int> t(n);
  for (auto& v : t) v = static_cast<int>(rng() % vocab);
  return t;
}

}  // namespace

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  const auto x = random_tensor(2, 3, 1);
  EXPECT_EQ(matmul(Tensor::from_rows({{1, 0}, {0, 1}}), x), x);
}

TEST(Matmul, HandComputedProduct) {
  FlopCounter fc;
  const auto c = matmul(Tensor::from_rows({{1, 2}, {3, 4}}), Tensor::from_rows({{5}, {6}}), &fc);
  EXPECT_EQ(c, Tensor::from_rows({{17}, {39}}));
  EXPECT_DOUBLE_EQ(fc.flops, 2.0 * 2 * 2 * 1);
}

TEST(Matmul, TransposeIdentity) {
  const auto a = random_tensor(8, 8, 2), b = random_tensor(8, 8, 3);
  const auto lhs = transpose(matmul(a, b));
  const auto rhs = matmul(transpose(b), transpose(a));
  EXPECT_LE(max_relative_error(lhs, rhs), 1e-6);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros(2, 3), Tensor::zeros(2, 3)), ConfigError);
}

TEST(Matmul, RowSlicesAreBitIdentical) {
  const auto a = random_tensor(6, 5, 4), b = random_tensor(5, 7, 5);
  const auto full = matmul(a, b);
  EXPECT_EQ(matmul(a.slice_rows(2, 5), b), full.slice_rows(2, 5));
  EXPECT_EQ(matmul(a, b.slice_cols(3, 7)), full.slice_cols(3, 7));
}

TEST(Softmax, EqualValuesGiveUniformRow) {
  const auto y = softmax_rows(Tensor::from_rows({{3, 3, 3, 3}}));
  for (float v : y.data()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Softmax, ClosedFormTwoEntries) {
  const auto y = softmax_rows(Tensor::from_rows({{0.0f, std::log(3.0f)}}));
  EXPECT_NEAR(y.at(0, 0), 0.25, 1e-7);
  EXPECT_NEAR(y.at(0, 1), 0.75, 1e-7);
}

TEST(Softmax, SaturatesOnLargeGap) {
  const auto y = softmax_rows(Tensor::from_rows({{0, 50, 0, 0}}));
  EXPECT_GE(y.at(0, 1), 1.0 - 1e-6);
}

TEST(Softmax, RowsSumToOne) {
  auto x = random_tensor(16, 33, 6);
  for (auto& v : x.data()) v *= 20.0f;
  const auto y = softmax_rows(x);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const auto row = y.row(r);
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-6);
  }
}

TEST(Softmax, NanInputThrowsNamingOp) {
  try {
    softmax_rows(Tensor::from_rows({{1.0f, std::nanf("")}}));
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.op(), "softmax");
  }
}

TEST(Tensor, NonFiniteMatmulOutputThrows) {
  const auto big = Tensor::from_rows({{3e38f, 3e38f}});
  EXPECT_THROW(matmul(big, Tensor::from_rows({{10.0f}, {10.0f}})), NumericalError);
}

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), ConfigError);
  EXPECT_THROW(Tensor({0, 2}), ConfigError);
}

TEST(Attention, MatchesDoublePrecisionOracle) {
  TransformerConfig cfg;
  const auto w = init_weights(cfg, 7);
  const auto x = random_tensor(9, cfg.d_model, 8);
  for (bool causal : {false, true}) {
    const auto got = attention_forward(x, w.layers[0].attn, cfg, nullptr, causal);
    const auto want = naive_attention(x, w.layers[0].attn, cfg.n_heads, causal);
    double scale = 0, err = 0;
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < cfg.d_model; ++j) {
        scale = std::max(scale, std::abs(want[i][j]));
        err = std::max(err, std::abs(got.at(i, j) - want[i][j]));
      }
    EXPECT_LE(err / scale, 1e-5) << causal;
  }
}

TEST(Attention, SinglePositionAttendsToItself) {
  TransformerConfig cfg;
  const auto w = init_weights(cfg, 9);
  const auto x = random_tensor(1, cfg.d_model, 10);
  const auto& a = w.layers[0].attn;
  const auto want = matmul(matmul(x, a.wv), a.wo);
  EXPECT_LE(max_relative_error(attention_forward(x, a, cfg, nullptr, true), want), 1e-6);
}

TEST(Attention, RowSlicedQueriesEqualFullRows) {
  TransformerConfig cfg;
  const auto w = init_weights(cfg, 11);
  const auto x = random_tensor(16, cfg.d_model, 12);
  const auto& a = w.layers[0].attn;
  const auto q = matmul(x, a.wq), k = matmul(x, a.wk), v = matmul(x, a.wv);
  const auto full = attention_core(q, k, v, cfg.n_heads, 0, true);
  const auto part = attention_core(matmul(x.slice_rows(8, 16), a.wq), k, v, cfg.n_heads, 8, true);
  EXPECT_EQ(part, full.slice_rows(8, 16));
}

TEST(Attention, CacheMismatchThrows) {
  TransformerConfig cfg;
  const auto w = init_weights(cfg, 13);
  LayerCache cache{Tensor::zeros(2, 8), Tensor::zeros(2, 8)};
  EXPECT_THROW(attention_forward(random_tensor(1, cfg.d_model, 1), w.layers[0].attn, cfg, &cache, true),
               ConfigError);
}

TEST(KVCache, DecodeStepMatchesRecompute) {
  TransformerConfig cfg;
  const auto w = init_weights(cfg, 14);
  const auto tokens = tokens_for(12, 15, cfg.vocab_size);
  KVCache cache(cfg.n_layers);
  transformer_forward({tokens.begin(), tokens.end() - 1}, w, cfg, &cache);
  EXPECT_EQ(cache.context_len, 11u);
  const auto step = transformer_forward({tokens.back()}, w, cfg, &cache);
  EXPECT_EQ(cache.context_len, 12u);
  const auto full = transformer_forward(tokens, w, cfg);
  EXPECT_LE(max_relative_error(step, full.slice_rows(11, 12)), 1e-5);
}

TEST(KVCache, GreedyDecodeIdenticalWithAndWithoutCache) {
  TransformerConfig cfg;
  const auto w = init_weights(cfg, 16);
  for (std::size_t len : {1u, 8u, 32u, 64u}) {
    const auto prompt = tokens_for(len, len, cfg.vocab_size);
    EXPECT_EQ(greedy_generate(prompt, 6, w, cfg, true), greedy_generate(prompt, 6, w, cfg, false)) << len;
  }
}

TEST(Transformer, ZeroBlockWeightsPassResidualThrough) {
  TransformerConfig cfg;
  const auto w = zero_weights(cfg);
  const auto x = random_tensor(5, cfg.d_model, 17);
  EXPECT_EQ(transformer_hidden(x, w, cfg, nullptr, true), x);
}

TEST(Transformer, DeterministicGivenSeed) {
  TransformerConfig cfg;
  const auto tokens = tokens_for(16, 18, cfg.vocab_size);
  EXPECT_EQ(transformer_forward(tokens, init_weights(cfg, 3), cfg),
            transformer_forward(tokens, init_weights(cfg, 3), cfg));
  EXPECT_NE(transformer_forward(tokens, init_weights(cfg, 3), cfg),
            transformer_forward(tokens, init_weights(cfg, 4), cfg));
}

TEST(Transformer, WeightsInRange) {
  TransformerConfig cfg;
  const auto w = init_weights(cfg, 19);
  for (float v : w.layers[1].w2.data()) {
    EXPECT_GE(v, -0.1f);
    EXPECT_LE(v, 0.1f);
  }
}

TEST(Transformer, NonCausalPermutationEquivariance) {
  TransformerConfig cfg;
  const auto w = init_weights(cfg, 20);
  const auto x = random_tensor(8, cfg.d_model, 21);
  const std::vector<std::size_t> perm{3, 0, 7, 1, 6, 2, 5, 4};
  Tensor px = Tensor::zeros(8, cfg.d_model);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < cfg.d_model; ++j) px.at(i, j) = x.at(perm[i], j);
  const auto y = transformer_hidden(x, w, cfg, nullptr, false);
  const auto py = transformer_hidden(px, w, cfg, nullptr, false);
  for (std::size_t i = 0; i < 8; ++i)
    EXPECT_LE(max_relative_error(py.slice_rows(i, i + 1), y.slice_rows(perm[i], perm[i] + 1)), 1e-5);
}

TEST(Transformer, CausalMaskHidesFuturePositions) {
  TransformerConfig cfg;
  const auto w = init_weights(cfg, 22);
  auto a = tokens_for(16, 23, cfg.vocab_size);
  auto b = a;
  for (std::size_t t = 0; t + 1 < a.size(); ++t) {
    b = a;
    b[t + 1] = (a[t + 1] + 1) % static_cast<int>(cfg.vocab_size);
    const auto ha = transformer_hidden(embed(a, w), w, cfg, nullptr, true);
    const auto hb = transformer_hidden(embed(b, w), w, cfg, nullptr, true);
    EXPECT_EQ(ha.slice_rows(0, t + 1), hb.slice_rows(0, t + 1)) << t;
  }
}

TEST(Transformer, InvalidConfigRejected) {
  TransformerConfig cfg;
  cfg.n_heads = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TransformerConfig{};
  cfg.d_ff = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Transformer, OutOfVocabularyTokenRejected) {
  TransformerConfig cfg;
  const auto w = init_weights(cfg, 1);
  EXPECT_THROW(transformer_forward({0, 500}, w, cfg), ConfigError);
}
