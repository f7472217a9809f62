#include "dinf/tensor/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dinf/sim/errors.hpp"
#include "json.hpp"

namespace dinf::tensor {

namespace {

using nlohmann::json;

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  return std::filesystem::path(prefix.string() + suffix);
}

std::vector<std::pair<std::string, Tensor*>> named(ModelWeights& w) {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("embedding", &w.embedding);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto p = "layers." + std::to_string(l) + ".";
    auto& lw = w.layers[l];
    out.emplace_back(p + "wq", &lw.attn.wq);
    out.emplace_back(p + "wk", &lw.attn.wk);
    out.emplace_back(p + "wv", &lw.attn.wv);
    out.emplace_back(p + "wo", &lw.attn.wo);
    out.emplace_back(p + "w1", &lw.w1);
    out.emplace_back(p + "w2", &lw.w2);
  }
  out.emplace_back("lm_head", &w.lm_head);
  return out;
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

}  // namespace

void save_weights(const std::filesystem::path& prefix, const TransformerConfig& config,
                  const ModelWeights& weights) {
  auto copy = weights;
  json manifest;
  manifest["format"] = "float32-le";
  manifest["config"] = {{"n_layers", config.n_layers}, {"d_model", config.d_model},
                        {"n_heads", config.n_heads},   {"d_ff", config.d_ff},
                        {"vocab_size", config.vocab_size}, {"max_seq", config.max_seq}};
  manifest["tensors"] = json::array();

  std::ofstream bin(with_suffix(prefix, ".bin"), std::ios::binary);
  if (!bin) throw ConfigError("cannot write " + with_suffix(prefix, ".bin").string());
  std::uint64_t offset = 0;
  for (auto& [name, t] : named(copy)) {
    manifest["tensors"].push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
    for (float f : t->data()) {
      const std::uint32_t word = to_le(std::bit_cast<std::uint32_t>(f));
      bin.write(reinterpret_cast<const char*>(&word), sizeof(word));
    }
    offset += t->size() * sizeof(float);
  }
  std::ofstream mf(with_suffix(prefix, ".manifest.json"));
  if (!mf) throw ConfigError("cannot write " + with_suffix(prefix, ".manifest.json").string());
  mf << manifest.dump(2) << "\n";
}

ModelWeights load_weights(const std::filesystem::path& prefix, TransformerConfig* config_out) {
  std::ifstream mf(with_suffix(prefix, ".manifest.json"));
  if (!mf) throw ConfigError("cannot read " + with_suffix(prefix, ".manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("weight manifest: ") + e.what());
  }
  TransformerConfig cfg;
  const auto& c = manifest.at("config");
  cfg.n_layers = c.at("n_layers");
  cfg.d_model = c.at("d_model");
  cfg.n_heads = c.at("n_heads");
  cfg.d_ff = c.at("d_ff");
  cfg.vocab_size = c.at("vocab_size");
  cfg.max_seq = c.at("max_seq");
  cfg.validate();

  std::ifstream bin(with_suffix(prefix, ".bin"), std::ios::binary);
  if (!bin) throw ConfigError("cannot read " + with_suffix(prefix, ".bin").string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  ModelWeights w = zero_weights(cfg);
  auto slots = named(w);
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != slots.size()) throw ConfigError("weight manifest: tensor count mismatch");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& entry = tensors[i];
    auto& [name, t] = slots[i];
    if (entry.at("name").get<std::string>() != name) throw ConfigError("weight manifest: unexpected tensor " + entry.at("name").get<std::string>());
    if (entry.at("shape").get<std::vector<std::size_t>>() != t->shape()) {
      throw ConfigError("weight manifest: shape mismatch for " + name);
    }
    const auto offset = entry.at("offset").get<std::uint64_t>();
    if (offset + t->size() * sizeof(float) > bytes.size()) {
      throw ConfigError("weight binary truncated at " + name);
    }
    for (std::size_t k = 0; k < t->size(); ++k) {
      std::uint32_t word = 0;
      std::memcpy(&word, bytes.data() + offset + k * sizeof(float), sizeof(word));
      t->data()[k] = std::bit_cast<float>(to_le(word));
    }
  }
  if (config_out) *config_out = cfg;
  return w;
}

}  // namespace dinf::tensor
