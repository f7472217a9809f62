#pragma once

#include <filesystem>

#include "dinf/tensor/transformer.hpp"

namespace dinf::tensor {

// Writes <prefix>.bin (all tensors as flat little-endian float32, in manifest
// order) and <prefix>.manifest.json (config plus name/shape/offset per tensor).
void save_weights(const std::filesystem::path& prefix, const TransformerConfig& config,
                  const ModelWeights& weights);

// Inverse of save_weights. Throws ConfigError when the manifest and binary disagree.
ModelWeights load_weights(const std::filesystem::path& prefix, TransformerConfig* config_out = nullptr);

}  // namespace dinf::tensor
