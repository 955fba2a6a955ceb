#pragma once

#include <cstddef>
#include <string>

#include "json.hpp"

namespace idpt {

inline constexpr std::size_t kMaxSourceCap = 512;
inline constexpr std::size_t kMaxTargetCap = 256;

struct ModelConfig {
  std::size_t vocab_size = 8000;
  std::size_t d_model = 128;
  std::size_t num_heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t feedforward_dim = 512;
  std::size_t max_src_len = kMaxSourceCap;
  std::size_t max_tgt_len = kMaxTargetCap;
  double dropout = 0.0;
  // Width of the last-decoder-state classification head; 0 disables it.
  std::size_t num_classes = 0;

  // Throws InvalidArgument on a broken invariant.
  void validate() const;
  std::size_t head_dim() const { return d_model / num_heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace idpt
