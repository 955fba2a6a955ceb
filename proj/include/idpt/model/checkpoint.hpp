#pragma once

#include <filesystem>

#include "idpt/model/seq2seq.hpp"

namespace idpt {

// Binary checkpoint, little-endian:
//   "IDPTCKPT" | u32 version | u32 scalar bytes (4 or 8) | u32 n + n bytes of
//   model-config JSON | u32 section count | per section: u32 n + name,
//   u32 group, u64 rows, u64 cols, rows*cols scalars (column-major).
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
void save_checkpoint(const Seq2SeqModel<Scalar>& model, const std::filesystem::path& path);

// Reads a checkpoint of either scalar width into a model of `Scalar`.
// Throws FormatError on a bad magic, version, or section mismatch.
template <typename Scalar>
Seq2SeqModel<Scalar> load_checkpoint(const std::filesystem::path& path);

ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace idpt
