#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "surealm/model.hpp"

namespace surealm {

// Binary checkpoint, little-endian:
//   "SULM" | u32 version |
//   d_model, n_layers, n_heads, d_ff, d_enc, max_seq_len, vocab_size (u32), init_seed u64 |
//   u64 parameter count | parameters f64 in layout order
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace surealm
