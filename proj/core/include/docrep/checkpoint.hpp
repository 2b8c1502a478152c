#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "docrep/model.hpp"
#include "docrep/optim.hpp"

namespace docrep {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint32_t version = kCheckpointVersion;
  /// "single" or "double".
  std::string precision;
  nlohmann::json model_config;
  nlohmann::json extra;
  int step = 0;
  std::uint64_t seed = 0;
  bool has_optimizer = false;
};

template <typename T>
std::string precision_name();

/// Writes parameters, optional optimizer moments and metadata to one file
/// with a CRC-32 over the payload. The file is replaced atomically.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const DocumentModel<T>& model, const AdamW<T>* optimizer, int step,
                     std::uint64_t seed, const nlohmann::json& extra = {});

/// Verifies the header, checksum, precision and model configuration before
/// touching the model; on any error the model is unchanged.
template <typename T>
CheckpointMeta load_checkpoint(const std::filesystem::path& path, DocumentModel<T>& model, AdamW<T>* optimizer = nullptr);

/// Header and metadata only (still verifies integrity).
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

}  // namespace docrep
