#pragma once

#include <cstdint>
#include <string>

#include "esbnn/arch.hpp"
#include "esbnn/model.hpp"

namespace esbnn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian layout:
///   "ESBN" | u32 version | u64 arch fingerprint | u64 len + arch text
///   | u32 count | count x (u32 len + name, u64 n + n x f32) | u32 CRC-32 of all preceding bytes
void save_checkpoint(const Model& model, const std::string& path);

/// Rebuilds the model from the embedded architecture. Throws IoError,
/// VersionMismatch or ChecksumMismatch (also for truncated files).
Model load_checkpoint(const std::string& path);

/// As above, and throws ArchFingerprintMismatch unless the file was written for `expected`.
Model load_checkpoint(const std::string& path, const ArchSpec& expected);

}  // namespace esbnn
