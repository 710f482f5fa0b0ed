#pragma once

#include <cstdint>
#include <string>

#include "fusionact/model.hpp"

namespace fusionact {

// On-disk model format, little-endian on every platform:
//
//   bytes 0..3   magic "FACT"
//   bytes 4..7   format version, u32
//   bytes 8..11  manifest length in bytes, u32
//   ...          manifest: compact JSON (dataset, class order, block specs,
//                guidance spec, normalization stats, config echo, and the
//                parameter name/shape list)
//   ...          one f32 array per parameter, in manifest order, to exactly
//                the end of the file
//
// Parameters are stored at 32-bit precision; save -> load -> save is
// byte-identical because re-quantizing an f32-exact value is lossless.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const FusionModel& m, const std::string& path);

// Throws CheckpointError on bad magic, unsupported version, malformed or
// inconsistent manifest, or a blob section whose size does not match it.
FusionModel load_checkpoint(const std::string& path);

// The manifest as indented JSON, for human inspection.
std::string checkpoint_manifest(const FusionModel& m);

}  // namespace fusionact
