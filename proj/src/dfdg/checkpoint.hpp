#pragma once

#include <filesystem>

#include "dfdg/params.hpp"

namespace dfdg {

/// Named-array archive: "DFDGCKPT", u32 schema version, u64 header length,
/// a JSON header (architecture spec, array names, shapes, kinds), then every
/// array's values as little-endian float32 in header order.
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& params);
ParameterSet<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace dfdg
